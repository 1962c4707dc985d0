//! Internal 2D FFT helpers on top of rustfft. Plans are cached per thread.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let direction = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                FftPlanner::new().plan_fft(len, direction)
            })
            .clone()
    })
}

/// In-place 2D FFT of a row-major h×w complex buffer. The inverse transform
/// includes the 1/(h·w) normalization.
pub(crate) fn fft2(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    assert_eq!(data.len(), h * w);
    let row_plan = plan(w, inverse);
    for row in data.chunks_exact_mut(w) {
        row_plan.process(row);
    }
    let col_plan = plan(h, inverse);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = data[i * w + j];
        }
        col_plan.process(&mut col);
        for i in 0..h {
            data[i * w + j] = col[i];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}
