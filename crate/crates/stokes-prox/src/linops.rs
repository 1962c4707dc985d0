//! Linear operators of the inverse problem: discrete gradient, PSF
//! convolution, the full measurement map with its adjoint, and power-iteration
//! operator-norm estimation.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::fft2;
use crate::tensor::{ChannelStack, DataCube, RngStream};

/// Forward differences of one plane: horizontal (dx) and vertical (dy)
/// fields, each H×W with zeros in the last column / row.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub dx: Array2<f64>,
    pub dy: Array2<f64>,
}

impl GradientField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            dx: Array2::zeros((h, w)),
            dy: Array2::zeros((h, w)),
        }
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        let a: f64 = self.dx.iter().zip(other.dx.iter()).map(|(x, y)| x * y).sum();
        let b: f64 = self.dy.iter().zip(other.dy.iter()).map(|(x, y)| x * y).sum();
        a + b
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

/// Dual variables: one gradient-shaped block per image channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStack {
    pub blocks: Vec<GradientField>,
}

impl DualStack {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        Self {
            blocks: (0..channels).map(|_| GradientField::zeros(h, w)).collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.dx.iter().chain(b.dy.iter()).all(|v| v.is_finite()))
    }
}

/// Forward differences with Neumann boundary: dx[i,j] = x[i,j+1] - x[i,j]
/// (zero in the last column), dy[i,j] = x[i+1,j] - x[i,j] (zero in the last
/// row).
pub fn grad_forward(plane: &Array2<f64>) -> GradientField {
    let (h, w) = plane.dim();
    let mut dx = Array2::zeros((h, w));
    let mut dy = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            if j + 1 < w {
                dx[[i, j]] = plane[[i, j + 1]] - plane[[i, j]];
            }
            if i + 1 < h {
                dy[[i, j]] = plane[[i + 1, j]] - plane[[i, j]];
            }
        }
    }
    GradientField { dx, dy }
}

/// Exact adjoint of `grad_forward` (negative divergence with matching
/// boundary). Entries of the field in the zeroed last column / row are
/// ignored, as the forward map never writes them.
pub fn grad_adjoint(field: &GradientField) -> Array2<f64> {
    let (h, w) = field.dx.dim();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut v = 0.0;
            if j + 1 < w {
                v -= field.dx[[i, j]];
            }
            if j > 0 {
                v += field.dx[[i, j - 1]];
            }
            if i + 1 < h {
                v -= field.dy[[i, j]];
            }
            if i > 0 {
                v += field.dy[[i - 1, j]];
            }
            out[[i, j]] = v;
        }
    }
    out
}

/// Applies `grad_forward` to every channel.
pub fn grad_stack(x: &ChannelStack) -> DualStack {
    DualStack {
        blocks: x.planes().iter().map(grad_forward).collect(),
    }
}

/// Applies `grad_adjoint` to every block.
pub fn grad_adjoint_stack(y: &DualStack) -> ChannelStack {
    ChannelStack::from_planes(y.blocks.iter().map(grad_adjoint).collect())
}

/// Normalized, nonnegative blur kernel with its frequency-domain transfer
/// function cached after first use. The kernel origin sits at (H/2, W/2).
#[derive(Debug)]
pub struct PsfKernel {
    plane: Array2<f64>,
    transfer: OnceLock<Vec<Complex<f64>>>,
}

impl Clone for PsfKernel {
    fn clone(&self) -> Self {
        Self {
            plane: self.plane.clone(),
            transfer: OnceLock::new(),
        }
    }
}

impl PsfKernel {
    pub fn new(plane: Array2<f64>) -> Result<Self> {
        if plane.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter("psf entries must be finite and nonnegative".into()));
        }
        let sum: f64 = plane.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("psf must sum to 1 within 1e-12 (got {sum})")));
        }
        Ok(Self {
            plane,
            transfer: OnceLock::new(),
        })
    }

    pub fn plane(&self) -> &Array2<f64> {
        &self.plane
    }

    pub fn height(&self) -> usize {
        self.plane.nrows()
    }

    pub fn width(&self) -> usize {
        self.plane.ncols()
    }

    fn transfer(&self) -> &[Complex<f64>] {
        self.transfer.get_or_init(|| {
            let (h, w) = self.plane.dim();
            // Shift so the kernel center (h/2, w/2) becomes the origin.
            let mut buf = vec![Complex::new(0.0, 0.0); h * w];
            for i in 0..h {
                for j in 0..w {
                    let si = (i + h / 2) % h;
                    let sj = (j + w / 2) % w;
                    buf[i * w + j] = Complex::new(self.plane[[si, sj]], 0.0);
                }
            }
            fft2(&mut buf, h, w, false);
            buf
        })
    }
}

/// Circular convolution of a plane with the PSF via the frequency domain.
/// With `adjoint` set, the conjugate transfer function is applied
/// (correlation).
pub fn convolve(plane: &Array2<f64>, psf: &PsfKernel, adjoint: bool) -> Result<Array2<f64>> {
    let (h, w) = plane.dim();
    if (h, w) != psf.plane.dim() {
        return Err(Error::Dimension(format!(
            "plane shape {:?} != psf shape {:?}",
            plane.dim(),
            psf.plane.dim()
        )));
    }
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|v| Complex::new(*v, 0.0)).collect();
    fft2(&mut buf, h, w, false);
    for (v, t) in buf.iter_mut().zip(psf.transfer()) {
        *v *= if adjoint { t.conj() } else { *t };
    }
    fft2(&mut buf, h, w, true);
    let out = Array2::from_shape_vec((h, w), buf.into_iter().map(|c| c.re).collect()).unwrap();
    Ok(out)
}

/// The measurement map for a fixed kernel and modulation schedule: channel
/// stack -> K frames of [left beam; right beam] vectors, and its adjoint.
///
/// Building one `MeasureOp` up front keeps the kernel transfer cached across
/// solver iterations.
pub struct MeasureOp {
    kernel: PsfKernel,
    schedule: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MeasureOp {
    pub fn new(kernel: PsfKernel, schedule: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::Config("empty modulation schedule".into()));
        }
        let channels = schedule[0].0.len();
        for (k, (v1, v2)) in schedule.iter().enumerate() {
            if v1.len() != channels || v2.len() != channels {
                return Err(Error::Config(format!(
                    "schedule entry {k} has inconsistent coefficient length"
                )));
            }
        }
        Ok(Self { kernel, schedule })
    }

    pub fn for_cube(cube: &DataCube) -> Result<Self> {
        Self::new(PsfKernel::new(cube.psf_plane().clone())?, cube.schedule())
    }

    pub fn channels(&self) -> usize {
        self.schedule[0].0.len()
    }

    pub fn frame_count(&self) -> usize {
        self.schedule.len()
    }

    /// Noiseless frame means: frame k stacks Σ_ℓ v¹_{k,ℓ} A x_ℓ over
    /// Σ_ℓ v²_{k,ℓ} A x_ℓ.
    pub fn forward(&self, x: &ChannelStack) -> Result<Vec<Array1<f64>>> {
        if x.channels() != self.channels() {
            return Err(Error::Config(format!(
                "stack has {} channels but schedule addresses {}",
                x.channels(),
                self.channels()
            )));
        }
        if (x.height(), x.width()) != self.kernel.plane.dim() {
            return Err(Error::Dimension(format!(
                "stack shape ({}, {}) != psf shape {:?}",
                x.height(),
                x.width(),
                self.kernel.plane.dim()
            )));
        }
        let blurred: Vec<Vec<f64>> = x
            .planes()
            .iter()
            .map(|p| convolve(p, &self.kernel, false).map(|a| a.into_raw_vec()))
            .collect::<Result<_>>()?;
        let n = x.pixel_count();
        let frames: Vec<Array1<f64>> = self
            .schedule
            .par_iter()
            .map(|(v1, v2)| {
                let mut frame = Array1::zeros(2 * n);
                for (l, b) in blurred.iter().enumerate() {
                    let (c1, c2) = (v1[l], v2[l]);
                    for (p, bv) in b.iter().enumerate() {
                        frame[p] += c1 * bv;
                        frame[n + p] += c2 * bv;
                    }
                }
                frame
            })
            .collect();
        Ok(frames)
    }

    /// Exact adjoint of `forward`: channel ℓ receives
    /// Σ_k Aᵀ(v¹_{k,ℓ}·left_k + v²_{k,ℓ}·right_k).
    ///
    /// Per-frame contributions are accumulated in fixed frame order so the
    /// result is bit-stable regardless of thread count.
    pub fn adjoint(&self, frames: &[Array1<f64>], h: usize, w: usize) -> Result<ChannelStack> {
        if frames.len() != self.schedule.len() {
            return Err(Error::Dimension(format!(
                "{} frames supplied, schedule has {}",
                frames.len(),
                self.schedule.len()
            )));
        }
        let n = h * w;
        for (k, f) in frames.iter().enumerate() {
            if f.len() != 2 * n {
                return Err(Error::Dimension(format!(
                    "frame {k} length {} != 2N = {}",
                    f.len(),
                    2 * n
                )));
            }
        }
        let channels = self.channels();
        let mut acc = vec![Array2::<f64>::zeros((h, w)); channels];
        for (frame, (v1, v2)) in frames.iter().zip(&self.schedule) {
            for l in 0..channels {
                let (c1, c2) = (v1[l], v2[l]);
                let plane = acc[l].as_slice_mut().unwrap();
                for p in 0..n {
                    plane[p] += c1 * frame[p] + c2 * frame[n + p];
                }
            }
        }
        let planes = acc
            .into_iter()
            .map(|p| convolve(&p, &self.kernel, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelStack::from_planes(planes))
    }
}

/// One-shot measurement of a stack against a cube's kernel and schedule.
pub fn measure(x: &ChannelStack, cube: &DataCube) -> Result<Vec<Array1<f64>>> {
    MeasureOp::for_cube(cube)?.forward(x)
}

/// One-shot adjoint measurement.
pub fn measure_adjoint(frames: &[Array1<f64>], cube: &DataCube) -> Result<ChannelStack> {
    MeasureOp::for_cube(cube)?.adjoint(frames, cube.height(), cube.width())
}

/// Abstract linear map on flat vectors, with adjoint, for norm estimation.
pub trait LinearOperator {
    fn domain_dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// Power-iteration estimate of the largest singular value.
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    /// Rayleigh-quotient estimate; a lower bound on the true norm by
    /// construction.
    pub value: f64,
    pub last_rel_change: f64,
    pub iterations: usize,
}

/// Estimates ‖op‖ by power iteration on opᵀop. Stops when the relative
/// change of the estimate drops below `tol` or after `max_iterations`.
pub fn norm_power(
    op: &dyn LinearOperator,
    max_iterations: usize,
    tol: f64,
    rng: &mut RngStream,
) -> Result<NormEstimate> {
    let n = op.domain_dim();
    let mut v = vec![0.0; n];
    let mut norm_v = 0.0;
    for attempt in 0..4 {
        for x in v.iter_mut() {
            *x = rng.next_gaussian();
        }
        norm_v = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm_v > 0.0 {
            break;
        }
        if attempt == 3 {
            return Err(Error::Parameter(
                "power iteration could not draw a nonzero start vector".into(),
            ));
        }
    }
    for x in v.iter_mut() {
        *x /= norm_v;
    }
    let mut estimate = 0.0_f64;
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;
    for t in 0..max_iterations {
        let w = op.apply_adjoint(&op.apply(&v));
        // vᵀ(AᵀA)v with ‖v‖ = 1 lower-bounds ‖A‖².
        let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let new_estimate = rayleigh.max(0.0).sqrt();
        rel_change = (new_estimate - estimate).abs() / new_estimate.max(f64::MIN_POSITIVE);
        estimate = new_estimate;
        iterations = t + 1;
        let norm_w = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm_w == 0.0 {
            // Operator annihilates the current vector; the estimate is exact.
            rel_change = 0.0;
            break;
        }
        v = w.into_iter().map(|x| x / norm_w).collect();
        if rel_change < tol {
            break;
        }
    }
    Ok(NormEstimate {
        value: estimate,
        last_rel_change: rel_change,
        iterations,
    })
}

/// The per-plane discrete gradient as a flat-vector operator (domain N,
/// range 2N).
pub struct GradOperator {
    pub height: usize,
    pub width: usize,
}

impl LinearOperator for GradOperator {
    fn domain_dim(&self) -> usize {
        self.height * self.width
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let plane = Array2::from_shape_vec((self.height, self.width), x.to_vec()).unwrap();
        let g = grad_forward(&plane);
        let mut out = Vec::with_capacity(2 * x.len());
        out.extend(g.dx.iter().copied());
        out.extend(g.dy.iter().copied());
        out
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let n = self.height * self.width;
        let dx = Array2::from_shape_vec((self.height, self.width), y[..n].to_vec()).unwrap();
        let dy = Array2::from_shape_vec((self.height, self.width), y[n..].to_vec()).unwrap();
        grad_adjoint(&GradientField { dx, dy }).into_raw_vec()
    }
}

/// ‖∇‖ for an H×W grid, shared by every channel block of D.
pub fn grad_norm(height: usize, width: usize, rng: &mut RngStream) -> Result<f64> {
    let est = norm_power(&GradOperator { height, width }, 200, 1e-9, rng)?;
    Ok(est.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_plane(rng: &mut RngStream, h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_vec((h, w), rng.gaussian_draws(h * w)).unwrap()
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let g = grad_forward(&Array2::from_elem((5, 7), 3.25));
        assert!(g.dx.iter().all(|v| *v == 0.0));
        assert!(g.dy.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_1x2_definition() {
        let g = grad_forward(&array![[1.0, 4.0]]);
        assert_eq!(g.dx, array![[3.0, 0.0]]);
        assert_eq!(g.dy, array![[0.0, 0.0]]);
    }

    #[test]
    fn grad_adjoint_zero_field() {
        let out = grad_adjoint(&GradientField::zeros(3, 3));
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_adjoint_1x2_transpose() {
        let field = GradientField {
            dx: array![[1.0, 0.0]],
            dy: array![[0.0, 0.0]],
        };
        assert_eq!(grad_adjoint(&field), array![[-1.0, 1.0]]);
    }

    #[test]
    fn grad_adjoint_identity_random() {
        let mut rng = RngStream::new(11);
        for _ in 0..20 {
            let x = random_plane(&mut rng, 5, 5);
            let y = GradientField {
                dx: random_plane(&mut rng, 5, 5),
                dy: random_plane(&mut rng, 5, 5),
            };
            let lhs = grad_forward(&x).dot(&y);
            let rhs: f64 = x.iter().zip(grad_adjoint(&y).iter()).map(|(a, b)| a * b).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!((lhs - rhs).abs() / scale < 1e-12);
        }
    }

    fn delta_psf(h: usize, w: usize) -> PsfKernel {
        let mut plane = Array2::zeros((h, w));
        plane[[h / 2, w / 2]] = 1.0;
        PsfKernel::new(plane).unwrap()
    }

    #[test]
    fn convolve_delta_is_identity() {
        let mut rng = RngStream::new(3);
        let x = random_plane(&mut rng, 8, 8);
        let y = convolve(&x, &delta_psf(8, 8), false).unwrap();
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_constant_unit_gain() {
        let psf = {
            let mut p = Array2::zeros((6, 6));
            p[[3, 3]] = 0.5;
            p[[3, 4]] = 0.25;
            p[[2, 3]] = 0.25;
            PsfKernel::new(p).unwrap()
        };
        let x = Array2::from_elem((6, 6), 2.5);
        let y = convolve(&x, &psf, false).unwrap();
        for v in y.iter() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_shape_mismatch_errors() {
        let x = Array2::zeros((4, 4));
        assert!(matches!(
            convolve(&x, &delta_psf(8, 8), false),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn convolve_adjoint_identity() {
        let mut rng = RngStream::new(5);
        let psf = crate::simkit::gaussian_psf(8, 8, 2.0).unwrap();
        for _ in 0..20 {
            let x = random_plane(&mut rng, 8, 8);
            let y = random_plane(&mut rng, 8, 8);
            let ax: f64 = convolve(&x, &psf, false)
                .unwrap()
                .iter()
                .zip(y.iter())
                .map(|(a, b)| a * b)
                .sum();
            let aty: f64 = x
                .iter()
                .zip(convolve(&y, &psf, true).unwrap().iter())
                .map(|(a, b)| a * b)
                .sum();
            let scale = ax.abs().max(aty.abs()).max(1.0);
            assert!((ax - aty).abs() / scale < 1e-11);
        }
    }

    fn test_cube(h: usize, w: usize, k: usize, seed: u64) -> DataCube {
        let truth = ChannelStack::zeros(3, h, w);
        let psf = crate::simkit::gaussian_psf(h, w, 2.0).unwrap();
        let mut schedule = crate::simkit::dpi_schedule(k.div_ceil(4) * 4).unwrap();
        schedule.pairs.truncate(k);
        crate::simkit::synthesize_with_schedule(&truth, &schedule, &psf, 1.0, seed, false).unwrap()
    }

    #[test]
    fn measure_zero_stack() {
        let cube = test_cube(8, 8, 4, 1);
        let frames = measure(&ChannelStack::zeros(3, 8, 8), &cube).unwrap();
        assert!(frames.iter().all(|f| f.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn measure_delta_psf_hand_evaluation() {
        // v1 = (1/2, 1/2, 0), v2 = (1/2, -1/2, 0): left = (I+Q)/2, right = (I-Q)/2.
        let n = 4 * 4;
        let frame = DataFrameBuilder::unit(n, vec![0.5, 0.5, 0.0], vec![0.5, -0.5, 0.0]);
        let mut psf = Array2::zeros((4, 4));
        psf[[2, 2]] = 1.0;
        let cube = DataCube::new(vec![frame], psf, 0.0, 0).unwrap();
        let mut rng = RngStream::new(9);
        let stack = ChannelStack::new(vec![
            random_plane(&mut rng, 4, 4),
            random_plane(&mut rng, 4, 4),
            random_plane(&mut rng, 4, 4),
        ])
        .unwrap();
        let frames = measure(&stack, &cube).unwrap();
        let i = stack.plane(0);
        let q = stack.plane(1);
        for p in 0..n {
            let (r, c) = (p / 4, p % 4);
            assert!((frames[0][p] - 0.5 * (i[[r, c]] + q[[r, c]])).abs() < 1e-12);
            assert!((frames[0][n + p] - 0.5 * (i[[r, c]] - q[[r, c]])).abs() < 1e-12);
        }
    }

    struct DataFrameBuilder;
    impl DataFrameBuilder {
        fn unit(n: usize, v1: Vec<f64>, v2: Vec<f64>) -> crate::tensor::DataFrame {
            crate::tensor::DataFrame::new(
                Array1::zeros(2 * n),
                Array1::from_elem(2 * n, 1.0),
                v1,
                v2,
            )
            .unwrap()
        }
    }

    #[test]
    fn measure_homogeneity() {
        let cube = test_cube(8, 8, 4, 2);
        let mut rng = RngStream::new(21);
        let x = ChannelStack::new(vec![
            random_plane(&mut rng, 8, 8),
            random_plane(&mut rng, 8, 8),
            random_plane(&mut rng, 8, 8),
        ])
        .unwrap();
        let f1 = measure(&x, &cube).unwrap();
        let f2 = measure(&x.scale(2.0), &cube).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((2.0 * u - v).abs() < 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn measure_channel_mismatch_errors() {
        let cube = test_cube(8, 8, 4, 3);
        let x = ChannelStack::zeros(2, 8, 8);
        assert!(matches!(measure(&x, &cube), Err(Error::Config(_))));
    }

    #[test]
    fn measure_adjoint_zero_frames() {
        let cube = test_cube(8, 8, 4, 4);
        let frames = vec![Array1::zeros(2 * 64); 4];
        let x = measure_adjoint(&frames, &cube).unwrap();
        assert_eq!(x.norm_sq(), 0.0);
    }

    #[test]
    fn measure_adjoint_identity() {
        let cube = test_cube(8, 8, 3, 5);
        let mut rng = RngStream::new(33);
        for _ in 0..20 {
            let x = ChannelStack::new(vec![
                random_plane(&mut rng, 8, 8),
                random_plane(&mut rng, 8, 8),
                random_plane(&mut rng, 8, 8),
            ])
            .unwrap();
            let u: Vec<Array1<f64>> = (0..3)
                .map(|_| Array1::from_vec(rng.gaussian_draws(2 * 64)))
                .collect();
            let mx = measure(&x, &cube).unwrap();
            let lhs: f64 = mx
                .iter()
                .zip(&u)
                .map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| p * q).sum::<f64>())
                .sum();
            let rhs = x.dot(&measure_adjoint(&u, &cube).unwrap());
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!((lhs - rhs).abs() / scale < 1e-11);
        }
    }

    #[test]
    fn measure_adjoint_column_extraction() {
        // K = 1, delta psf, v1 = (1,0,0), v2 = 0, left frame = e_5:
        // adjoint puts e_5 into the I channel and zeros elsewhere.
        let n = 16;
        let frame = DataFrameBuilder::unit(n, vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]);
        let mut psf = Array2::zeros((4, 4));
        psf[[2, 2]] = 1.0;
        let cube = DataCube::new(vec![frame], psf, 0.0, 0).unwrap();
        let mut e = Array1::zeros(2 * n);
        e[5] = 1.0;
        let x = measure_adjoint(&[e], &cube).unwrap();
        for p in 0..n {
            let expected = if p == 5 { 1.0 } else { 0.0 };
            assert!((x.plane(0)[[p / 4, p % 4]] - expected).abs() < 1e-12);
        }
        assert_eq!(x.plane(1).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        assert_eq!(x.plane(2).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    struct IdentityOp(usize);
    impl LinearOperator for IdentityOp {
        fn domain_dim(&self) -> usize {
            self.0
        }
        fn apply(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
        fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
            y.to_vec()
        }
    }

    /// 1D periodic forward difference, x -> (x_{i+1 mod n} - x_i).
    struct CirculantDiff(usize);
    impl LinearOperator for CirculantDiff {
        fn domain_dim(&self) -> usize {
            self.0
        }
        fn apply(&self, x: &[f64]) -> Vec<f64> {
            (0..self.0).map(|i| x[(i + 1) % self.0] - x[i]).collect()
        }
        fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
            (0..self.0)
                .map(|i| y[(i + self.0 - 1) % self.0] - y[i])
                .collect()
        }
    }

    #[test]
    fn norm_power_identity() {
        let mut rng = RngStream::new(77);
        let est = norm_power(&IdentityOp(25), 200, 1e-12, &mut rng).unwrap();
        assert!((est.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn norm_power_circulant_diff() {
        // Singular values of the 4x4 circulant difference are |e^{iw} - 1|,
        // maximized at w = pi: value 2.
        let mut rng = RngStream::new(78);
        let est = norm_power(&CirculantDiff(4), 500, 1e-12, &mut rng).unwrap();
        assert!((est.value - 2.0).abs() < 1e-8, "got {}", est.value);
    }

    #[test]
    fn norm_power_grad_16x16() {
        // Largest eigenvalue of the Neumann Laplacian on a 16-grid is
        // 8 sin^2(15 pi / 32) per axis pair; frozen from the explicit matrix.
        let expected = (8.0_f64).sqrt() * (15.0 * std::f64::consts::PI / 32.0).sin();
        let mut rng = RngStream::new(79);
        let est = norm_power(&GradOperator { height: 16, width: 16 }, 2000, 1e-13, &mut rng).unwrap();
        assert!(est.value > 2.79 && est.value <= 8.0_f64.sqrt() + 1e-9, "got {}", est.value);
        assert!((est.value - expected).abs() < 1e-4, "got {} expected {}", est.value, expected);
    }

    proptest! {
        #[test]
        fn grad_norm_below_sqrt8(h in 2usize..12, w in 2usize..12, seed in 0u64..1000) {
            let mut rng = RngStream::new(seed);
            let v = grad_norm(h, w, &mut rng).unwrap();
            prop_assert!(v <= 8.0_f64.sqrt() + 1e-9);
        }
    }
}
