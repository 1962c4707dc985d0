//! Synthetic data generation: ground-truth phantom, the four-state
//! modulation schedule, a Gaussian PSF, and noisy cube synthesis following
//! the direct model.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{MeasureOp, PsfKernel};
use crate::tensor::{ChannelStack, DataCube, DataFrame, RngStream};

/// Ground-truth morphology: a polarized ring around two unpolarized point
/// stars on a flat background.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// Ring radii as fractions of min(H, W)/2.
    pub ring_inner: f64,
    pub ring_outer: f64,
    pub ring_amplitude: f64,
    /// Fraction p in [0, 1] of the ring intensity that is polarized.
    pub polarized_fraction: f64,
    /// Star positions as (row, col) fractions of the grid.
    pub star_positions: [(f64, f64); 2],
    pub star_amplitudes: [f64; 2],
    pub background: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            ring_inner: 0.25,
            ring_outer: 0.45,
            ring_amplitude: 1.0,
            polarized_fraction: 0.5,
            star_positions: [(0.36, 0.36), (0.66, 0.60)],
            star_amplitudes: [60.0, 35.0],
            background: 0.05,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Parameter("phantom grid must be nonempty".into()));
        }
        if !(0.0..=1.0).contains(&self.polarized_fraction) {
            return Err(Error::Parameter(format!(
                "polarized fraction {} outside [0, 1] would violate the cone constraint",
                self.polarized_fraction
            )));
        }
        if self.ring_amplitude < 0.0
            || self.background < 0.0
            || self.star_amplitudes.iter().any(|a| *a < 0.0)
        {
            return Err(Error::Parameter("phantom amplitudes must be nonnegative".into()));
        }
        if !(self.ring_inner >= 0.0 && self.ring_inner < self.ring_outer) {
            return Err(Error::Parameter("ring radii must satisfy 0 <= inner < outer".into()));
        }
        Ok(())
    }
}

/// Three-channel (I, Q, U) ground truth. I = background + ring + stars;
/// Q and U carry the azimuthal polarization pattern of the ring with
/// fraction p, so √(Q² + U²) ≤ I everywhere by construction.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ChannelStack> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut i_plane = Array2::from_elem((h, w), spec.background);
    let mut q_plane = Array2::zeros((h, w));
    let mut u_plane = Array2::zeros((h, w));

    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let half = (h.min(w) as f64) / 2.0;
    let (r_in, r_out) = (spec.ring_inner * half, spec.ring_outer * half);
    for r in 0..h {
        for c in 0..w {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            let radius = (dx * dx + dy * dy).sqrt();
            if radius >= r_in && radius <= r_out {
                let theta = dy.atan2(dx);
                i_plane[[r, c]] += spec.ring_amplitude;
                let pol = spec.polarized_fraction * spec.ring_amplitude;
                q_plane[[r, c]] = pol * (2.0 * theta).cos();
                u_plane[[r, c]] = pol * (2.0 * theta).sin();
            }
        }
    }
    for ((fr, fc), amp) in spec.star_positions.iter().zip(&spec.star_amplitudes) {
        let r = ((fr * h as f64).round() as usize).min(h - 1);
        let c = ((fc * w as f64).round() as usize).min(w - 1);
        i_plane[[r, c]] += amp;
    }

    let stack = ChannelStack::new(vec![i_plane, q_plane, u_plane])?;
    if crate::objectives::feasibility_violation(&stack) > 0.0 {
        return Err(Error::Parameter("phantom specification violates the cone constraint".into()));
    }
    Ok(stack)
}

/// Modulation coefficient pairs, one per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSchedule {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Four-state half-wave-plate cycle at angles {0°, 22.5°, 45°, 67.5°}:
/// v¹ = ½(1, cos 4α, sin 4α), v² = ½(1, −cos 4α, −sin 4α). Exact
/// coefficient values are used so the states are free of rounding residue.
pub fn dpi_schedule(k: usize) -> Result<ModulationSchedule> {
    if k == 0 || k % 4 != 0 {
        return Err(Error::Config(format!(
            "frame count must be a positive multiple of 4 (got {k})"
        )));
    }
    const STATES: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
    let pairs = (0..k)
        .map(|idx| {
            let (c, s) = STATES[idx % 4];
            (
                vec![0.5, 0.5 * c, 0.5 * s],
                vec![0.5, -0.5 * c, -0.5 * s],
            )
        })
        .collect();
    Ok(ModulationSchedule { pairs })
}

/// Periodic centered Gaussian kernel, normalized to unit sum.
pub fn gaussian_psf(height: usize, width: usize, fwhm: f64) -> Result<PsfKernel> {
    if !(fwhm > 0.0) {
        return Err(Error::Parameter(format!("psf fwhm must be > 0, got {fwhm}")));
    }
    let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    let mut plane = Array2::zeros((height, width));
    for r in 0..height {
        for c in 0..width {
            // Wrapped distances keep the kernel periodic.
            let dy = {
                let d = (r as f64 - cy).abs();
                d.min(height as f64 - d)
            };
            let dx = {
                let d = (c as f64 - cx).abs();
                d.min(width as f64 - d)
            };
            plane[[r, c]] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let sum: f64 = plane.iter().sum();
    plane.mapv_inplace(|v| v / sum);
    PsfKernel::new(plane)
}

/// Synthesizes a noisy data cube from the ground truth: mean m_k from the
/// measurement map, d_k = m_k + √(max(m_k, 0) + σ_ro²) ⊙ gaussian draws,
/// weights w_k = 1/(max(m_k, 0) + σ_ro²). Frame k draws come from the
/// substream seed XOR k, so synthesis is deterministic per seed.
pub fn synthesize(
    truth: &ChannelStack,
    k: usize,
    psf: &PsfKernel,
    sigma_ro: f64,
    seed: u64,
) -> Result<DataCube> {
    synthesize_with_noise(truth, k, psf, sigma_ro, seed, true)
}

/// Noise-free variant used as a test hook: frames equal the noiseless means
/// exactly, weights are still the model inverse variances.
pub fn synthesize_with_noise(
    truth: &ChannelStack,
    k: usize,
    psf: &PsfKernel,
    sigma_ro: f64,
    seed: u64,
    add_noise: bool,
) -> Result<DataCube> {
    synthesize_with_schedule(truth, &dpi_schedule(k)?, psf, sigma_ro, seed, add_noise)
}

/// Synthesis with an explicit modulation schedule, for instruments other
/// than the 4-state half-wave-plate cycle.
pub fn synthesize_with_schedule(
    truth: &ChannelStack,
    schedule: &ModulationSchedule,
    psf: &PsfKernel,
    sigma_ro: f64,
    seed: u64,
    add_noise: bool,
) -> Result<DataCube> {
    if sigma_ro < 0.0 {
        return Err(Error::Parameter(format!("sigma_ro must be >= 0, got {sigma_ro}")));
    }
    if (truth.height(), truth.width()) != (psf.height(), psf.width()) {
        return Err(Error::Dimension(format!(
            "truth shape ({}, {}) != psf shape ({}, {})",
            truth.height(),
            truth.width(),
            psf.height(),
            psf.width()
        )));
    }
    if schedule.pairs[0].0.len() != truth.channels() {
        return Err(Error::Config(format!(
            "schedule addresses {} channels but truth has {}",
            schedule.pairs[0].0.len(),
            truth.channels()
        )));
    }
    let op = MeasureOp::new(psf.clone(), schedule.pairs.clone())?;
    let means = op.forward(truth)?;
    let variance_floor = 1e-12;
    let mut floored = 0usize;
    let frames = means
        .into_iter()
        .enumerate()
        .map(|(idx, mean)| {
            let mut rng = RngStream::substream(seed, idx as u64);
            let len = mean.len();
            let mut data = Array1::zeros(len);
            let mut weights = Array1::zeros(len);
            for p in 0..len {
                let m = mean[p];
                let mut var = m.max(0.0) + sigma_ro * sigma_ro;
                if var < variance_floor {
                    var = variance_floor;
                    floored += 1;
                }
                let noise = if add_noise { rng.next_gaussian() } else { 0.0 };
                data[p] = m + var.sqrt() * noise;
                weights[p] = 1.0 / var;
            }
            let (v1, v2) = schedule.pairs[idx].clone();
            DataFrame::new(data, weights, v1, v2)
        })
        .collect::<Result<Vec<_>>>()?;
    if floored > 0 {
        log::warn!("synthesize: {floored} pixel variances floored at {variance_floor}");
    }
    DataCube::new(frames, psf.plane().clone(), sigma_ro * sigma_ro, seed)
}
