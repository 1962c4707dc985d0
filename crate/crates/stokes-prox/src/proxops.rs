//! Proximal and projection operators: soft thresholding, conjugate proxes
//! via the Moreau decomposition, and the per-pixel second-order-cone
//! projection enforcing the polarization constraint.

use crate::error::{Error, Result};
use crate::linops::{DualStack, GradientField};
use crate::tensor::ChannelStack;

/// Componentwise sign(v)·max(|v| − t, 0).
pub fn soft_threshold(v: &[f64], t: f64) -> Result<Vec<f64>> {
    if t < 0.0 {
        return Err(Error::Parameter(format!("soft threshold needs t >= 0, got {t}")));
    }
    Ok(v.iter().map(|x| soft_threshold_scalar(*x, t)).collect())
}

#[inline]
pub fn soft_threshold_scalar(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// prox of σ·g* through the Moreau decomposition:
/// prox_{σg*}(y) = y − σ·prox_{g/σ}(y/σ).
///
/// `prox_g(v, t)` must evaluate prox_{t·g}(v).
pub fn prox_conjugate(
    y: &[f64],
    sigma: f64,
    prox_g: impl Fn(&[f64], f64) -> Vec<f64>,
) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(Error::Parameter(format!("prox_conjugate needs sigma > 0, got {sigma}")));
    }
    let scaled: Vec<f64> = y.iter().map(|v| v / sigma).collect();
    let inner = prox_g(&scaled, 1.0 / sigma);
    Ok(y.iter().zip(&inner).map(|(v, p)| v - sigma * p).collect())
}

/// Clamp every entry to [−λ, λ]: the conjugate prox of λ‖·‖₁, independent
/// of the dual step size.
pub fn project_linf_ball(y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 {
        return Err(Error::Parameter(format!("linf ball radius must be >= 0, got {lambda}")));
    }
    Ok(y.iter().map(|v| v.clamp(-lambda, lambda)).collect())
}

/// In-place clamp of a gradient-shaped dual block.
pub fn clamp_field(field: &mut GradientField, lambda: f64) {
    field.dx.mapv_inplace(|v| v.clamp(-lambda, lambda));
    field.dy.mapv_inplace(|v| v.clamp(-lambda, lambda));
}

/// In-place clamp of every dual block with its per-channel weight.
pub fn clamp_dual(dual: &mut DualStack, lambda: &[f64]) {
    for (block, l) in dual.blocks.iter_mut().zip(lambda) {
        clamp_field(block, *l);
    }
}

/// One pixel of the constraint set: intensity t and polarized components z.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSlice {
    pub t: f64,
    pub z: Vec<f64>,
}

/// Euclidean projection onto the second-order cone {(t, z) : ‖z‖₂ ≤ t}.
pub fn project_soc(slice: &ConeSlice) -> ConeSlice {
    let rho = slice.z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rho <= slice.t {
        slice.clone()
    } else if rho <= -slice.t {
        ConeSlice {
            t: 0.0,
            z: vec![0.0; slice.z.len()],
        }
    } else {
        let half = 0.5 * (slice.t + rho);
        let scale = half / rho;
        ConeSlice {
            t: half,
            z: slice.z.iter().map(|v| v * scale).collect(),
        }
    }
}

/// Applies `project_soc` at every pixel, with t = channel 0 and z = the
/// remaining channels. Feasible pixels pass through bit-exactly.
pub fn project_soc_stack(x: &ChannelStack) -> Result<ChannelStack> {
    if x.channels() < 2 {
        return Err(Error::Config(
            "the epigraphical projection needs at least 2 channels".into(),
        ));
    }
    let mut out = x.clone();
    let (h, w) = (x.height(), x.width());
    let channels = x.channels();
    for i in 0..h {
        for j in 0..w {
            let t = x.plane(0)[[i, j]];
            let rho_sq: f64 = (1..channels).map(|l| x.plane(l)[[i, j]].powi(2)).sum();
            let rho = rho_sq.sqrt();
            if rho <= t {
                continue;
            }
            if rho <= -t {
                for l in 0..channels {
                    out.plane_mut(l)[[i, j]] = 0.0;
                }
            } else {
                let half = 0.5 * (t + rho);
                let scale = half / rho;
                out.plane_mut(0)[[i, j]] = half;
                for l in 1..channels {
                    out.plane_mut(l)[[i, j]] = x.plane(l)[[i, j]] * scale;
                }
            }
        }
    }
    Ok(out)
}
