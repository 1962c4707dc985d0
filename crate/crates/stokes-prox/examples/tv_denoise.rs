//! TV denoising as the simplest use of the primal-dual scheme: identity
//! blur, one frame, unit weights, no constraint.

use ndarray::{Array1, Array2};
use stokes_prox::{
    pd_solve, ChannelStack, DataCube, DataFrame, RegularizerConfig, RngStream, SolverConfig,
};

fn main() -> stokes_prox::Result<()> {
    let (h, w) = (32, 32);
    let mut rng = RngStream::new(11);
    let mut clean = Array2::zeros((h, w));
    for r in 8..24 {
        for c in 8..24 {
            clean[[r, c]] = 1.0;
        }
    }
    let noise = Array2::from_shape_vec((h, w), rng.gaussian_draws(h * w)).unwrap();
    let noisy = &clean + &(noise * 0.25);

    // Single identity-blur frame: data = noisy image, unit weights.
    let n = h * w;
    let mut data = Array1::zeros(2 * n);
    for (i, v) in noisy.iter().enumerate() {
        data[i] = *v;
    }
    let frame = DataFrame::new(data, Array1::from_elem(2 * n, 1.0), vec![1.0], vec![0.0])?;
    let mut psf = Array2::zeros((h, w));
    psf[[h / 2, w / 2]] = 1.0;
    let cube = DataCube::new(vec![frame], psf, 0.0, 0)?;

    let mut cfg = SolverConfig::defaults(RegularizerConfig::tv(vec![0.15]));
    cfg.constrained = false;
    cfg.r = 1.0;
    cfg.oracle_beta = Some(1.0);
    cfg.max_outer = 500;
    cfg.telemetry_period = 100;
    let x0 = ChannelStack::new(vec![noisy.clone()])?;
    let out = pd_solve(&x0, None, &cube, &cfg)?;

    for rec in &out.telemetry {
        println!(
            "iter {:4}  objective {:.6}  fidelity {:.6}  tv {:.6}",
            rec.iter, rec.objective, rec.fidelity, rec.regularizer
        );
    }
    let err_before = x0.sub(&ChannelStack::new(vec![clean.clone()])?).norm_sq();
    let err_after = out.x.sub(&ChannelStack::new(vec![clean])?).norm_sq();
    println!("squared error vs clean: {err_before:.3} -> {err_after:.3}");
    Ok(())
}
