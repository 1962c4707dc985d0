//! Compares the nonsmooth TV reconstruction (backtracked primal-dual)
//! against the smoothed TV-h baseline (backtracked forward-backward) for
//! small and large smoothing widths.

use stokes_prox::simkit::{gaussian_psf, make_phantom, synthesize, PhantomSpec};
use stokes_prox::solvers::SolveSession;
use stokes_prox::{ChannelStack, RegularizerConfig, SolverConfig};

fn main() -> stokes_prox::Result<()> {
    let spec = PhantomSpec::default();
    let truth = make_phantom(&spec)?;
    let psf = gaussian_psf(spec.height, spec.width, 3.0)?;
    let cube = synthesize(&truth, 8, &psf, 1.0, 42)?;
    let lambda = vec![0.1, 0.03, 0.03];
    let x0 = ChannelStack::zeros(3, spec.height, spec.width);
    let iterations = 400;

    let mut cfg = SolverConfig::defaults(RegularizerConfig::tv(lambda.clone()));
    cfg.max_outer = iterations;
    cfg.telemetry_period = iterations;
    let tv = SolveSession::new(&cube, &cfg).with_truth(&truth).pdwb(&x0, None)?;
    report("TV (pdwb)", &tv);

    for epsilon in [1e-2, 1e2] {
        let mut cfg = SolverConfig::defaults(RegularizerConfig::tvh(lambda.clone(), epsilon));
        cfg.max_outer = iterations;
        cfg.telemetry_period = iterations;
        let run = SolveSession::new(&cube, &cfg).with_truth(&truth).fbwb(&x0)?;
        report(&format!("TV-h eps={epsilon:.0e} (fbwb)"), &run);
    }
    Ok(())
}

fn report(label: &str, out: &stokes_prox::SolveOutput) {
    let rec = out.telemetry.last().unwrap();
    let mse = rec.mse.as_ref().unwrap();
    println!(
        "{label:22}  objective {:12.4}  mse I/Q/U {:.4} / {:.4} / {:.4}",
        rec.objective, mse[0], mse[1], mse[2]
    );
}
