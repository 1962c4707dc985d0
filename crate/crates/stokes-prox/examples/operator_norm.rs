//! Estimates operator norms by power iteration: the discrete gradient
//! (bounded by sqrt(8)) and the Lipschitz constant of the data-fidelity
//! gradient for a synthetic cube.

use stokes_prox::linops::grad_norm;
use stokes_prox::objectives::fidelity_lipschitz;
use stokes_prox::simkit::{gaussian_psf, make_phantom, synthesize, PhantomSpec};
use stokes_prox::RngStream;

fn main() -> stokes_prox::Result<()> {
    let mut rng = RngStream::new(7);
    for n in [16, 64, 256] {
        let nd = grad_norm(n, n, &mut rng)?;
        println!("||D|| on {n}x{n}: {nd:.6}  (bound sqrt(8) = {:.6})", 8f64.sqrt());
    }

    let spec = PhantomSpec::default();
    let truth = make_phantom(&spec)?;
    let psf = gaussian_psf(spec.height, spec.width, 3.0)?;
    let cube = synthesize(&truth, 8, &psf, 1.0, 42)?;
    let beta = fidelity_lipschitz(&cube, &mut rng)?;
    println!("fidelity gradient Lipschitz constant: {beta:.6}");
    Ok(())
}
