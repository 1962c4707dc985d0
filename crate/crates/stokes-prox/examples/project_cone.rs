//! Projects a few (I, Q, U) samples onto the physical cone sqrt(Q²+U²) <= I
//! and shows the three regimes: already feasible, clipped to the boundary,
//! and collapsed to zero.

use stokes_prox::proxops::{project_soc, ConeSlice};

fn main() {
    let samples = [
        ConeSlice { t: 2.0, z: vec![1.0, 0.5] },
        ConeSlice { t: 0.5, z: vec![2.0, -1.0] },
        ConeSlice { t: -3.0, z: vec![0.4, 0.1] },
    ];
    for s in samples {
        let p = project_soc(&s);
        let before = (s.z[0].powi(2) + s.z[1].powi(2)).sqrt();
        let after = (p.z[0].powi(2) + p.z[1].powi(2)).sqrt();
        println!(
            "(I={:+.2}, |QU|={:.2})  ->  (I={:+.4}, |QU|={:.4})",
            s.t, before, p.t, after
        );
    }
}
