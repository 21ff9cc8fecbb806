//! Identities behind the frequency-domain representation: the contour
//! integral that recovers `(1 - e* q e)^{t/eps^2}`, the diffusive scaling of
//! the continuum kernel, and the decay-exponent ladder of the
//! lattice-vs-continuum kernel differences.
//!
//! ```bash
//! cargo run --release --example contour_identity
//! ```

use parahom::lattice::LatticeBox;
use parahom::reference::{
    identity_check_p2, identity_check_p2_ladder, lattice_vs_continuum, HomFlavor,
    HomogenizedModel,
};

fn main() -> parahom::Result<()> {
    let kappa = 0.125;

    println!("contour identity residuals (q={kappa}):");
    for (xi, t, eps, re_eta) in [
        (0.3, 1.0, 0.5, 0.1),
        (1.1, 0.5, 0.5, 0.2),
        (2.0, 0.25, 0.25, 0.15),
    ] {
        let r = identity_check_p2(kappa, xi, t, eps, re_eta, 64)?;
        println!("  xi={xi}, t={t}, eps={eps}, Re eta={re_eta}: residual {r:.2e}");
    }
    let ladder = identity_check_p2_ladder(kappa, 0.9, 2.0, 0.5, 0.2, &[64, 128, 256, 512])?;
    let ladder_str: Vec<String> = ladder.iter().map(|r| format!("{r:.2e}")).collect();
    println!("  panel-doubling residuals: [{}]", ladder_str.join(", "));

    let model = HomogenizedModel::scalar(1, kappa, HomFlavor::ContinuumPde)?;
    let g = parahom::reference::continuum_green(&model, &[1.5], 2.0)?;
    let g_scaled = parahom::reference::continuum_green(&model, &[3.0], 8.0)? / 0.5;
    println!("scaling identity: G(1.5, 2) = {g:.10e}, eps^-1 G(x/eps, t/eps^2) = {g_scaled:.10e}");

    let lat = LatticeBox::new(&[256])?;
    let model_lat = HomogenizedModel::scalar(1, kappa, HomFlavor::DiscreteLattice)?;
    let cmp = lattice_vs_continuum(&model_lat, &lat, 16, 256)?;
    println!(
        "lattice-vs-continuum decay exponents (sup over window): {:.3?}",
        cmp.exponents
    );
    println!("  at the origin: {:.3?}", cmp.exponents_origin);
    Ok(())
}
