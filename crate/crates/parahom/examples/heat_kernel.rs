//! Constant-coefficient reference kernels: build the discrete-time kernel by
//! explicit stepping, check conservation and positivity, fit the decay
//! envelope, and cross-check against the spectral continuous-time kernel.
//!
//! ```bash
//! cargo run --release --example heat_kernel
//! ```

use parahom::kernel::{continuous_kernel, discrete_kernel, envelope_check, suggested_side};
use parahom::lattice::LatticeBox;

fn main() -> parahom::Result<()> {
    let lambda = 0.125;
    let t_max = 256usize;
    let side = suggested_side(lambda, t_max as f64);
    let lat = LatticeBox::new(&[side])?;
    println!("discrete kernel: d=1, Lambda={lambda}, T={t_max}, box side {side}");

    let table = discrete_kernel(&lat, lambda, t_max)?;
    let worst_mass = table
        .masses()
        .iter()
        .map(|m| (m - 1.0).abs())
        .fold(0.0, f64::max);
    println!("  conservation defect: {worst_mass:.2e}");
    println!("  minimum value:       {:.2e}", table.min_value());

    let fit = envelope_check(&table, 4.0)?;
    println!(
        "  envelope constant C = {:.4}, decay slope of log G(0,t): {:.4} (diffusive: -0.5)",
        fit.c, fit.alpha
    );

    // spectral continuous-time kernel at matching times
    let cont = continuous_kernel(&lat, lambda, &[64.0, 256.0])?;
    for (ci, t) in [(0usize, 64usize), (1, 256)] {
        let diff: f64 = (0..lat.nsites())
            .map(|s| (table.value(t, s) - cont.value(ci, s)).abs())
            .fold(0.0, f64::max);
        println!("  max |discrete - continuous| at t={t}: {diff:.2e}");
    }

    // a few profile values
    println!("  G(x, 256) near the origin:");
    for x in 0..6i64 {
        println!("    x={x}: {:.6e}", table.value(t_max, lat.index_of(&[x])));
    }
    Ok(())
}
