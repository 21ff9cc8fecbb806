//! Constant-coefficient reference heat kernels on the periodic lattice.
//!
//! The discrete-time kernel is produced by direct time stepping of
//! `G(., t+1) = G(., t) - Lambda div grad G(., t)` from a delta, which keeps
//! conservation and positivity bitwise traceable. The continuous-time kernel
//! `exp(-Lambda t div grad) delta` is evaluated spectrally. The two flavors
//! cross-check each other where both apply.

use std::sync::Arc;

use num_complex::Complex64;

use crate::bounds::{weighted_linfit, DecayFit, Verdict};
use crate::error::{Error, Result};
use crate::fourier::{frequency, FftNd};
use crate::lattice::LatticeBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFlavor {
    DiscreteTime,
    ContinuousTime,
}

/// Tabulated kernel `G(x, t)` on a periodic box for a list of times.
#[derive(Debug, Clone)]
pub struct KernelTable {
    lat: Arc<LatticeBox>,
    flavor: KernelFlavor,
    lambda: f64,
    times: Vec<f64>,
    /// time-major: `values[ti * nsites + site]`
    values: Vec<f64>,
}

impl KernelTable {
    /// Assemble a table from precomputed slices (used by spectral reference
    /// kernels in other modules).
    pub(crate) fn from_parts(
        lat: &Arc<LatticeBox>,
        flavor: KernelFlavor,
        lambda: f64,
        times: Vec<f64>,
        values: Vec<f64>,
    ) -> crate::error::Result<Self> {
        if values.len() != times.len() * lat.nsites() {
            return Err(Error::DimensionMismatch(
                "kernel table length mismatch".into(),
            ));
        }
        Ok(KernelTable {
            lat: Arc::clone(lat),
            flavor,
            lambda,
            times,
            values,
        })
    }

    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    pub fn flavor(&self) -> KernelFlavor {
        self.flavor
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slice(&self, ti: usize) -> &[f64] {
        let n = self.lat.nsites();
        &self.values[ti * n..(ti + 1) * n]
    }

    pub fn value(&self, ti: usize, site: usize) -> f64 {
        self.values[ti * self.lat.nsites() + site]
    }

    /// Total mass per recorded time.
    pub fn masses(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|ti| self.slice(ti).iter().sum())
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Mass sitting on the outermost shell (sup-norm) at the last recorded
    /// time; the box is "wide enough" when this is negligible.
    pub fn boundary_mass(&self) -> f64 {
        let ti = self.times.len() - 1;
        let mut mass = 0.0;
        for site in 0..self.lat.nsites() {
            let c = self.lat.centered_coords_of(site);
            let on_shell = c.iter().enumerate().any(|(axis, &ci)| {
                let l = self.lat.dims()[axis] as i64;
                ci == -(l / 2) || ci == l - 1 - l / 2
            });
            if on_shell {
                mass += self.value(ti, site).abs();
            }
        }
        mass
    }

    /// CSV rows `x_1..x_d, t, G`.
    pub fn to_csv(&self) -> String {
        let d = self.lat.d();
        let mut out = String::new();
        for i in 0..d {
            out.push_str(&format!("x{}", i + 1));
            out.push(',');
        }
        out.push_str("t,G\n");
        for (ti, &t) in self.times.iter().enumerate() {
            for site in 0..self.lat.nsites() {
                let c = self.lat.centered_coords_of(site);
                for ci in &c {
                    out.push_str(&format!("{ci},"));
                }
                out.push_str(&format!("{t},{}\n", self.value(ti, site)));
            }
        }
        out
    }
}

/// One explicit step `u - Lambda * div grad u` on raw values, real scalar
/// coefficients (shared by the discrete kernel and by constant-coefficient
/// references).
pub fn scalar_heat_step(lat: &LatticeBox, lambda: f64, u: &[f64], out: &mut [f64]) {
    let d = lat.d();
    for site in 0..lat.nsites() {
        let mut lap = 0.0;
        for axis in 0..d {
            // neighbor pair grouped first so reflections are bitwise symmetric
            lap += 2.0 * u[site] - (u[lat.up(site, axis)] + u[lat.down(site, axis)]);
        }
        out[site] = u[site] - lambda * lap;
    }
}

/// Discrete-time kernel from a delta, all integer times `0..=t_max` recorded.
pub fn discrete_kernel(lat: &Arc<LatticeBox>, lambda: f64, t_max: usize) -> Result<KernelTable> {
    let times: Vec<usize> = (0..=t_max).collect();
    discrete_kernel_at_times(lat, lambda, &times)
}

/// Discrete-time kernel recording only the listed (strictly increasing)
/// integer times; useful when full tables would be large.
pub fn discrete_kernel_at_times(
    lat: &Arc<LatticeBox>,
    lambda: f64,
    times: &[usize],
) -> Result<KernelTable> {
    let d = lat.d();
    if 4.0 * d as f64 * lambda > 1.0 + 1e-12 {
        return Err(Error::Stability(format!(
            "discrete kernel requires 4*d*Lambda <= 1, got {}",
            4.0 * d as f64 * lambda
        )));
    }
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument("Lambda must be positive".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "times must be nonempty and strictly increasing".into(),
        ));
    }
    let t_max = *times.last().unwrap();
    let n = lat.nsites();
    let mut values = Vec::with_capacity(times.len() * n);
    let mut cur = vec![0.0; n];
    cur[0] = 1.0;
    let mut want = times.iter().peekable();
    if **want.peek().unwrap() == 0 {
        values.extend_from_slice(&cur);
        want.next();
    }
    let mut next = vec![0.0; n];
    for t in 1..=t_max {
        scalar_heat_step(lat, lambda, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        if want.peek().map(|&&w| w == t).unwrap_or(false) {
            values.extend_from_slice(&cur);
            want.next();
        }
    }
    let table = KernelTable {
        lat: Arc::clone(lat),
        flavor: KernelFlavor::DiscreteTime,
        lambda,
        times: times.iter().map(|&t| t as f64).collect(),
        values,
    };
    let bm = table.boundary_mass();
    if bm > 1e-14 {
        return Err(Error::BoxTooSmall(format!(
            "boundary mass {bm:.3e} at t={t_max} exceeds 1e-14; widen the box"
        )));
    }
    Ok(table)
}

/// Discrete-time kernel on the periodic box without the boundary-mass
/// admission check. Operator construction treats the box as genuinely
/// periodic (the folded kernel is the right one for a periodized
/// environment), so wrap-around there is definitional, not an error.
pub fn discrete_kernel_periodized(
    lat: &Arc<LatticeBox>,
    lambda: f64,
    t_max: usize,
) -> Result<KernelTable> {
    let d = lat.d();
    if 4.0 * d as f64 * lambda > 1.0 + 1e-12 {
        return Err(Error::Stability(format!(
            "discrete kernel requires 4*d*Lambda <= 1, got {}",
            4.0 * d as f64 * lambda
        )));
    }
    let n = lat.nsites();
    let mut values = Vec::with_capacity((t_max + 1) * n);
    let mut cur = vec![0.0; n];
    cur[0] = 1.0;
    values.extend_from_slice(&cur);
    let mut next = vec![0.0; n];
    for _ in 0..t_max {
        scalar_heat_step(lat, lambda, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        values.extend_from_slice(&cur);
    }
    Ok(KernelTable {
        lat: Arc::clone(lat),
        flavor: KernelFlavor::DiscreteTime,
        lambda,
        times: (0..=t_max).map(|t| t as f64).collect(),
        values,
    })
}

/// `|e(zeta)|^2 = sum_i (2 - 2 cos zeta_i)` at a box frequency index.
pub fn symbol_e2(lat: &LatticeBox, kidx: usize) -> f64 {
    let d = lat.d();
    let coords = lat.coords_of(kidx);
    let mut s = 0.0;
    for axis in 0..d {
        let z = frequency(coords[axis] as usize, lat.dims()[axis]);
        s += 2.0 - 2.0 * z.cos();
    }
    s
}

/// Continuous-time kernel by spectral evaluation at the requested times.
pub fn continuous_kernel(
    lat: &Arc<LatticeBox>,
    lambda: f64,
    times: &[f64],
) -> Result<KernelTable> {
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument("Lambda must be positive".into()));
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty time list".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times[0] < 0.0 {
        return Err(Error::InvalidArgument(
            "times must be nonnegative and nondecreasing".into(),
        ));
    }
    let n = lat.nsites();
    let fft = FftNd::new(lat.dims());
    let e2: Vec<f64> = (0..n).map(|k| symbol_e2(lat, k)).collect();
    let mut values = Vec::with_capacity(times.len() * n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for &t in times {
        for k in 0..n {
            buf[k] = Complex64::new((-lambda * e2[k] * t).exp(), 0.0);
        }
        fft.inverse(&mut buf);
        values.extend(buf.iter().map(|c| c.re));
    }
    Ok(KernelTable {
        lat: Arc::clone(lat),
        flavor: KernelFlavor::ContinuousTime,
        lambda,
        times: times.to_vec(),
        values,
    })
}

/// Smallest envelope constant plus the temporal decay slope of `G(0, t)`.
///
/// Returns a fit whose `c` is the smallest constant with
/// `G(x,t) <= c (Lambda t + 1)^{-d/2} exp(-min(|x|, |x|^2/(Lambda t+1)) / cd)`
/// over the whole table, `gamma = 1/cd`, and `alpha` the fitted slope of
/// `log G(0,t)` against `log(Lambda t + 1)` over the upper half of the time
/// range (local CLT predicts `-d/2`).
pub fn envelope_check(table: &KernelTable, cd_candidate: f64) -> Result<DecayFit> {
    if table.times.is_empty() {
        return Err(Error::InvalidArgument("empty kernel table".into()));
    }
    if cd_candidate <= 0.0 {
        return Err(Error::InvalidArgument("cd candidate must be positive".into()));
    }
    let lat = &table.lat;
    let d = lat.d() as f64;
    let lambda = table.lambda;
    let mut c_min: f64 = 0.0;
    for (ti, &t) in table.times.iter().enumerate() {
        let denom = (lambda * t + 1.0).powf(-d / 2.0);
        for site in 0..lat.nsites() {
            let g = table.value(ti, site);
            if g <= 0.0 {
                continue;
            }
            let coords = lat.centered_coords_of(site);
            let x_norm = (coords.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt();
            let r = x_norm.min(x_norm * x_norm / (lambda * t + 1.0));
            let envelope = denom * (-r / cd_candidate).exp();
            c_min = c_min.max(g / envelope);
        }
    }

    // slope of log G(0, t) over the upper half of the recorded times
    let t_hi = *table.times.last().unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (ti, &t) in table.times.iter().enumerate() {
        if t < t_hi / 2.0 || t <= 0.0 {
            continue;
        }
        let g0 = table.value(ti, 0);
        if g0 > 0.0 {
            xs.push((lambda * t + 1.0).ln());
            ys.push(g0.ln());
        }
    }
    if xs.len() < 4 {
        return Err(Error::Underdetermined(
            "too few usable times for the slope fit".into(),
        ));
    }
    let fit = weighted_linfit(&xs, &ys, None)?;
    Ok(DecayFit {
        c: c_min,
        gamma: 1.0 / cd_candidate,
        alpha: fit.slope,
        band: (
            fit.slope - 1.96 * fit.sd_slope,
            fit.slope + 1.96 * fit.sd_slope,
        ),
        residual: fit.rms_residual,
        n_points: xs.len(),
        n_excluded: 0,
        verdict: Verdict::Pass,
        provenance: format!(
            "kernel envelope over {} times, cd={cd_candidate}",
            table.times.len()
        ),
    })
}

/// Box side for kernel tables: smallest power of two whose half-width clears
/// `8 sqrt(Lambda T + 1) + 16`, which keeps the boundary mass under the
/// 1e-14 admission threshold.
pub fn suggested_side(lambda: f64, t_max: f64) -> usize {
    let w = 2.0 * (8.0 * (lambda * t_max + 1.0).sqrt() + 16.0);
    let mut side = 16usize;
    while (side as f64) < w {
        side *= 2;
    }
    side
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_by_hand() {
        // d=1, Lambda=1/4: G(0,1)=1/2, G(+-1,1)=1/4
        let lat = LatticeBox::new(&[16]).unwrap();
        let table = discrete_kernel(&lat, 0.25, 1).unwrap();
        assert_eq!(table.value(1, 0), 0.5);
        assert_eq!(table.value(1, 1), 0.25);
        assert_eq!(table.value(1, 15), 0.25);
    }

    #[test]
    fn starts_from_delta_and_conserves_mass() {
        let lat = LatticeBox::new(&[64, 64]).unwrap();
        let table = discrete_kernel(&lat, 1.0 / 16.0, 40).unwrap();
        assert_eq!(table.value(0, 0), 1.0);
        assert!(table.slice(0)[1..].iter().all(|&v| v == 0.0));
        for m in table.masses() {
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nonnegative_under_stability_bound() {
        let lat = LatticeBox::new(&[128]).unwrap();
        let table = discrete_kernel(&lat, 0.25, 60).unwrap();
        assert!(table.min_value() >= 0.0);
    }

    #[test]
    fn rejects_unstable_lambda() {
        let lat = LatticeBox::new(&[16, 16]).unwrap();
        assert!(matches!(
            discrete_kernel(&lat, 0.2, 4),
            Err(Error::Stability(_))
        ));
    }

    #[test]
    fn rejects_box_too_small() {
        let lat = LatticeBox::new(&[8]).unwrap();
        assert!(matches!(
            discrete_kernel(&lat, 0.25, 400),
            Err(Error::BoxTooSmall(_))
        ));
    }

    #[test]
    fn symmetry_in_x_and_axes() {
        let lat = LatticeBox::new(&[64, 64]).unwrap();
        let table = discrete_kernel(&lat, 1.0 / 16.0, 20).unwrap();
        let ti = 20;
        for site in 0..lat.nsites() {
            let c = lat.centered_coords_of(site);
            let neg = lat.index_of(&[-c[0], -c[1]]);
            let swapped = lat.index_of(&[c[1], c[0]]);
            assert_eq!(table.value(ti, site), table.value(ti, neg));
            assert_eq!(table.value(ti, site), table.value(ti, swapped));
        }
    }

    #[test]
    fn continuous_kernel_delta_and_mass() {
        let lat = LatticeBox::new(&[24]).unwrap();
        let table = continuous_kernel(&lat, 0.125, &[0.0, 1.0, 4.0, 16.0]).unwrap();
        assert!((table.value(0, 0) - 1.0).abs() < 1e-12);
        for s in 1..24 {
            assert!(table.value(0, s).abs() < 1e-12);
        }
        for m in table.masses() {
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn continuous_kernel_matches_fine_step_integrator() {
        // independent oracle: classical RK4 on the semi-discrete system
        let lat = LatticeBox::new(&[16]).unwrap();
        let lambda = 0.125;
        let t_end = 4.0;
        let table = continuous_kernel(&lat, lambda, &[t_end]).unwrap();

        let n = lat.nsites();
        let rhs = |u: &[f64], out: &mut [f64]| {
            for site in 0..n {
                let lap = 2.0 * u[site] - u[lat.up(site, 0)] - u[lat.down(site, 0)];
                out[site] = -lambda * lap;
            }
        };
        let mut u = vec![0.0; n];
        u[0] = 1.0;
        let steps = 4000usize;
        let dt = t_end / steps as f64;
        let (mut k1, mut k2, mut k3, mut k4) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        for _ in 0..steps {
            rhs(&u, &mut k1);
            for i in 0..n {
                tmp[i] = u[i] + 0.5 * dt * k1[i];
            }
            rhs(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = u[i] + 0.5 * dt * k2[i];
            }
            rhs(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = u[i] + dt * k3[i];
            }
            rhs(&tmp, &mut k4);
            for i in 0..n {
                u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        for site in 0..n {
            assert!(
                (table.value(0, site) - u[site]).abs() < 1e-8,
                "site {site}: {} vs {}",
                table.value(0, site),
                u[site]
            );
        }
    }

    #[test]
    fn discrete_converges_to_continuous() {
        // max_x |G_disc(x, n) - G_cont(x, n)| shrinks as n grows
        let lat = LatticeBox::new(&[128]).unwrap();
        let lambda = 0.125;
        let disc = discrete_kernel(&lat, lambda, 128).unwrap();
        let cont = continuous_kernel(&lat, lambda, &[8.0, 32.0, 128.0]).unwrap();
        let diff_at = |n: usize, ci: usize| -> f64 {
            (0..lat.nsites())
                .map(|s| (disc.value(n, s) - cont.value(ci, s)).abs())
                .fold(0.0, f64::max)
        };
        let d8 = diff_at(8, 0);
        let d32 = diff_at(32, 1);
        let d128 = diff_at(128, 2);
        assert!(d32 < d8 && d128 < d32, "{d8} {d32} {d128}");
        // relative gap scales like 1/(Lambda t): about 6% of the peak at t=8,
        // under 0.4% of the peak by t=128
        assert!(d128 < 4e-3 * cont.value(2, 0), "{d128}");
    }

    #[test]
    fn envelope_slope_near_minus_half() {
        let lat = LatticeBox::new(&[suggested_side(0.125, 256.0)]).unwrap();
        let table = discrete_kernel(&lat, 0.125, 256).unwrap();
        let fit = envelope_check(&table, 4.0).unwrap();
        assert!(
            fit.alpha > -0.55 && fit.alpha < -0.45,
            "slope {}",
            fit.alpha
        );
        assert!(fit.c.is_finite() && fit.c > 0.0);
    }

    #[test]
    fn envelope_constant_stable_under_time_doubling() {
        let lat = LatticeBox::new(&[suggested_side(0.125, 512.0)]).unwrap();
        let t1 = discrete_kernel(&lat, 0.125, 256).unwrap();
        let t2 = discrete_kernel(&lat, 0.125, 512).unwrap();
        let c1 = envelope_check(&t1, 4.0).unwrap().c;
        let c2 = envelope_check(&t2, 4.0).unwrap().c;
        assert!((c2 - c1).abs() / c1 < 0.10, "c1={c1} c2={c2}");
    }
}
