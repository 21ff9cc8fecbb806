//! Time evolution of the random divergence-form equation and Monte Carlo
//! estimation of the averaged Green's function.
//!
//! Monte Carlo reductions are fixed-order: per-sample snapshots are produced
//! in parallel, collected in sample order, and folded sequentially, so the
//! estimate is bitwise reproducible for any worker count.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bounds::{weighted_linfit, LinFit};
use crate::env::{sample_path, CoefficientPath, EnvironmentSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::lattice::{apply_divergence_form, CoefficientSlice, LatticeBox, ScalarField};

/// Initial data: either explicit lattice values or a smooth profile `f`
/// sampled as `h(x) = f(eps * x)`.
#[derive(Debug, Clone)]
pub enum InitialData {
    Lattice(Vec<f64>),
    Profile { profile: Profile, eps: f64 },
}

/// Named smooth profiles.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Profile {
    /// `f(x) = amplitude * exp(-|x|^2 / (2 width^2))`
    Gaussian { amplitude: f64, width: f64 },
    /// `f(x) = amplitude * cos(pi |x| / (2 radius))^2` inside `|x| < radius`,
    /// zero outside.
    CosineBump { amplitude: f64, radius: f64 },
}

impl Profile {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match *self {
            Profile::Gaussian { amplitude, width } => {
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            Profile::CosineBump { amplitude, radius } => {
                let r = r2.sqrt();
                if r >= radius {
                    0.0
                } else {
                    let c = (std::f64::consts::PI * r / (2.0 * radius)).cos();
                    amplitude * c * c
                }
            }
        }
    }

    /// Spatial extent beyond which the profile is negligible.
    pub fn support_radius(&self) -> f64 {
        match *self {
            Profile::Gaussian { width, .. } => 7.0 * width,
            Profile::CosineBump { radius, .. } => radius,
        }
    }
}

impl InitialData {
    pub fn delta(lat: &Arc<LatticeBox>) -> Self {
        let mut v = vec![0.0; lat.nsites()];
        v[0] = 1.0;
        InitialData::Lattice(v)
    }

    pub fn realize(&self, lat: &Arc<LatticeBox>) -> Result<ScalarField> {
        match self {
            InitialData::Lattice(values) => ScalarField::from_values(lat, values.clone()),
            InitialData::Profile { profile, eps } => {
                if !(*eps > 0.0 && *eps <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "eps must be in (0, 1], got {eps}"
                    )));
                }
                let mut vals = vec![0.0; lat.nsites()];
                for (site, v) in vals.iter_mut().enumerate() {
                    let c = lat.centered_coords_of(site);
                    let x: Vec<f64> = c.iter().map(|&ci| ci as f64 * eps).collect();
                    *v = profile.eval(&x);
                }
                ScalarField::from_values(lat, vals)
            }
        }
    }
}

/// One explicit step `u' = u - div(a grad u)`.
pub fn step_discrete(u: &ScalarField, a: &CoefficientSlice) -> Result<ScalarField> {
    a.bounds().check_discrete_time()?;
    let lap = apply_divergence_form(a, u)?;
    let mut out = u.clone();
    for (o, l) in out.values_mut().iter_mut().zip(lap.values()) {
        *o -= l;
    }
    Ok(out)
}

/// Iterate the discrete equation along a coefficient path, returning the
/// snapshots at the requested (strictly increasing) integer times.
pub fn evolve_discrete(
    h: &InitialData,
    path: &CoefficientPath,
    snapshots: &[usize],
) -> Result<Vec<ScalarField>> {
    let lat = path.lattice();
    if snapshots.is_empty() || snapshots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "snapshot times must be nonempty and strictly increasing".into(),
        ));
    }
    let t_max = *snapshots.last().unwrap();
    match path.grid() {
        TimeGrid::Discrete { n } => {
            if *n < t_max {
                return Err(Error::InvalidArgument(format!(
                    "path covers {n} steps, requested horizon {t_max}"
                )));
            }
        }
        _ => {
            return Err(Error::InvalidArgument(
                "evolve_discrete requires a discrete-time path".into(),
            ))
        }
    }
    path.bounds().check_discrete_time()?;
    let mut u = h.realize(lat)?;
    let mut out = Vec::with_capacity(snapshots.len());
    let mut want = snapshots.iter().peekable();
    if **want.peek().unwrap() == 0 {
        out.push(u.clone());
        want.next();
    }
    for t in 0..t_max {
        let a = path.slice(t);
        let lap = apply_divergence_form(&a, &u)?;
        for (o, l) in u.values_mut().iter_mut().zip(lap.values()) {
            *o -= l;
        }
        if want.peek().map(|&&s| s == t + 1).unwrap_or(false) {
            out.push(u.clone());
            want.next();
        }
    }
    Ok(out)
}

/// Explicit substep count per grid cell: substep length at most
/// `0.5 / (4 d Lambda)`.
fn substeps_for(cell_dt: f64, d: usize, big_lambda: f64) -> usize {
    let max_step = 0.5 / (4.0 * d as f64 * big_lambda);
    (cell_dt / max_step).ceil().max(1.0) as usize
}

/// Integrate `du/dt = -div(a grad u)` along a piecewise-constant path,
/// sampling the solution at the requested real times; also returns the
/// substep count per grid cell.
pub fn evolve_continuous(
    h: &InitialData,
    path: &CoefficientPath,
    times: &[f64],
) -> Result<(Vec<ScalarField>, usize)> {
    evolve_continuous_with_substeps(h, path, times, None)
}

/// Same as [`evolve_continuous`] with an explicit substep override (used by
/// the substep-halving self-convergence check).
pub fn evolve_continuous_with_substeps(
    h: &InitialData,
    path: &CoefficientPath,
    times: &[f64],
    substeps_override: Option<usize>,
) -> Result<(Vec<ScalarField>, usize)> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty time list".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times[0] < 0.0 {
        return Err(Error::InvalidArgument(
            "times must be nonnegative and nondecreasing".into(),
        ));
    }
    let (n_grid, cell_dt) = match *path.grid() {
        TimeGrid::Uniform { n, dt } => (n, dt),
        TimeGrid::Discrete { .. } => {
            return Err(Error::InvalidArgument(
                "evolve_continuous requires a uniform real-time path".into(),
            ))
        }
    };
    let lat = path.lattice();
    let d = lat.d();
    let horizon = (n_grid - 1) as f64 * cell_dt;
    let t_end = *times.last().unwrap();
    if t_end > horizon + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "requested time {t_end} beyond path horizon {horizon}"
        )));
    }
    let substeps =
        substeps_override.unwrap_or_else(|| substeps_for(cell_dt, d, path.bounds().big_lambda));
    let sub_dt = cell_dt / substeps as f64;

    let mut u = h.realize(lat)?;
    let mut out = Vec::with_capacity(times.len());
    let mut want = times.iter().peekable();
    let mut now = 0.0;
    while want.peek().map(|&&w| w <= now + 1e-12).unwrap_or(false) {
        out.push(u.clone());
        want.next();
    }
    // classical RK4 on the piecewise-constant generator; the substep length
    // respects the explicit stability cap, the order-4 accuracy makes the
    // substep-halving check tight
    let n = lat.nsites();
    let mut tmp = ScalarField::zeros(lat);
    'cells: for cell in 0..n_grid.saturating_sub(1) {
        let a = path.slice(cell);
        for s in 0..substeps {
            let k1 = apply_divergence_form(&a, &u)?;
            for i in 0..n {
                tmp.values_mut()[i] = u.values()[i] - 0.5 * sub_dt * k1.values()[i];
            }
            let k2 = apply_divergence_form(&a, &tmp)?;
            for i in 0..n {
                tmp.values_mut()[i] = u.values()[i] - 0.5 * sub_dt * k2.values()[i];
            }
            let k3 = apply_divergence_form(&a, &tmp)?;
            for i in 0..n {
                tmp.values_mut()[i] = u.values()[i] - sub_dt * k3.values()[i];
            }
            let k4 = apply_divergence_form(&a, &tmp)?;
            for i in 0..n {
                u.values_mut()[i] -= sub_dt / 6.0
                    * (k1.values()[i]
                        + 2.0 * k2.values()[i]
                        + 2.0 * k3.values()[i]
                        + k4.values()[i]);
            }
            now = cell as f64 * cell_dt + (s + 1) as f64 * sub_dt;
            while want.peek().map(|&&w| w <= now + 1e-12).unwrap_or(false) {
                out.push(u.clone());
                want.next();
            }
            if want.peek().is_none() {
                break 'cells;
            }
        }
    }
    Ok((out, substeps))
}

/// Monte Carlo estimate of the averaged Green's function: per-`(x, t)` mean
/// and standard error over `n` environment samples, plus per-block means for
/// jackknife error propagation downstream.
#[derive(Debug, Clone)]
pub struct GreenEstimate {
    lat: Arc<LatticeBox>,
    times: Vec<usize>,
    mean: Vec<f64>,
    stderr: Vec<f64>,
    n: usize,
    pub seed: u64,
    n_blocks: usize,
    /// `block_means[b][ti * nsites + site]`
    block_means: Vec<Vec<f64>>,
}

impl GreenEstimate {
    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn mean_table(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_slice(&self, ti: usize) -> &[f64] {
        let n = self.lat.nsites();
        &self.mean[ti * n..(ti + 1) * n]
    }

    pub fn stderr_slice(&self, ti: usize) -> &[f64] {
        let n = self.lat.nsites();
        &self.stderr[ti * n..(ti + 1) * n]
    }

    pub fn mean(&self, ti: usize, site: usize) -> f64 {
        self.mean[ti * self.lat.nsites() + site]
    }

    pub fn stderr(&self, ti: usize, site: usize) -> f64 {
        self.stderr[ti * self.lat.nsites() + site]
    }

    /// Leave-one-block-out mean table, for jackknife bands of nonlinear
    /// functionals of the estimate.
    pub fn jackknife_mean(&self, drop_block: usize) -> Vec<f64> {
        let b = self.n_blocks as f64;
        let mut out = vec![0.0; self.mean.len()];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (b * self.mean[i] - self.block_means[drop_block][i]) / (b - 1.0);
        }
        out
    }

    /// CSV rows `x1..xd, t, mean, stderr, N, seed`.
    pub fn to_csv(&self) -> String {
        let d = self.lat.d();
        let mut out = String::new();
        for i in 0..d {
            out.push_str(&format!("x{},", i + 1));
        }
        out.push_str("t,mean,stderr,N,seed\n");
        for (ti, &t) in self.times.iter().enumerate() {
            for site in 0..self.lat.nsites() {
                let c = self.lat.centered_coords_of(site);
                for ci in &c {
                    out.push_str(&format!("{ci},"));
                }
                out.push_str(&format!(
                    "{t},{},{},{},{}\n",
                    self.mean(ti, site),
                    self.stderr(ti, site),
                    self.n,
                    self.seed
                ));
            }
        }
        out
    }
}

/// Run `n` independent delta evolutions under fresh environment paths and
/// reduce in fixed sample order.
pub fn green_mc_estimate(
    spec: &EnvironmentSpec,
    lat: &Arc<LatticeBox>,
    times: &[usize],
    n: usize,
) -> Result<GreenEstimate> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "times must be nonempty and strictly increasing".into(),
        ));
    }
    let t_max = *times.last().unwrap();
    let nsites = lat.nsites();
    let m = times.len() * nsites;
    let mut mean = vec![0.0; m];
    let mut m2 = vec![0.0; m];
    let n_blocks = 20.min(n);
    let mut block_means = vec![vec![0.0; m]; n_blocks];
    let mut block_counts = vec![0usize; n_blocks];

    let delta = InitialData::delta(lat);
    let chunk = 64usize;
    let mut processed = 0usize;
    while processed < n {
        let hi = (processed + chunk).min(n);
        let snapshots: Vec<Vec<ScalarField>> = (processed..hi)
            .into_par_iter()
            .map(|s| {
                let path = sample_path(spec, lat, TimeGrid::Discrete { n: t_max }, s as u32)?;
                evolve_discrete(&delta, &path, times)
            })
            .collect::<Result<Vec<_>>>()?;
        for (offset, snaps) in snapshots.iter().enumerate() {
            let s = processed + offset;
            let k = (s + 1) as f64;
            let block = s * n_blocks / n;
            block_counts[block] += 1;
            for (ti, snap) in snaps.iter().enumerate() {
                let base = ti * nsites;
                for site in 0..nsites {
                    let x = snap.values()[site];
                    let d0 = x - mean[base + site];
                    mean[base + site] += d0 / k;
                    m2[base + site] += d0 * (x - mean[base + site]);
                    block_means[block][base + site] += x;
                }
            }
        }
        processed = hi;
    }
    let stderr: Vec<f64> = m2
        .iter()
        .map(|&v| (v / (n as f64 - 1.0) / n as f64).sqrt())
        .collect();
    for (b, bm) in block_means.iter_mut().enumerate() {
        let c = block_counts[b].max(1) as f64;
        bm.iter_mut().for_each(|v| *v /= c);
    }
    Ok(GreenEstimate {
        lat: Arc::clone(lat),
        times: times.to_vec(),
        mean,
        stderr,
        n,
        seed: spec.seed,
        n_blocks,
        block_means,
    })
}

/// Per-mode decay fit of the spatial Fourier transform of the estimate.
#[derive(Debug, Clone)]
pub struct ModeDecay {
    /// Fourier mode (one frequency per axis).
    pub xi: Vec<f64>,
    /// `|e(xi)|^2`.
    pub e2: f64,
    /// Fitted slope of `log |G^(xi, t)|` per unit time.
    pub rate: f64,
    /// Effective coefficient `(1 - exp(rate)) / |e(xi)|^2`.
    pub q_est: f64,
    pub q_stderr: f64,
    pub n_times: usize,
}

/// Mode fits plus the zero-frequency extrapolation of the effective symbol.
#[derive(Debug, Clone)]
pub struct DirectSymbolEstimate {
    pub modes: Vec<ModeDecay>,
    pub q_direct: f64,
    pub q_direct_stderr: f64,
}

fn mode_transform(
    lat: &LatticeBox,
    mean: &[f64],
    nsites: usize,
    ti: usize,
    xi: &[f64],
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for site in 0..nsites {
        let c = lat.centered_coords_of(site);
        let phase: f64 = c.iter().zip(xi).map(|(&ci, &x)| ci as f64 * x).sum();
        acc += Complex64::from_polar(1.0, phase) * mean[ti * nsites + site];
    }
    acc
}

fn fit_modes(
    lat: &LatticeBox,
    times: &[usize],
    mean: &[f64],
    modes: &[Vec<f64>],
    window: (usize, usize),
) -> Result<Vec<(f64, f64, LinFit)>> {
    let nsites = lat.nsites();
    let mut out = Vec::with_capacity(modes.len());
    for xi in modes {
        if xi.len() != lat.d() {
            return Err(Error::DimensionMismatch(
                "mode dimension differs from box dimension".into(),
            ));
        }
        let e2: f64 = xi.iter().map(|&x| 2.0 - 2.0 * x.cos()).sum();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (ti, &t) in times.iter().enumerate() {
            if t < window.0 || t > window.1 {
                continue;
            }
            let g = mode_transform(lat, mean, nsites, ti, xi).norm();
            if g > 1e-12 {
                xs.push(t as f64);
                ys.push(g.ln());
            }
        }
        if xs.len() < 3 {
            return Err(Error::Underdetermined(format!(
                "fit window for mode {xi:?} has {} points, need >= 3",
                xs.len()
            )));
        }
        let fit = weighted_linfit(&xs, &ys, None)?;
        out.push((e2, fit.slope, fit));
    }
    Ok(out)
}

fn extrapolate_symbol(fits: &[(f64, f64, LinFit)], q_of: impl Fn(f64, f64) -> f64) -> Result<f64> {
    if fits.len() == 1 {
        let (e2, rate, _) = fits[0];
        return Ok(q_of(e2, rate));
    }
    let xs: Vec<f64> = fits.iter().map(|&(e2, _, _)| e2).collect();
    let ys: Vec<f64> = fits.iter().map(|&(e2, rate, _)| q_of(e2, rate)).collect();
    Ok(weighted_linfit(&xs, &ys, None)?.intercept)
}

/// Fit `log |G^(xi, t)|` against `t` per mode. Each slope yields an
/// effective-symbol estimate `q = (1 - e^rate)/|e(xi)|^2` (the decay of a
/// constant-coefficient kernel mode is exactly `(1 - q |e|^2)^t`), and the
/// per-mode estimates are extrapolated linearly in `|e(xi)|^2` to zero
/// frequency. Uncertainties come from a jackknife over sample blocks, which
/// captures correlations between times sharing samples.
pub fn fourier_mode_decay(
    estimate: &GreenEstimate,
    modes: &[Vec<f64>],
) -> Result<DirectSymbolEstimate> {
    if modes.is_empty() {
        return Err(Error::InvalidArgument("no modes requested".into()));
    }
    let lat = estimate.lattice();
    let t_max = *estimate.times().last().unwrap();
    let window = (t_max / 8, t_max);

    let full = fit_modes(lat, estimate.times(), &estimate.mean, modes, window)?;
    let q_of = |e2: f64, rate: f64| (1.0 - rate.exp()) / e2;

    let b = estimate.n_blocks();
    let mut jack_q: Vec<Vec<f64>> = vec![Vec::with_capacity(b); modes.len()];
    let mut jack_q0: Vec<f64> = Vec::with_capacity(b);
    for drop in 0..b {
        let mean_jk = estimate.jackknife_mean(drop);
        let fits = fit_modes(lat, estimate.times(), &mean_jk, modes, window)?;
        for (mi, &(e2, rate, _)) in fits.iter().enumerate() {
            jack_q[mi].push(q_of(e2, rate));
        }
        jack_q0.push(extrapolate_symbol(&fits, q_of)?);
    }
    let jackknife_sd = |vals: &[f64]| -> f64 {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let s: f64 = vals.iter().map(|v| (v - m) * (v - m)).sum();
        ((vals.len() as f64 - 1.0) / vals.len() as f64 * s).sqrt()
    };

    let mut out_modes = Vec::with_capacity(modes.len());
    for (mi, &(e2, rate, ref fit)) in full.iter().enumerate() {
        out_modes.push(ModeDecay {
            xi: modes[mi].clone(),
            e2,
            rate,
            q_est: q_of(e2, rate),
            q_stderr: jackknife_sd(&jack_q[mi]).max(fit.sd_slope * rate.exp() / e2),
            n_times: fit.n,
        });
    }
    let q_direct = extrapolate_symbol(&full, q_of)?;
    let q_direct_stderr = jackknife_sd(&jack_q0);
    Ok(DirectSymbolEstimate {
        modes: out_modes,
        q_direct,
        q_direct_stderr,
    })
}

/// Default box side for a solver experiment at horizon `t`:
/// `nextpow2(12 sqrt(Lambda t + 1))`.
pub fn suggested_side(lambda: f64, horizon: f64) -> usize {
    let w = 12.0 * (lambda * horizon + 1.0).sqrt();
    let mut side = 16usize;
    while (side as f64) < w {
        side *= 2;
    }
    side
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BernoulliParams, EnvironmentKind};
    use crate::kernel;
    use crate::lattice::EllipticityBounds;

    fn constant_spec(kappa: f64) -> EnvironmentSpec {
        EnvironmentSpec::new(1, EnvironmentKind::Constant { kappa }, 1).unwrap()
    }

    fn bernoulli_spec(seed: u64) -> EnvironmentSpec {
        EnvironmentSpec::new(
            1,
            EnvironmentKind::IidBernoulli(BernoulliParams {
                gamma: 0.5,
                kappa: 1.0 / 12.0,
            }),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn step_keeps_constants() {
        let lat = LatticeBox::new(&[12]).unwrap();
        let b = EllipticityBounds::new(0.1, 0.1, 1).unwrap();
        let a = CoefficientSlice::scalar_constant(&lat, b, 0.1).unwrap();
        let u = ScalarField::constant(&lat, 2.5);
        let u1 = step_discrete(&u, &a).unwrap();
        assert_eq!(u1.values(), u.values());
    }

    #[test]
    fn step_delta_stencil() {
        // a = kappa I, u = delta: u'(0) = 1 - 2 kappa, u'(+-1) = kappa
        let lat = LatticeBox::new(&[10]).unwrap();
        let kappa = 0.2;
        let b = EllipticityBounds::new(kappa, kappa, 1).unwrap();
        let a = CoefficientSlice::scalar_constant(&lat, b, kappa).unwrap();
        let u = ScalarField::delta(&lat, 1.0);
        let u1 = step_discrete(&u, &a).unwrap();
        assert!((u1.values()[0] - (1.0 - 2.0 * kappa)).abs() < 1e-15);
        assert!((u1.values()[1] - kappa).abs() < 1e-15);
        assert!((u1.values()[9] - kappa).abs() < 1e-15);
    }

    #[test]
    fn step_conserves_mass_and_rejects_unstable() {
        let lat = LatticeBox::new(&[16]).unwrap();
        let spec = bernoulli_spec(3);
        let path = sample_path(&spec, &lat, TimeGrid::Discrete { n: 1 }, 0).unwrap();
        let u = ScalarField::delta(&lat, 1.0);
        let u1 = step_discrete(&u, &path.slice(0)).unwrap();
        let total: f64 = u1.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        let bad = EllipticityBounds::new(0.3, 0.3, 1).unwrap();
        let a_bad = CoefficientSlice::scalar_constant(&lat, bad, 0.3).unwrap();
        assert!(matches!(
            step_discrete(&u, &a_bad),
            Err(Error::Stability(_))
        ));
    }

    #[test]
    fn constant_path_equals_kernel_convolution() {
        let lat = LatticeBox::new(&[64]).unwrap();
        let kappa = 0.125;
        let spec = constant_spec(kappa);
        let t = 24usize;
        let path = sample_path(&spec, &lat, TimeGrid::Discrete { n: t }, 0).unwrap();

        let h: Vec<f64> = (0..64)
            .map(|s| {
                let c = lat.centered_coords_of(s)[0] as f64;
                (-c * c / 18.0).exp()
            })
            .collect();
        let got = evolve_discrete(&InitialData::Lattice(h.clone()), &path, &[t]).unwrap();

        // oracle: convolve the tabulated kernel with h directly
        let table = kernel::discrete_kernel(&lat, kappa, t).unwrap();
        let mut want = vec![0.0; 64];
        for x in 0..64 {
            let xc = lat.centered_coords_of(x)[0];
            for y in 0..64 {
                let yc = lat.centered_coords_of(y)[0];
                let site = lat.index_of(&[xc - yc]);
                want[x] += table.value(t, site) * h[y];
            }
        }
        for x in 0..64 {
            assert!(
                (got[0].values()[x] - want[x]).abs() < 1e-12,
                "site {x}: {} vs {}",
                got[0].values()[x],
                want[x]
            );
        }
    }

    #[test]
    fn gamma_zero_bernoulli_matches_constant_bitwise() {
        let lat = LatticeBox::new(&[32]).unwrap();
        let kappa = 0.125;
        let bspec = EnvironmentSpec::new(
            1,
            EnvironmentKind::IidBernoulli(BernoulliParams { gamma: 0.0, kappa }),
            9,
        )
        .unwrap();
        let cspec = constant_spec(kappa);
        let h = InitialData::Lattice({
            let mut v = vec![0.0; 32];
            v[0] = 1.0;
            v[5] = -0.25;
            v
        });
        let pb = sample_path(&bspec, &lat, TimeGrid::Discrete { n: 12 }, 0).unwrap();
        let pc = sample_path(&cspec, &lat, TimeGrid::Discrete { n: 12 }, 0).unwrap();
        let ub = evolve_discrete(&h, &pb, &[12]).unwrap();
        let uc = evolve_discrete(&h, &pc, &[12]).unwrap();
        assert_eq!(ub[0].values(), uc[0].values());
    }

    #[test]
    fn evolution_is_linear() {
        let lat = LatticeBox::new(&[24]).unwrap();
        let spec = bernoulli_spec(21);
        let path = sample_path(&spec, &lat, TimeGrid::Discrete { n: 10 }, 2).unwrap();
        let h1: Vec<f64> = (0..24).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let h2: Vec<f64> = (0..24).map(|i| ((i * 3 % 11) as f64) * 0.1).collect();
        let (alpha, beta) = (0.7, -1.3);
        let combo: Vec<f64> = h1
            .iter()
            .zip(&h2)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let u1 = evolve_discrete(&InitialData::Lattice(h1), &path, &[10]).unwrap();
        let u2 = evolve_discrete(&InitialData::Lattice(h2), &path, &[10]).unwrap();
        let uc = evolve_discrete(&InitialData::Lattice(combo), &path, &[10]).unwrap();
        for site in 0..24 {
            let want = alpha * u1[0].values()[site] + beta * u2[0].values()[site];
            let got = uc[0].values()[site];
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn positivity_for_scalar_slices() {
        let lat = LatticeBox::new(&[8]).unwrap();
        let spec = bernoulli_spec(17);
        for stream in 0..16 {
            let path = sample_path(&spec, &lat, TimeGrid::Discrete { n: 4 }, stream).unwrap();
            let mut u = ScalarField::delta(&lat, 1.0);
            for t in 0..4 {
                u = step_discrete(&u, &path.slice(t)).unwrap();
                assert!(u.values().iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn continuous_constant_matches_spectral_kernel() {
        let lat = LatticeBox::new(&[32]).unwrap();
        let kappa = 0.125;
        let spec = constant_spec(kappa);
        let path = sample_path(&spec, &lat, TimeGrid::Uniform { n: 41, dt: 0.25 }, 0).unwrap();
        let h = InitialData::delta(&lat);
        let t_end = 10.0;
        let (snaps, _) = evolve_continuous(&h, &path, &[t_end]).unwrap();
        let table = kernel::continuous_kernel(&lat, kappa, &[t_end]).unwrap();
        for s in 0..32 {
            assert!(
                (snaps[0].values()[s] - table.value(0, s)).abs() < 1e-6,
                "site {s}"
            );
        }
        let total: f64 = snaps[0].values().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn substep_halving_self_convergence() {
        let lat = LatticeBox::new(&[16]).unwrap();
        let spec = EnvironmentSpec::new(
            1,
            EnvironmentKind::IidUniformScalar { lo: 0.05, hi: 0.12 },
            5,
        )
        .unwrap();
        let path = sample_path(&spec, &lat, TimeGrid::Uniform { n: 9, dt: 0.5 }, 0).unwrap();
        let h = InitialData::delta(&lat);
        let (a, base) = evolve_continuous(&h, &path, &[4.0]).unwrap();
        let (b, _) = evolve_continuous_with_substeps(&h, &path, &[4.0], Some(base * 2)).unwrap();
        let diff: f64 = a[0]
            .values()
            .iter()
            .zip(b[0].values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let scale: f64 = a[0].values().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(diff < 1e-6 * scale.max(1.0), "diff {diff}");
    }

    #[test]
    fn green_constant_environment_has_zero_stderr() {
        let lat = LatticeBox::new(&[32]).unwrap();
        let spec = constant_spec(0.125);
        let est = green_mc_estimate(&spec, &lat, &[1, 4, 8], 8).unwrap();
        let table = kernel::discrete_kernel(&lat, 0.125, 8).unwrap();
        for (ti, &t) in est.times().iter().enumerate() {
            for site in 0..32 {
                assert_eq!(est.stderr(ti, site), 0.0);
                assert!((est.mean(ti, site) - table.value(t, site)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn green_bernoulli_symmetry_and_mass() {
        let lat = LatticeBox::new(&[32]).unwrap();
        let spec = bernoulli_spec(31);
        let est = green_mc_estimate(&spec, &lat, &[4, 16], 400).unwrap();
        for ti in 0..est.times().len() {
            let mass: f64 = est.mean_slice(ti).iter().sum();
            let mass_sd: f64 = est
                .stderr_slice(ti)
                .iter()
                .map(|s| s * s)
                .sum::<f64>()
                .sqrt();
            assert!((mass - 1.0).abs() < 3.0 * mass_sd.max(1e-12), "mass {mass}");
            for site in 0..32 {
                let m = est.mean(ti, site);
                assert!((-1e-12..=1.0 + 1e-12).contains(&m));
                let c = lat.centered_coords_of(site)[0];
                let neg = lat.index_of(&[-c]);
                let diff = (m - est.mean(ti, neg)).abs();
                let sd = est.stderr(ti, site) + est.stderr(ti, neg);
                assert!(diff <= 3.0 * sd.max(1e-12), "site {site}: {diff} vs {sd}");
            }
        }
    }

    #[test]
    fn determinism_across_chunk_boundaries() {
        // same estimate regardless of how samples interleave with workers
        let lat = LatticeBox::new(&[16]).unwrap();
        let spec = bernoulli_spec(99);
        let a = green_mc_estimate(&spec, &lat, &[4], 70).unwrap();
        let b = green_mc_estimate(&spec, &lat, &[4], 70).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.stderr, b.stderr);
    }

    #[test]
    fn mode_decay_zero_mode_is_conserved() {
        let lat = LatticeBox::new(&[32]).unwrap();
        let spec = bernoulli_spec(77);
        let times: Vec<usize> = (1..=32).collect();
        let est = green_mc_estimate(&spec, &lat, &times, 64).unwrap();
        for ti in 0..est.times().len() {
            let ghat = mode_transform(&lat, &est.mean, 32, ti, &[0.0]);
            assert!((ghat.re - 1.0).abs() < 1e-10 && ghat.im.abs() < 1e-12);
        }
    }

    #[test]
    fn mode_decay_recovers_constant_coefficient() {
        let lat = LatticeBox::new(&[64]).unwrap();
        let kappa = 0.125;
        let spec = constant_spec(kappa);
        let times: Vec<usize> = (1..=64).collect();
        let est = green_mc_estimate(&spec, &lat, &times, 4).unwrap();
        let modes: Vec<Vec<f64>> = (1..=4)
            .map(|k| vec![2.0 * std::f64::consts::PI * k as f64 / 64.0])
            .collect();
        let sym = fourier_mode_decay(&est, &modes).unwrap();
        for m in &sym.modes {
            assert!(
                (m.q_est - kappa).abs() < 1e-6,
                "mode {:?}: {}",
                m.xi,
                m.q_est
            );
        }
        assert!((sym.q_direct - kappa).abs() < 1e-6, "{}", sym.q_direct);
    }

    #[test]
    fn mode_decay_bernoulli_matches_mean_coefficient() {
        // for a space-time i.i.d. environment the averaged equation has
        // exactly the mean coefficient, so q_direct estimates kappa
        let lat = LatticeBox::new(&[64]).unwrap();
        let spec = bernoulli_spec(123);
        let times: Vec<usize> = (1..=48).collect();
        let est = green_mc_estimate(&spec, &lat, &times, 600).unwrap();
        let modes: Vec<Vec<f64>> = (1..=3)
            .map(|k| vec![2.0 * std::f64::consts::PI * k as f64 / 64.0])
            .collect();
        let sym = fourier_mode_decay(&est, &modes).unwrap();
        let kappa = 1.0 / 12.0;
        assert!(
            (sym.q_direct - kappa).abs() <= 3.0 * sym.q_direct_stderr.max(1e-9),
            "{} vs {kappa} (sd {})",
            sym.q_direct,
            sym.q_direct_stderr
        );
    }
}
