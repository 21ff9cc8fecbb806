//! Random-environment samplers: i.i.d. space-time coefficient fields and the
//! massive lattice field theory driven by Langevin dynamics, plus the map
//! from field values to coefficient matrices.
//!
//! All draws go through the counter-based generator in [`crate::rng`], keyed
//! on `(seed, stream, cell, draw)` with the cell index derived from the
//! space-time coordinates, so any sub-box is reproducible independent of
//! traversal order and identical `(spec, seed)` pairs give bitwise-identical
//! paths.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fourier::FftNd;
use crate::kernel::symbol_e2;
use crate::lattice::{CoefficientSlice, EllipticityBounds, LatticeBox, ScalarField};
use crate::rng::{CounterRng, StreamKind};
use num_complex::Complex64;

/// Bernoulli contrast field `a = kappa (1 + gamma Y) I`, `Y = +-1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BernoulliParams {
    pub gamma: f64,
    pub kappa: f64,
}

impl BernoulliParams {
    pub fn bounds(&self, d: usize) -> Result<EllipticityBounds> {
        if !(0.0..1.0).contains(&self.gamma) || self.kappa <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "need gamma in [0,1) and kappa > 0, got gamma={}, kappa={}",
                self.gamma, self.kappa
            )));
        }
        EllipticityBounds::new(
            self.kappa * (1.0 - self.gamma),
            self.kappa * (1.0 + self.gamma),
            d,
        )
    }
}

/// Uniformly convex potentials with certifiable second-derivative bounds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Potential {
    /// `V(z) = curvature * |z|^2 / 2`; the Gibbs measure is exactly Gaussian.
    Quadratic { curvature: f64 },
    /// `V(z) = |z|^2/2 + epsilon * sum_j sqrt(1 + z_j^2)`, convex with
    /// `1 <= V'' <= 1 + epsilon` per component.
    Perturbed { epsilon: f64 },
}

impl Potential {
    /// Analytic bounds on the Hessian of `V`.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        match *self {
            Potential::Quadratic { curvature } => (curvature, curvature),
            Potential::Perturbed { epsilon } => (1.0, 1.0 + epsilon),
        }
    }

    /// Gradient of `V` applied componentwise to `z`.
    pub fn grad(&self, z: &[f64], out: &mut [f64]) {
        match *self {
            Potential::Quadratic { curvature } => {
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = curvature * zi;
                }
            }
            Potential::Perturbed { epsilon } => {
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = zi + epsilon * zi / (1.0 + zi * zi).sqrt();
                }
            }
        }
    }
}

/// Coefficient map `a = atilde(phi(x,t))`; bounded, C^1, with an explicit
/// Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum CoeffMap {
    /// `atilde(s) = (mid + half * tanh s) I` with `lambda = mid - half`,
    /// `Lambda = mid + half`, `|D atilde| <= half`.
    Tanh { mid: f64, half: f64 },
}

impl CoeffMap {
    pub fn bounds(&self, d: usize) -> Result<EllipticityBounds> {
        match *self {
            CoeffMap::Tanh { mid, half } => {
                if half < 0.0 || mid - half <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "tanh map needs 0 <= half < mid".into(),
                    ));
                }
                EllipticityBounds::new(mid - half, mid + half, d)
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            CoeffMap::Tanh { half, .. } => half,
        }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            CoeffMap::Tanh { mid, half } => mid + half * s.tanh(),
        }
    }
}

/// Parameters of the massive field theory environment.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LangevinSpec {
    pub mass: f64,
    pub potential: Potential,
    pub coeff_map: CoeffMap,
    /// Euler-Maruyama step.
    pub dt: f64,
    /// Burn-in horizon used when the Gibbs measure cannot be sampled exactly.
    pub t_burn: f64,
    /// Spacing of the stored coefficient grid (the solver treats coefficients
    /// as piecewise constant between grid points).
    pub grid_dt: f64,
}

impl LangevinSpec {
    /// The Euler drift step must be a contraction:
    /// `dt (4 d Lambda_V + m^2) / 2 < 1/2`.
    pub fn check_dt(&self, d: usize) -> Result<()> {
        let (_, hi) = self.potential.curvature_bounds();
        let rate = self.dt * (4.0 * d as f64 * hi + self.mass * self.mass) / 2.0;
        if !(self.dt > 0.0 && rate < 0.5) {
            return Err(Error::Stability(format!(
                "Euler step too large: dt*(4 d Lambda_V + m^2)/2 = {rate} >= 1/2"
            )));
        }
        if self.grid_dt < self.dt - 1e-12 {
            return Err(Error::InvalidArgument(
                "grid_dt must be at least dt".into(),
            ));
        }
        Ok(())
    }
}

/// Which random environment to sample.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum EnvironmentKind {
    /// `a = kappa I` everywhere; degenerate environment for exactness tests.
    Constant { kappa: f64 },
    IidBernoulli(BernoulliParams),
    /// Scalar multiple of the identity, uniform on `[lo, hi]` per cell.
    IidUniformScalar { lo: f64, hi: f64 },
    /// Diagonal matrix with independent uniform entries on `[lo, hi]`.
    IidDiagonal { lo: f64, hi: f64 },
    LangevinField(LangevinSpec),
}

/// A fully specified environment: kind, dimension, declared ellipticity and
/// master seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentSpec {
    pub d: usize,
    pub kind: EnvironmentKind,
    pub ellipticity: EllipticityBounds,
    pub seed: u64,
}

impl EnvironmentSpec {
    pub fn new(d: usize, kind: EnvironmentKind, seed: u64) -> Result<Self> {
        let ellipticity = match kind {
            EnvironmentKind::Constant { kappa } => {
                if kappa <= 0.0 {
                    return Err(Error::InvalidArgument("kappa must be positive".into()));
                }
                EllipticityBounds::new(kappa, kappa, d)?
            }
            EnvironmentKind::IidBernoulli(p) => p.bounds(d)?,
            EnvironmentKind::IidUniformScalar { lo, hi }
            | EnvironmentKind::IidDiagonal { lo, hi } => {
                if !(lo > 0.0 && hi >= lo) {
                    return Err(Error::Ellipticity(format!(
                        "need 0 < lo <= hi, got [{lo}, {hi}]"
                    )));
                }
                EllipticityBounds::new(lo, hi, d)?
            }
            EnvironmentKind::LangevinField(ls) => {
                ls.check_dt(d)?;
                ls.coeff_map.bounds(d)?
            }
        };
        Ok(EnvironmentSpec {
            d,
            kind,
            ellipticity,
            seed,
        })
    }

    pub fn is_continuous_time(&self) -> bool {
        matches!(self.kind, EnvironmentKind::LangevinField(_))
    }

    /// Whether two draws with different seeds can differ at all.
    pub fn is_random(&self) -> bool {
        match self.kind {
            EnvironmentKind::Constant { .. } => false,
            EnvironmentKind::IidBernoulli(p) => p.gamma > 0.0,
            _ => true,
        }
    }
}

/// Time grid of a coefficient path.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeGrid {
    /// Integer times `0..n`.
    Discrete { n: usize },
    /// Uniform real grid `0, dt, ..., (n-1) dt`; coefficients are piecewise
    /// constant on the cells.
    Uniform { n: usize, dt: f64 },
}

impl TimeGrid {
    pub fn len(&self) -> usize {
        match *self {
            TimeGrid::Discrete { n } | TimeGrid::Uniform { n, .. } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, i: usize) -> f64 {
        match *self {
            TimeGrid::Discrete { .. } => i as f64,
            TimeGrid::Uniform { dt, .. } => i as f64 * dt,
        }
    }
}

/// A realization of the coefficient field on a space-time box.
#[derive(Debug, Clone)]
pub struct CoefficientPath {
    lat: Arc<LatticeBox>,
    grid: TimeGrid,
    bounds: EllipticityBounds,
    /// `d*d` floats per site, time-major: `data[ti * nsites * dd ..]`.
    data: Vec<f64>,
    /// (seed, stream) provenance.
    pub seed: u64,
    pub stream: u32,
}

impl CoefficientPath {
    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn bounds(&self) -> EllipticityBounds {
        self.bounds
    }

    pub fn n_times(&self) -> usize {
        self.grid.len()
    }

    /// Raw matrix entries of the slice at time index `ti`.
    pub fn slice_data(&self, ti: usize) -> &[f64] {
        let n = self.lat.nsites() * self.lat.d() * self.lat.d();
        &self.data[ti * n..(ti + 1) * n]
    }

    /// Owned coefficient slice at time index `ti`.
    pub fn slice(&self, ti: usize) -> CoefficientSlice {
        CoefficientSlice::new_unchecked(&self.lat, self.bounds, self.slice_data(ti).to_vec())
            .expect("path slices are shape-consistent by construction")
    }

    /// Validate ellipticity on every slice (exhaustively on small boxes,
    /// sampled on large ones).
    pub fn validate(&self) -> Result<()> {
        for ti in 0..self.n_times() {
            self.slice(ti).validate_ellipticity()?;
        }
        Ok(())
    }

    /// Space-time mean of the matrix entries.
    pub fn mean_matrix(&self) -> Vec<f64> {
        let dd = self.lat.d() * self.lat.d();
        let mut acc = vec![0.0; dd];
        let cells = self.lat.nsites() * self.n_times();
        for chunk in self.data.chunks_exact(dd) {
            for (a, &v) in acc.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= cells as f64);
        acc
    }

    /// CSV rows `x_1..x_d, t, a_11..a_dd`.
    pub fn to_csv(&self) -> String {
        let d = self.lat.d();
        let dd = d * d;
        let mut out = String::new();
        for i in 0..d {
            out.push_str(&format!("x{},", i + 1));
        }
        out.push('t');
        for i in 0..d {
            for j in 0..d {
                out.push_str(&format!(",a{}{}", i + 1, j + 1));
            }
        }
        out.push('\n');
        for ti in 0..self.n_times() {
            let t = self.grid.time(ti);
            let sd = self.slice_data(ti);
            for site in 0..self.lat.nsites() {
                let c = self.lat.centered_coords_of(site);
                for ci in &c {
                    out.push_str(&format!("{ci},"));
                }
                out.push_str(&format!("{t}"));
                for k in 0..dd {
                    out.push_str(&format!(",{}", sd[site * dd + k]));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// A realization of the scalar field `phi(x, t)` on a space-time box.
#[derive(Debug, Clone)]
pub struct FieldPath {
    lat: Arc<LatticeBox>,
    grid: TimeGrid,
    /// time-major: `values[ti * nsites + site]`
    values: Vec<f64>,
}

impl FieldPath {
    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn slice(&self, ti: usize) -> &[f64] {
        let n = self.lat.nsites();
        &self.values[ti * n..(ti + 1) * n]
    }

    pub fn n_times(&self) -> usize {
        self.grid.len()
    }
}

fn cell_index(nsites: usize, site: usize, ti: usize) -> u64 {
    ti as u64 * nsites as u64 + site as u64
}

/// Constant path `a = kappa I`.
pub fn sample_constant(
    spec: &EnvironmentSpec,
    lat: &Arc<LatticeBox>,
    grid: TimeGrid,
    stream: u32,
) -> Result<CoefficientPath> {
    let kappa = match spec.kind {
        EnvironmentKind::Constant { kappa } => kappa,
        _ => {
            return Err(Error::InvalidArgument(
                "sample_constant requires a constant environment spec".into(),
            ))
        }
    };
    let d = lat.d();
    let dd = d * d;
    let n = lat.nsites();
    let nt = grid.len();
    let mut data = vec![0.0; nt * n * dd];
    for cell in 0..nt * n {
        for i in 0..d {
            data[cell * dd + i * d + i] = kappa;
        }
    }
    Ok(CoefficientPath {
        lat: Arc::clone(lat),
        grid,
        bounds: spec.ellipticity,
        data,
        seed: spec.seed,
        stream,
    })
}

/// Independent `Y = +-1` per space-time cell, `a = kappa (1 + gamma Y) I`.
pub fn sample_iid_bernoulli(
    spec: &EnvironmentSpec,
    lat: &Arc<LatticeBox>,
    grid: TimeGrid,
    stream: u32,
) -> Result<CoefficientPath> {
    let p = match spec.kind {
        EnvironmentKind::IidBernoulli(p) => p,
        _ => {
            return Err(Error::InvalidArgument(
                "sample_iid_bernoulli requires a Bernoulli spec".into(),
            ))
        }
    };
    if matches!(grid, TimeGrid::Discrete { .. }) {
        spec.ellipticity.check_discrete_time()?;
    }
    let rng = CounterRng::new(spec.seed, stream);
    let d = lat.d();
    let dd = d * d;
    let n = lat.nsites();
    let nt = grid.len();
    let mut data = vec![0.0; nt * n * dd];
    for ti in 0..nt {
        for site in 0..n {
            let y = rng.sign(StreamKind::EnvSite, cell_index(n, site, ti), 0);
            let v = p.kappa * (1.0 + p.gamma * y);
            let base = (ti * n + site) * dd;
            for i in 0..d {
                data[base + i * d + i] = v;
            }
        }
    }
    Ok(CoefficientPath {
        lat: Arc::clone(lat),
        grid,
        bounds: spec.ellipticity,
        data,
        seed: spec.seed,
        stream,
    })
}

/// General i.i.d. families: scalar uniform or diagonal uniform per cell.
pub fn sample_iid_general(
    spec: &EnvironmentSpec,
    lat: &Arc<LatticeBox>,
    grid: TimeGrid,
    stream: u32,
) -> Result<CoefficientPath> {
    let (lo, hi, diagonal) = match spec.kind {
        EnvironmentKind::IidUniformScalar { lo, hi } => (lo, hi, false),
        EnvironmentKind::IidDiagonal { lo, hi } => (lo, hi, true),
        _ => {
            return Err(Error::InvalidArgument(
                "sample_iid_general requires a uniform-scalar or diagonal spec".into(),
            ))
        }
    };
    if matches!(grid, TimeGrid::Discrete { .. }) {
        spec.ellipticity.check_discrete_time()?;
    }
    let rng = CounterRng::new(spec.seed, stream);
    let d = lat.d();
    let dd = d * d;
    let n = lat.nsites();
    let nt = grid.len();
    let mut data = vec![0.0; nt * n * dd];
    for ti in 0..nt {
        for site in 0..n {
            let cell = cell_index(n, site, ti);
            let base = (ti * n + site) * dd;
            if diagonal {
                for i in 0..d {
                    let u = rng.u01(StreamKind::EnvSite, cell, i as u32);
                    data[base + i * d + i] = lo + (hi - lo) * u;
                }
            } else {
                let u = rng.u01(StreamKind::EnvSite, cell, 0);
                let v = lo + (hi - lo) * u;
                for i in 0..d {
                    data[base + i * d + i] = v;
                }
            }
        }
    }
    Ok(CoefficientPath {
        lat: Arc::clone(lat),
        grid,
        bounds: spec.ellipticity,
        data,
        seed: spec.seed,
        stream,
    })
}

/// Exact spectral sample of the Gaussian field with covariance
/// `(curvature * div grad + m^2)^{-1}`: filter white noise by the inverse
/// square root of the symbol.
pub fn gaussian_field_sample(
    lat: &Arc<LatticeBox>,
    curvature: f64,
    mass: f64,
    rng: &CounterRng,
    draw_salt: u32,
) -> ScalarField {
    let n = lat.nsites();
    let fft = FftNd::new(lat.dims());
    let mut buf: Vec<Complex64> = (0..n)
        .map(|site| {
            Complex64::new(
                rng.normal(StreamKind::GibbsInit, site as u64, draw_salt),
                0.0,
            )
        })
        .collect();
    fft.forward(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let sym = curvature * symbol_e2(lat, k) + mass * mass;
        *v *= Complex64::new(1.0 / sym.sqrt(), 0.0);
    }
    fft.inverse(&mut buf);
    let values = buf.iter().map(|c| c.re).collect();
    ScalarField::from_values(lat, values).expect("finite by construction")
}

/// Exact variance of `phi(x)` under the Gaussian measure above.
pub fn gaussian_site_variance(lat: &LatticeBox, curvature: f64, mass: f64) -> f64 {
    let n = lat.nsites();
    (0..n)
        .map(|k| 1.0 / (curvature * symbol_e2(lat, k) + mass * mass))
        .sum::<f64>()
        / n as f64
}

/// Exact two-point function `<phi(0) phi(x)>` for a coordinate offset.
pub fn gaussian_covariance(lat: &LatticeBox, curvature: f64, mass: f64, offset: &[i64]) -> f64 {
    let n = lat.nsites();
    let mut acc = 0.0;
    for k in 0..n {
        let kc = lat.coords_of(k);
        let mut phase = 0.0;
        for (axis, &kci) in kc.iter().enumerate() {
            phase += crate::fourier::frequency(kci as usize, lat.dims()[axis])
                * offset[axis] as f64;
        }
        acc += phase.cos() / (curvature * symbol_e2(lat, k) + mass * mass);
    }
    acc / n as f64
}

/// Initial field distributed (approximately, for non-quadratic potentials)
/// per the finite-volume Gibbs measure: exact spectral sampling for quadratic
/// `V`, Langevin burn-in from zero otherwise.
pub fn gibbs_initial(
    ls: &LangevinSpec,
    lat: &Arc<LatticeBox>,
    seed: u64,
    stream: u32,
) -> Result<ScalarField> {
    ls.check_dt(lat.d())?;
    let rng = CounterRng::new(seed, stream);
    match ls.potential {
        Potential::Quadratic { curvature } => {
            Ok(gaussian_field_sample(lat, curvature, ls.mass, &rng, 0))
        }
        Potential::Perturbed { .. } => {
            let zero = ScalarField::zeros(lat);
            let steps = (ls.t_burn / ls.dt).ceil() as usize;
            let out = euler_maruyama(ls, lat, &zero, steps, &rng, BURNIN_STEP_OFFSET)?;
            Ok(out)
        }
    }
}

// Burn-in noise cells must not collide with the path noise cells.
const BURNIN_STEP_OFFSET: u64 = 1 << 40;

/// Euler-Maruyama steps of
/// `d phi = -1/2 [div(V'(grad phi)) + m^2 phi] dt + dB`.
/// `step_offset` shifts the noise cell index so successive integrations from
/// the same stream stay on disjoint counters.
fn euler_maruyama(
    ls: &LangevinSpec,
    lat: &Arc<LatticeBox>,
    init: &ScalarField,
    steps: usize,
    rng: &CounterRng,
    step_offset: u64,
) -> Result<ScalarField> {
    let d = lat.d();
    let n = lat.nsites();
    let mut phi = init.values().to_vec();
    let mut grad = vec![0.0; n * d];
    let mut vprime = vec![0.0; n * d];
    let mut z = vec![0.0; d];
    let mut g = vec![0.0; d];
    let sqrt_dt = ls.dt.sqrt();
    let m2 = ls.mass * ls.mass;
    for step in 0..steps {
        for axis in 0..d {
            for site in 0..n {
                grad[axis * n + site] = phi[lat.up(site, axis)] - phi[site];
            }
        }
        for site in 0..n {
            for axis in 0..d {
                z[axis] = grad[axis * n + site];
            }
            ls.potential.grad(&z, &mut g);
            for axis in 0..d {
                vprime[axis * n + site] = g[axis];
            }
        }
        let cell_base = (step as u64 + step_offset) * n as u64;
        for site in 0..n {
            // div of V'(grad phi) with the adjoint convention
            let mut divv = 0.0;
            for axis in 0..d {
                divv += vprime[axis * n + lat.down(site, axis)] - vprime[axis * n + site];
            }
            let drift = -0.5 * (divv + m2 * phi[site]);
            let noise = rng.normal(StreamKind::LangevinNoise, cell_base + site as u64, 0);
            phi[site] += ls.dt * drift + sqrt_dt * noise;
        }
    }
    ScalarField::from_values(lat, phi)
}

/// Integrate the field forward, recording on the uniform coefficient grid.
/// `horizon` is covered by `ceil(horizon / grid_dt)` grid cells; each grid
/// cell is integrated with `round(grid_dt / dt)` Euler-Maruyama substeps.
pub fn langevin_path(
    ls: &LangevinSpec,
    lat: &Arc<LatticeBox>,
    init: &ScalarField,
    horizon: f64,
    seed: u64,
    stream: u32,
) -> Result<FieldPath> {
    ls.check_dt(lat.d())?;
    if horizon <= 0.0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let n_cells = (horizon / ls.grid_dt).ceil() as usize;
    let substeps = (ls.grid_dt / ls.dt).round().max(1.0) as usize;
    let rng = CounterRng::new(seed, stream);
    let n = lat.nsites();
    let mut values = Vec::with_capacity((n_cells + 1) * n);
    values.extend_from_slice(init.values());
    let mut cur = init.clone();
    for cell in 0..n_cells {
        let offset = cell as u64 * substeps as u64;
        cur = euler_maruyama(ls, lat, &cur, substeps, &rng, offset)?;
        values.extend_from_slice(cur.values());
    }
    Ok(FieldPath {
        lat: Arc::clone(lat),
        grid: TimeGrid::Uniform {
            n: n_cells + 1,
            dt: ls.grid_dt,
        },
        values,
    })
}

/// Coefficients `a(x,t) = atilde(phi(x,t)) I` on the stored grid.
pub fn coefficients_of_field(
    path: &FieldPath,
    map: &CoeffMap,
    seed: u64,
    stream: u32,
) -> Result<CoefficientPath> {
    let lat = path.lattice();
    let d = lat.d();
    let dd = d * d;
    let n = lat.nsites();
    let nt = path.n_times();
    let bounds = map.bounds(d)?;
    let mut data = vec![0.0; nt * n * dd];
    for ti in 0..nt {
        let phi = path.slice(ti);
        for site in 0..n {
            let v = map.eval(phi[site]);
            let base = (ti * n + site) * dd;
            for i in 0..d {
                data[base + i * d + i] = v;
            }
        }
    }
    Ok(CoefficientPath {
        lat: Arc::clone(lat),
        grid: path.grid.clone(),
        bounds,
        data,
        seed,
        stream,
    })
}

/// Sample a coefficient path of any kind. For discrete grids the Langevin
/// kind is rejected; for uniform grids the i.i.d. kinds draw one value per
/// grid cell.
pub fn sample_path(
    spec: &EnvironmentSpec,
    lat: &Arc<LatticeBox>,
    grid: TimeGrid,
    stream: u32,
) -> Result<CoefficientPath> {
    match spec.kind {
        EnvironmentKind::Constant { .. } => sample_constant(spec, lat, grid, stream),
        EnvironmentKind::IidBernoulli(_) => sample_iid_bernoulli(spec, lat, grid, stream),
        EnvironmentKind::IidUniformScalar { .. } | EnvironmentKind::IidDiagonal { .. } => {
            sample_iid_general(spec, lat, grid, stream)
        }
        EnvironmentKind::LangevinField(ls) => {
            let (n, dt) = match grid {
                TimeGrid::Uniform { n, dt } => (n, dt),
                TimeGrid::Discrete { .. } => {
                    return Err(Error::InvalidArgument(
                        "Langevin environment requires a uniform real time grid".into(),
                    ))
                }
            };
            if (dt - ls.grid_dt).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "grid spacing {dt} differs from the spec's grid_dt {}",
                    ls.grid_dt
                )));
            }
            let init = gibbs_initial(&ls, lat, spec.seed, stream)?;
            let horizon = (n.saturating_sub(1)).max(1) as f64 * dt;
            let fp = langevin_path(&ls, lat, &init, horizon, spec.seed, stream)?;
            coefficients_of_field(&fp, &ls.coeff_map, spec.seed, stream)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bernoulli_spec(gamma: f64, kappa: f64, seed: u64) -> EnvironmentSpec {
        EnvironmentSpec::new(
            1,
            EnvironmentKind::IidBernoulli(BernoulliParams { gamma, kappa }),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn constant_path_is_constant_and_seedless() {
        let spec = EnvironmentSpec::new(1, EnvironmentKind::Constant { kappa: 0.125 }, 7).unwrap();
        let lat = LatticeBox::new(&[8]).unwrap();
        let p1 = sample_constant(&spec, &lat, TimeGrid::Discrete { n: 4 }, 0).unwrap();
        let spec2 = EnvironmentSpec::new(1, EnvironmentKind::Constant { kappa: 0.125 }, 99).unwrap();
        let p2 = sample_constant(&spec2, &lat, TimeGrid::Discrete { n: 4 }, 3).unwrap();
        assert_eq!(p1.slice_data(2), p2.slice_data(2));
        assert!(p1.slice_data(0).iter().all(|&v| v == 0.125));
        p1.validate().unwrap();
    }

    #[test]
    fn bernoulli_values_and_mean() {
        let spec = bernoulli_spec(0.5, 1.0 / 12.0, 2024);
        let lat = LatticeBox::new(&[100]).unwrap();
        let path = sample_iid_bernoulli(&spec, &lat, TimeGrid::Discrete { n: 1000 }, 0).unwrap();
        let kappa = 1.0 / 12.0;
        let (lo, hi) = (kappa * 0.5, kappa * 1.5);
        let mut count_hi = 0usize;
        let mut sum = 0.0;
        let ncells = 100 * 1000;
        for ti in 0..1000 {
            for site in 0..100 {
                let v = path.slice_data(ti)[site];
                assert!(v == lo || v == hi, "unexpected value {v}");
                if v == hi {
                    count_hi += 1;
                }
                sum += v;
            }
        }
        // empirical mean within 3 sigma of kappa over 1e5 draws
        let mean = sum / ncells as f64;
        let sigma = kappa * 0.5 / (ncells as f64).sqrt();
        assert!((mean - kappa).abs() < 3.0 * sigma, "mean {mean}");
        // and the +-1 split is fair
        let frac = count_hi as f64 / ncells as f64;
        assert!((frac - 0.5).abs() < 3.0 * 0.5 / (ncells as f64).sqrt());
    }

    #[test]
    fn bernoulli_gamma_zero_is_constant() {
        let spec = bernoulli_spec(0.0, 0.125, 5);
        let lat = LatticeBox::new(&[16]).unwrap();
        let p = sample_iid_bernoulli(&spec, &lat, TimeGrid::Discrete { n: 8 }, 0).unwrap();
        let cspec = EnvironmentSpec::new(1, EnvironmentKind::Constant { kappa: 0.125 }, 5).unwrap();
        let c = sample_constant(&cspec, &lat, TimeGrid::Discrete { n: 8 }, 0).unwrap();
        for ti in 0..8 {
            assert_eq!(p.slice_data(ti), c.slice_data(ti));
        }
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let spec = bernoulli_spec(0.5, 1.0 / 12.0, 123);
        let lat = LatticeBox::new(&[32]).unwrap();
        let a = sample_iid_bernoulli(&spec, &lat, TimeGrid::Discrete { n: 32 }, 4).unwrap();
        let b = sample_iid_bernoulli(&spec, &lat, TimeGrid::Discrete { n: 32 }, 4).unwrap();
        assert_eq!(a.slice_data(31), b.slice_data(31));
        let c = sample_iid_bernoulli(&spec, &lat, TimeGrid::Discrete { n: 32 }, 5).unwrap();
        assert_ne!(a.slice_data(31), c.slice_data(31));
    }

    #[test]
    fn iid_autocovariance_vanishes_at_nonzero_lag() {
        let spec = bernoulli_spec(0.5, 1.0 / 12.0, 77);
        let lat = LatticeBox::new(&[64]).unwrap();
        let nt = 512;
        let path = sample_iid_bernoulli(&spec, &lat, TimeGrid::Discrete { n: nt }, 0).unwrap();
        let kappa = 1.0 / 12.0;
        let var = (kappa * 0.5) * (kappa * 0.5);
        // spatial lag 1 and temporal lag 1
        let mut cov_x = 0.0;
        let mut cov_t = 0.0;
        let n = 64;
        for ti in 0..nt - 1 {
            let s0 = path.slice_data(ti);
            let s1 = path.slice_data(ti + 1);
            for site in 0..n {
                let a = s0[site] - kappa;
                cov_x += a * (s0[(site + 1) % n] - kappa);
                cov_t += a * (s1[site] - kappa);
            }
        }
        let m = ((nt - 1) * n) as f64;
        cov_x /= m;
        cov_t /= m;
        let band = 3.0 * var / m.sqrt();
        assert!(cov_x.abs() < band, "spatial lag-1 cov {cov_x}");
        assert!(cov_t.abs() < band, "temporal lag-1 cov {cov_t}");
    }

    #[test]
    fn uniform_scalar_mean_and_bounds() {
        let spec = EnvironmentSpec::new(
            2,
            EnvironmentKind::IidUniformScalar {
                lo: 0.02,
                hi: 0.06,
            },
            9,
        )
        .unwrap();
        let lat = LatticeBox::new(&[20, 20]).unwrap();
        let path = sample_iid_general(&spec, &lat, TimeGrid::Discrete { n: 50 }, 0).unwrap();
        path.validate().unwrap();
        let mean = path.mean_matrix();
        let ncells = (400 * 50) as f64;
        let sigma = (0.06 - 0.02) / (12.0f64).sqrt() / ncells.sqrt();
        assert!((mean[0] - 0.04).abs() < 3.0 * sigma);
        assert!((mean[3] - 0.04).abs() < 3.0 * sigma);
        assert!(mean[1].abs() < 1e-15);
    }

    #[test]
    fn diagonal_family_validates() {
        let spec = EnvironmentSpec::new(
            2,
            EnvironmentKind::IidDiagonal {
                lo: 0.02,
                hi: 0.06,
            },
            10,
        )
        .unwrap();
        let lat = LatticeBox::new(&[8, 8]).unwrap();
        let path = sample_iid_general(&spec, &lat, TimeGrid::Discrete { n: 4 }, 0).unwrap();
        path.validate().unwrap();
        // off-diagonal entries differ (independent draws)
        let s = path.slice_data(0);
        assert_ne!(s[0], s[3]);
    }

    fn quad_langevin(mass: f64) -> LangevinSpec {
        LangevinSpec {
            mass,
            potential: Potential::Quadratic { curvature: 1.0 },
            coeff_map: CoeffMap::Tanh {
                mid: 0.08,
                half: 0.04,
            },
            dt: 0.01,
            t_burn: 4.0,
            grid_dt: 0.05,
        }
    }

    #[test]
    fn gibbs_variance_matches_spectral_formula() {
        // d=1, L=16, curvature 1, m=1: Var[phi(0)] = (1/L) sum 1/(|e|^2 + 1)
        let lat = LatticeBox::new(&[16]).unwrap();
        let ls = quad_langevin(1.0);
        let exact = gaussian_site_variance(&lat, 1.0, 1.0);
        let nsamp = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for s in 0..nsamp {
            let phi = gibbs_initial(&ls, &lat, 42, s).unwrap();
            let v = phi.values()[0];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / nsamp as f64;
        let var = sumsq / nsamp as f64 - mean * mean;
        let sigma_var = exact * (2.0 / nsamp as f64).sqrt();
        assert!((var - exact).abs() < 3.0 * sigma_var, "{var} vs {exact}");
        let sigma_mean = (exact / nsamp as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}");
    }

    #[test]
    fn large_mass_variance_limit() {
        // Var -> 1/m^2 with O(1/m^4) error, by the spectral formula
        let lat = LatticeBox::new(&[16]).unwrap();
        for m in [10.0, 20.0] {
            let v = gaussian_site_variance(&lat, 1.0, m);
            let err = (v - 1.0 / (m * m)).abs();
            assert!(err < 8.0 / (m * m * m * m), "m={m}: err {err}");
        }
    }

    #[test]
    fn langevin_stationarity_quadratic() {
        // starting from the exact Gibbs measure, Var[phi(0,t)] stays constant
        // within 3 sigma plus an O(dt) bias allowance
        let lat = LatticeBox::new(&[16]).unwrap();
        let ls = quad_langevin(1.0);
        let exact = gaussian_site_variance(&lat, 1.0, 1.0);
        let nsamp = 4000;
        let mut var_end = 0.0;
        for s in 0..nsamp {
            let init = gibbs_initial(&ls, &lat, 4242, s).unwrap();
            let fp = langevin_path(&ls, &lat, &init, 1.0, 4242, s).unwrap();
            let v = fp.slice(fp.n_times() - 1)[0];
            var_end += v * v;
        }
        var_end /= nsamp as f64;
        let sigma = exact * (2.0 / nsamp as f64).sqrt();
        let dt_bias = 0.02 * exact;
        assert!(
            (var_end - exact).abs() < 3.0 * sigma + dt_bias,
            "{var_end} vs {exact}"
        );
    }

    #[test]
    fn langevin_coefficients_pass_ellipticity() {
        let lat = LatticeBox::new(&[8]).unwrap();
        let ls = LangevinSpec {
            potential: Potential::Perturbed { epsilon: 0.5 },
            ..quad_langevin(1.0)
        };
        let spec = EnvironmentSpec::new(1, EnvironmentKind::LangevinField(ls), 11).unwrap();
        let path = sample_path(
            &spec,
            &lat,
            TimeGrid::Uniform { n: 20, dt: 0.05 },
            0,
        )
        .unwrap();
        path.validate().unwrap();
        assert_eq!(path.n_times(), 20);
    }

    #[test]
    fn two_seeds_differ_but_statistics_agree() {
        let lat = LatticeBox::new(&[16]).unwrap();
        let ls = quad_langevin(1.0);
        let spec_a = EnvironmentSpec::new(1, EnvironmentKind::LangevinField(ls), 1).unwrap();
        let spec_b = EnvironmentSpec::new(1, EnvironmentKind::LangevinField(ls), 2).unwrap();
        let grid = TimeGrid::Uniform { n: 400, dt: 0.05 };
        let pa = sample_path(&spec_a, &lat, grid.clone(), 0).unwrap();
        let pb = sample_path(&spec_b, &lat, grid, 0).unwrap();
        assert_ne!(pa.slice_data(10), pb.slice_data(10));
        let ma = pa.mean_matrix()[0];
        let mb = pb.mean_matrix()[0];
        // both hover near the midpoint of the tanh map
        assert!((ma - 0.08).abs() < 0.012, "{ma}");
        assert!((mb - 0.08).abs() < 0.012, "{mb}");
    }

    #[test]
    fn langevin_dt_guard() {
        let mut ls = quad_langevin(1.0);
        ls.dt = 0.3; // dt*(4*1*1+1)/2 = 0.75 >= 0.5
        assert!(ls.check_dt(1).is_err());
    }
}
