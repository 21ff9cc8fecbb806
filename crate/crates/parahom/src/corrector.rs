//! The Fourier-space corrector pipeline.
//!
//! Abstract stationary fields are realized as space-time fields on the
//! sampled periodic box, which turns the resolvent operator
//!
//! ```text
//! (T g)(x, t) = Lambda * sum_{s >= 0} e^{-eta (s+1)}
//!               sum_{x'} {grad grad* G(x', s)}^T e^{-i x'.xi} g(x + x', t + s + 1)
//! ```
//!
//! into a concrete space-time convolution, evaluated exactly on the box as a
//! Fourier multiplier (the damped kernel is folded onto the box's discrete
//! frequencies, so periodization is exact rather than truncated). The cell
//! problem
//!
//! ```text
//! psi = P T[b psi] + P T[b v],   b = I - a/Lambda,  |b| <= 1 - lambda/Lambda
//! ```
//!
//! is solved by Neumann iteration (a contraction), `P` realized as
//! subtraction of the space-time box mean. The effective matrix is
//! `q = <a> + <a psi>` averaged over the box and over environment samples,
//! and `q(0,0)` is reached by extrapolating an `eta` ladder in `sqrt(eta)`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bounds::weighted_linfit;
use crate::env::{sample_path, CoefficientPath, EnvironmentSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::fourier::FftNd;
use crate::kernel::{KernelFlavor, KernelTable};
use crate::lattice::LatticeBox;

/// Frequency-domain evaluation point: real spatial frequency `xi` and the
/// resolvent parameter `eta` with positive real part.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPoint {
    pub xi: Vec<f64>,
    pub eta: Complex64,
}

impl FrequencyPoint {
    pub fn new(xi: Vec<f64>, eta: Complex64) -> Result<Self> {
        if eta.re <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "need Re eta > 0, got {eta}"
            )));
        }
        Ok(FrequencyPoint { xi, eta })
    }
}

/// Phase vector `e_j(xi) = exp(-i xi_j) - 1`.
pub fn phase_vector(xi: &[f64]) -> Vec<Complex64> {
    xi.iter()
        .map(|&x| Complex64::from_polar(1.0, -x) - 1.0)
        .collect()
}

/// `|e(xi)|^2 = sum_j (2 - 2 cos xi_j)`.
pub fn phase_norm2(xi: &[f64]) -> f64 {
    xi.iter().map(|&x| 2.0 - 2.0 * x.cos()).sum()
}

/// Complex field with `d` components on a space-time box, component-major,
/// each component stored row-major over `[spatial dims..., nt]`.
#[derive(Debug, Clone)]
pub struct StVectorField {
    lat: Arc<LatticeBox>,
    nt: usize,
    values: Vec<Complex64>,
}

impl StVectorField {
    pub fn zeros(lat: &Arc<LatticeBox>, nt: usize) -> Self {
        StVectorField {
            lat: Arc::clone(lat),
            nt,
            values: vec![Complex64::new(0.0, 0.0); lat.d() * lat.nsites() * nt],
        }
    }

    pub fn constant(lat: &Arc<LatticeBox>, nt: usize, v: &[Complex64]) -> Self {
        let mut out = Self::zeros(lat, nt);
        for (c, &vc) in v.iter().enumerate() {
            out.component_mut(c).fill(vc);
        }
        out
    }

    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn n_cells(&self) -> usize {
        self.lat.nsites() * self.nt
    }

    #[inline]
    pub fn component(&self, c: usize) -> &[Complex64] {
        let m = self.n_cells();
        &self.values[c * m..(c + 1) * m]
    }

    #[inline]
    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let m = self.n_cells();
        &mut self.values[c * m..(c + 1) * m]
    }

    /// Root-mean-square norm over cells (the box surrogate of the abstract
    /// mean-square norm).
    pub fn rms_norm(&self) -> f64 {
        let m = self.n_cells() as f64;
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / m).sqrt()
    }

    /// Subtract the per-component mean over the box (the projection
    /// orthogonal to constants, realized on the box).
    pub fn project_out_mean(&mut self) {
        let d = self.lat.d();
        let m = self.n_cells() as f64;
        for c in 0..d {
            let comp = self.component_mut(c);
            let mean: Complex64 = comp.iter().sum::<Complex64>() / m;
            comp.iter_mut().for_each(|v| *v -= mean);
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Complex scalar field on the space-time box.
#[derive(Debug, Clone)]
pub struct StScalarField {
    lat: Arc<LatticeBox>,
    nt: usize,
    pub values: Vec<Complex64>,
}

impl StScalarField {
    pub fn zeros(lat: &Arc<LatticeBox>, nt: usize) -> Self {
        StScalarField {
            lat: Arc::clone(lat),
            nt,
            values: vec![Complex64::new(0.0, 0.0); lat.nsites() * nt],
        }
    }

    pub fn from_values(lat: &Arc<LatticeBox>, nt: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != lat.nsites() * nt {
            return Err(Error::DimensionMismatch(
                "space-time field length mismatch".into(),
            ));
        }
        Ok(StScalarField {
            lat: Arc::clone(lat),
            nt,
            values,
        })
    }

    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    pub fn nt(&self) -> usize {
        self.nt
    }
}

/// Bloch-twisted forward gradient
/// `(d_j psi)(x,t) = e^{-i xi_j} psi(x+e_j, t) - psi(x, t)`.
pub fn twisted_gradient(psi: &StScalarField, xi: &[f64]) -> Result<StVectorField> {
    let lat = psi.lattice();
    let d = lat.d();
    if xi.len() != d {
        return Err(Error::DimensionMismatch(
            "frequency dimension differs from box dimension".into(),
        ));
    }
    let nt = psi.nt;
    let n = lat.nsites();
    let mut out = StVectorField::zeros(lat, nt);
    for axis in 0..d {
        let phase = Complex64::from_polar(1.0, -xi[axis]);
        let comp = out.component_mut(axis);
        for site in 0..n {
            let up = lat.up(site, axis);
            for t in 0..nt {
                comp[site * nt + t] = phase * psi.values[up * nt + t] - psi.values[site * nt + t];
            }
        }
    }
    Ok(out)
}

/// Adjoint of the twisted gradient:
/// `sum_j e^{+i xi_j} v_j(x - e_j, t) - v_j(x, t)`.
pub fn twisted_divergence(v: &StVectorField, xi: &[f64]) -> Result<StScalarField> {
    let lat = Arc::clone(v.lattice());
    let d = lat.d();
    if xi.len() != d {
        return Err(Error::DimensionMismatch(
            "frequency dimension differs from box dimension".into(),
        ));
    }
    let nt = v.nt;
    let n = lat.nsites();
    let mut out = StScalarField::zeros(&lat, nt);
    for axis in 0..d {
        let phase = Complex64::from_polar(1.0, xi[axis]);
        let comp = v.component(axis);
        for site in 0..n {
            let dn = lat.down(site, axis);
            for t in 0..nt {
                out.values[site * nt + t] += phase * comp[dn * nt + t] - comp[site * nt + t];
            }
        }
    }
    Ok(out)
}

/// The resolvent convolution operator on a fixed space-time box, prepared as
/// an exact Fourier multiplier. Construction is done once per
/// `(xi, eta, box, kernel)` and shared read-only across samples and
/// iterations.
pub struct CorrectorOperator {
    lat: Arc<LatticeBox>,
    nt: usize,
    d: usize,
    /// `d*d` multiplier entries, entry-major:
    /// `multiplier[(j*d + k) * bins + bin]` multiplies component `k` of the
    /// input spectrum into component `j` of the output spectrum.
    multiplier: Vec<Complex64>,
    fft: FftNd,
    pub xi: Vec<f64>,
    pub eta: Complex64,
    /// Bound on the discarded kernel tail (time truncation of the damped
    /// kernel, plus the phase-wrap term when `xi != 0`).
    pub tail_bound: f64,
}

impl CorrectorOperator {
    /// Build the multiplier from a tabulated kernel. The table's time extent
    /// must make the damped tail negligible: the bound
    /// `Lambda * sum_{t > T} e^{-Re eta (t+1)} |grad grad* G|_1` (estimated
    /// from the last tabulated slice, which dominates later ones) has to be
    /// below `tail_tol`, otherwise the construction is rejected.
    pub fn from_table(
        table: &KernelTable,
        nt: usize,
        xi: &[f64],
        eta: Complex64,
        tail_tol: f64,
    ) -> Result<Self> {
        let lat = Arc::clone(table.lattice());
        let d = lat.d();
        if xi.len() != d {
            return Err(Error::DimensionMismatch(
                "frequency dimension differs from kernel dimension".into(),
            ));
        }
        if eta.re <= 0.0 {
            return Err(Error::InvalidArgument("need Re eta > 0".into()));
        }
        if nt < 2 {
            return Err(Error::InvalidArgument("need nt >= 2".into()));
        }
        let n = lat.nsites();
        let dd = d * d;
        let lambda = table.lambda();
        let spatial_fft = FftNd::new(lat.dims());

        // modulation phases e^{-i x.xi} on centered representatives, and the
        // index reversal that turns the forward FFT into the positive-sign
        // transform
        let phases: Vec<Complex64> = (0..n)
            .map(|site| {
                let c = lat.centered_coords_of(site);
                let phase: f64 = c.iter().zip(xi).map(|(&ci, &x)| -(ci as f64) * x).sum();
                Complex64::from_polar(1.0, phase)
            })
            .collect();
        let rev: Vec<usize> = (0..n).map(|site| reverse_index(&lat, site)).collect();

        // folded, damped kernel: folded[(entry) * (n * nt) + site * nt + s]
        let mut folded = vec![Complex64::new(0.0, 0.0); dd * n * nt];
        let mut slice_entries = vec![Complex64::new(0.0, 0.0); dd * n];
        let mut last_l1 = 0.0;

        let n_slices = table.times().len();
        let mut grad2 = vec![0.0; dd * n];
        for ti in 0..n_slices {
            let g = table.slice(ti);
            // B_{jk}(x) = grad_j grad*_k G(x); the operator applies the
            // transpose, modulated by e^{-i x.xi}
            for site in 0..n {
                for k in 0..d {
                    let dnk = lat.down(site, k);
                    for j in 0..d {
                        let upj = lat.up(site, j);
                        let a = g[lat.down(upj, k)] - g[upj];
                        let b = g[dnk] - g[site];
                        grad2[(j * d + k) * n + site] = a - b;
                    }
                }
            }
            let mut l1 = 0.0;
            for site in 0..n {
                for j in 0..d {
                    for k in 0..d {
                        let v = grad2[(k * d + j) * n + site];
                        slice_entries[(j * d + k) * n + site] = phases[site] * v;
                        l1 += v.abs();
                    }
                }
            }
            last_l1 = l1 / dd as f64;

            for e in 0..dd {
                spatial_fft.forward(&mut slice_entries[e * n..(e + 1) * n]);
            }

            // damped deposits: (fold bin, complex weight)
            let mut deposits: [(usize, Complex64); 2] =
                [(0, Complex64::new(0.0, 0.0)), (0, Complex64::new(0.0, 0.0))];
            let n_dep = match table.flavor() {
                KernelFlavor::DiscreteTime => {
                    let t = table.times()[ti];
                    deposits[0] = (
                        ((t as usize) + 1) % nt,
                        lambda * (-eta * (t + 1.0)).exp(),
                    );
                    1
                }
                KernelFlavor::ContinuousTime => {
                    // trapezoid rule: slice ti is the left endpoint of grid
                    // cell ti and the right endpoint of cell ti - 1
                    let times = table.times();
                    let t = times[ti];
                    let damp = lambda * (-eta * t).exp();
                    let mut cnt = 0;
                    if ti + 1 < n_slices {
                        let half = (times[ti + 1] - t) / 2.0;
                        deposits[cnt] = (ti % nt, damp * half);
                        cnt += 1;
                    }
                    if ti > 0 {
                        let half = (t - times[ti - 1]) / 2.0;
                        deposits[cnt] = ((ti - 1) % nt, damp * half);
                        cnt += 1;
                    }
                    cnt
                }
            };
            for e in 0..dd {
                let src = &slice_entries[e * n..(e + 1) * n];
                let dst = &mut folded[e * n * nt..(e + 1) * n * nt];
                for (site, &v) in src.iter().enumerate() {
                    for &(s_bin, w) in deposits.iter().take(n_dep) {
                        dst[rev[site] * nt + s_bin] += w * v;
                    }
                }
            }
        }

        // certified bound on the discarded damped tail
        let tail_bound = match table.flavor() {
            KernelFlavor::DiscreteTime => {
                let t_last = *table.times().last().unwrap();
                let r = (-eta.re).exp();
                lambda * last_l1 * r.powf(t_last + 2.0) / (1.0 - r)
            }
            KernelFlavor::ContinuousTime => {
                let t_last = *table.times().last().unwrap();
                lambda * last_l1 * (-eta.re * t_last).exp() / eta.re
            }
        };
        if tail_bound > tail_tol {
            return Err(Error::TailTolerance(format!(
                "damped kernel tail bound {tail_bound:.3e} exceeds {tail_tol:.3e}; \
                 extend the kernel table"
            )));
        }

        // transform the fold axis: multiplier bin m gets
        // sum_s folded[s] e^{+2 pi i m s / nt}
        let time_fft = FftNd::new(&[nt]);
        let mut line = vec![Complex64::new(0.0, 0.0); nt];
        let mut multiplier = folded;
        for row in multiplier.chunks_exact_mut(nt) {
            line.copy_from_slice(row);
            time_fft.inverse(&mut line);
            // FftNd::inverse normalizes by 1/nt; undo it
            for (dst, &v) in row.iter_mut().zip(&line) {
                *dst = v * nt as f64;
            }
        }

        Ok(CorrectorOperator {
            fft: FftNd::new(
                &lat
                    .dims()
                    .iter()
                    .copied()
                    .chain(std::iter::once(nt))
                    .collect::<Vec<_>>(),
            ),
            lat,
            nt,
            d,
            multiplier,
            xi: xi.to_vec(),
            eta,
            tail_bound,
        })
    }

    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    /// Apply the operator to a field (no projection).
    pub fn apply(&self, g: &StVectorField) -> Result<StVectorField> {
        let mut out = g.clone();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }

    pub fn apply_in_place(&self, g: &mut StVectorField) -> Result<()> {
        if !crate::lattice::same_box(&g.lat, &self.lat) || g.nt != self.nt {
            return Err(Error::DimensionMismatch(
                "field box does not match the operator box".into(),
            ));
        }
        let d = self.d;
        let bins = self.lat.nsites() * self.nt;
        for c in 0..d {
            self.fft.forward(g.component_mut(c));
        }
        if d == 1 {
            let m = &self.multiplier;
            for (v, mv) in g.component_mut(0).iter_mut().zip(m) {
                *v *= mv;
            }
        } else {
            let mut spec = vec![Complex64::new(0.0, 0.0); d];
            for bin in 0..bins {
                for (c, s) in spec.iter_mut().enumerate() {
                    *s = g.component(c)[bin];
                }
                for j in 0..d {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (k, &s) in spec.iter().enumerate() {
                        acc += self.multiplier[(j * d + k) * bins + bin] * s;
                    }
                    g.component_mut(j)[bin] = acc;
                }
            }
        }
        for c in 0..d {
            self.fft.inverse(g.component_mut(c));
        }
        Ok(())
    }
}

fn reverse_index(lat: &LatticeBox, site: usize) -> usize {
    let c = lat.coords_of(site);
    let rc: Vec<i64> = c.iter().map(|&ci| -ci).collect();
    lat.index_of(&rc)
}

/// One application of the resolvent operator built on the fly; convenience
/// wrapper over [`CorrectorOperator`].
pub fn apply_t(
    g: &StVectorField,
    xi: &[f64],
    eta: Complex64,
    table: &KernelTable,
    tail_tol: f64,
) -> Result<StVectorField> {
    let op = CorrectorOperator::from_table(table, g.nt(), xi, eta, tail_tol)?;
    op.apply(g)
}

/// Multiplication field `b(x,t) = I - a(x,t)/Lambda`, stored like the
/// coefficient path (row-major `d*d` per cell, time-major).
pub struct ContrastField {
    lat: Arc<LatticeBox>,
    nt: usize,
    d: usize,
    data: Vec<f64>,
    /// `sup_cells |b|` (largest eigenvalue magnitude over cells).
    pub sup_norm: f64,
    lambda_big: f64,
}

impl ContrastField {
    pub fn from_path(path: &CoefficientPath) -> Self {
        let lat = Arc::clone(path.lattice());
        let d = lat.d();
        let dd = d * d;
        let n = lat.nsites();
        let nt = path.n_times();
        let big = path.bounds().big_lambda;
        let mut data = vec![0.0; nt * n * dd];
        let mut sup: f64 = 0.0;
        for ti in 0..nt {
            let src = path.slice_data(ti);
            let dst = &mut data[ti * n * dd..(ti + 1) * n * dd];
            for cell in 0..n {
                for i in 0..d {
                    for j in 0..d {
                        let idx = cell * dd + i * d + j;
                        let delta = if i == j { 1.0 } else { 0.0 };
                        dst[idx] = delta - src[idx] / big;
                    }
                }
                let (lo, hi) = crate::lattice::sym_eigen_range(&dst[cell * dd..(cell + 1) * dd], d);
                sup = sup.max(lo.abs().max(hi.abs()));
            }
        }
        ContrastField {
            lat,
            nt,
            d,
            data,
            sup_norm: sup,
            lambda_big: big,
        }
    }

    pub fn big_lambda(&self) -> f64 {
        self.lambda_big
    }

    /// `out = b * (psi + v)` per cell, with `v` a constant vector.
    fn apply_shifted(&self, psi: &StVectorField, v: &[Complex64], out: &mut StVectorField) {
        let d = self.d;
        let n = self.lat.nsites();
        let nt = self.nt;
        let dd = d * d;
        if d == 1 {
            let src = psi.component(0);
            let dst = out.component_mut(0);
            for site in 0..n {
                for t in 0..nt {
                    let cell = site * nt + t;
                    // path data is time-major, fields are site-major
                    let b = self.data[t * n + site];
                    dst[cell] = (src[cell] + v[0]) * b;
                }
            }
            return;
        }
        let mut w = [Complex64::new(0.0, 0.0); 3];
        for site in 0..n {
            for t in 0..nt {
                let cell = site * nt + t;
                let b = &self.data[(t * n + site) * dd..(t * n + site + 1) * dd];
                for (k, wk) in w.iter_mut().take(d).enumerate() {
                    *wk = psi.component(k)[cell] + v[k];
                }
                for j in 0..d {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..d {
                        acc += w[k] * b[j * d + k];
                    }
                    out.component_mut(j)[cell] = acc;
                }
            }
        }
    }
}

/// Gradient of the corrector applied to a direction `v`, together with the
/// iteration diagnostics.
#[derive(Debug, Clone)]
pub struct CorrectorField {
    pub field: StVectorField,
    pub xi: Vec<f64>,
    pub eta: Complex64,
    pub iterations: usize,
    /// A-posteriori bound on the distance to the fixed point.
    pub residual: f64,
    /// Largest observed ratio of successive update norms.
    pub contraction: f64,
    pub norm: f64,
}

/// Fixed-point iteration `psi <- P T [b (psi + v)]`, stopping when the
/// update norm falls below `tol`.
pub fn neumann_solve_with(
    op: &CorrectorOperator,
    b: &ContrastField,
    v: &[Complex64],
    tol: f64,
    max_iter: usize,
) -> Result<CorrectorField> {
    let lat = &op.lat;
    let nt = op.nt;
    let mut psi = StVectorField::zeros(lat, nt);
    let mut work = StVectorField::zeros(lat, nt);
    let mut prev_update = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    let mut update = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..max_iter {
        b.apply_shifted(&psi, v, &mut work);
        op.apply_in_place(&mut work)?;
        work.project_out_mean();
        update = rms_diff(&work, &psi);
        if it > 0 && prev_update > 1e-14 {
            max_ratio = max_ratio.max(update / prev_update);
        }
        std::mem::swap(&mut psi, &mut work);
        iterations = it + 1;
        if update < tol {
            break;
        }
        prev_update = update;
    }
    if update >= tol {
        return Err(Error::NonConvergence(format!(
            "update norm {update:.3e} after {max_iter} iterations (tol {tol:.1e}); \
             check lambda/Lambda configuration"
        )));
    }
    let ratio = max_ratio.min(0.999);
    let residual = update * ratio / (1.0 - ratio);
    let norm = psi.rms_norm();
    Ok(CorrectorField {
        field: psi,
        xi: op.xi.clone(),
        eta: op.eta,
        iterations,
        residual,
        contraction: max_ratio,
        norm,
    })
}

fn rms_diff(a: &StVectorField, b: &StVectorField) -> f64 {
    let m = a.n_cells() as f64;
    (a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        / m)
        .sqrt()
}

/// Solve the cell problem for one environment sample path.
pub fn neumann_solve(
    path: &CoefficientPath,
    xi: &[f64],
    eta: Complex64,
    v: &[Complex64],
    tol: f64,
) -> Result<CorrectorField> {
    let nt = path.n_times();
    let table = operator_kernel(path.lattice(), path.bounds().big_lambda, path.grid(), eta)?;
    let op = CorrectorOperator::from_table(&table, nt, xi, eta, 1e-7)?;
    let b = ContrastField::from_path(path);
    neumann_solve_with(&op, &b, v, tol, 400)
}

/// Kernel table long enough for the damped tail of the operator at `eta`.
pub fn operator_kernel(
    lat: &Arc<LatticeBox>,
    big_lambda: f64,
    grid: &TimeGrid,
    eta: Complex64,
) -> Result<KernelTable> {
    match *grid {
        TimeGrid::Discrete { .. } => {
            let t_table = ((20.0 / eta.re).ceil() as usize).clamp(64, 1 << 15);
            crate::kernel::discrete_kernel_periodized(lat, big_lambda, t_table)
        }
        TimeGrid::Uniform { dt, .. } => {
            let horizon = (20.0 / eta.re).min(1e6);
            let n_slices = ((horizon / dt).ceil() as usize).clamp(64, 1 << 15);
            let times: Vec<f64> = (0..=n_slices).map(|j| j as f64 * dt).collect();
            crate::kernel::continuous_kernel(lat, big_lambda, &times)
        }
    }
}

/// Iteration/diagnostic summary carried by an effective-matrix estimate.
#[derive(Debug, Clone, Default)]
pub struct CorrectorDiagnostics {
    pub max_iterations: usize,
    pub max_residual: f64,
    pub max_contraction: f64,
    pub kernel_tail: f64,
    pub box_dims: Vec<usize>,
    pub nt: usize,
}

/// Monte Carlo estimate of `q(xi, eta)`.
#[derive(Debug, Clone)]
pub struct EffectiveMatrix {
    pub d: usize,
    /// row-major `d x d`
    pub q: Vec<Complex64>,
    pub stderr_re: Vec<f64>,
    pub stderr_im: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Complex64,
    pub n_samples: usize,
    pub diagnostics: CorrectorDiagnostics,
}

impl EffectiveMatrix {
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.q[i * self.d + j]
    }

    /// Range of `Re(v* q v)/|v|^2` over a deterministic probe set of
    /// directions.
    pub fn quadratic_form_range(&self) -> (f64, f64) {
        let d = self.d;
        let mut probes: Vec<Vec<f64>> = Vec::new();
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            probes.push(e);
        }
        for i in 0..d {
            for j in (i + 1)..d {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; d];
                    e[i] = 1.0;
                    e[j] = s;
                    probes.push(e);
                }
            }
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &probes {
            let norm2: f64 = v.iter().map(|x| x * x).sum();
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..d {
                for j in 0..d {
                    acc += self.entry(i, j) * v[i] * v[j];
                }
            }
            let val = acc.re / norm2;
            lo = lo.min(val);
            hi = hi.max(val);
        }
        (lo, hi)
    }

    /// Largest per-entry standard error (real and imaginary combined).
    pub fn max_stderr(&self) -> f64 {
        self.stderr_re
            .iter()
            .zip(&self.stderr_im)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .fold(0.0, f64::max)
    }

    /// CSV rows `i, j, re, im, stderr_re, stderr_im, xi..., eta_re, eta_im,
    /// N, iterations, residual`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,re,im,stderr_re,stderr_im,xi,eta_re,eta_im,N,iterations,residual\n");
        let xi_str = self
            .xi
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(";");
        for i in 0..self.d {
            for j in 0..self.d {
                let e = self.entry(i, j);
                out.push_str(&format!(
                    "{i},{j},{},{},{},{},{xi_str},{},{},{},{},{}\n",
                    e.re,
                    e.im,
                    self.stderr_re[i * self.d + j],
                    self.stderr_im[i * self.d + j],
                    self.eta.re,
                    self.eta.im,
                    self.n_samples,
                    self.diagnostics.max_iterations,
                    self.diagnostics.max_residual,
                ));
            }
        }
        out
    }
}

/// Box knobs for corrector runs.
#[derive(Debug, Clone, Copy)]
pub struct CorrectorKnobs {
    pub side: usize,
    /// Minimum time extent; the actual extent grows like `1/Re eta` so the
    /// box covers the damped memory of the operator.
    pub nt_min: usize,
    pub nt_max: usize,
    pub tol: f64,
    pub tail_tol: f64,
    pub max_iter: usize,
}

impl Default for CorrectorKnobs {
    fn default() -> Self {
        CorrectorKnobs {
            side: 64,
            nt_min: 128,
            nt_max: 8192,
            tol: 1e-7,
            tail_tol: 1e-6,
            max_iter: 400,
        }
    }
}

impl CorrectorKnobs {
    /// Time extent for a given resolvent parameter: covers `8 / Re eta`
    /// units (the folded operator memory decays like `e^{-eta t}`), rounded
    /// to a power of two within the configured range.
    pub fn nt_for(&self, eta_re: f64, grid_dt: f64) -> usize {
        let cells = 8.0 / eta_re / grid_dt;
        let mut nt = self.nt_min.max(2);
        while (nt as f64) < cells && nt < self.nt_max {
            nt *= 2;
        }
        nt
    }
}

/// Estimate `q(xi, eta) = <a> + <a d_xi Phi>` over `n` environment samples,
/// one Neumann solve per sample and basis direction, reduced in fixed sample
/// order.
pub fn effective_matrix(
    spec: &EnvironmentSpec,
    xi: &[f64],
    eta: Complex64,
    n: usize,
    knobs: &CorrectorKnobs,
) -> Result<EffectiveMatrix> {
    if n < 1 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let d = spec.d;
    let lat = crate::lattice::LatticeBox::cube(d, knobs.side)?;
    let big = spec.ellipticity.big_lambda;
    let grid = if spec.is_continuous_time() {
        let dt = match spec.kind {
            crate::env::EnvironmentKind::LangevinField(ls) => ls.grid_dt,
            _ => unreachable!(),
        };
        TimeGrid::Uniform {
            n: knobs.nt_for(eta.re, dt),
            dt,
        }
    } else {
        TimeGrid::Discrete {
            n: knobs.nt_for(eta.re, 1.0),
        }
    };
    let nt = grid.len();
    let table = operator_kernel(&lat, big, &grid, eta)?;
    let op = CorrectorOperator::from_table(&table, nt, xi, eta, knobs.tail_tol)?;

    let dd = d * d;
    let mut mean = vec![Complex64::new(0.0, 0.0); dd];
    let mut m2_re = vec![0.0; dd];
    let mut m2_im = vec![0.0; dd];
    let mut diag = CorrectorDiagnostics {
        kernel_tail: op.tail_bound,
        box_dims: lat.dims().to_vec(),
        nt,
        ..Default::default()
    };

    let chunk = 32usize;
    let mut processed = 0usize;
    while processed < n {
        let hi = (processed + chunk).min(n);
        let samples: Vec<(Vec<Complex64>, usize, f64, f64)> = (processed..hi)
            .into_par_iter()
            .map(|s| sample_q_estimate(spec, &lat, grid.clone(), s as u32, &op, knobs))
            .collect::<Result<Vec<_>>>()?;
        for (offset, (qhat, iters, resid, contr)) in samples.iter().enumerate() {
            let k = (processed + offset + 1) as f64;
            for e in 0..dd {
                let x = qhat[e];
                let d0 = x - mean[e];
                mean[e] += d0 / k;
                let d1 = x - mean[e];
                m2_re[e] += d0.re * d1.re;
                m2_im[e] += d0.im * d1.im;
            }
            diag.max_iterations = diag.max_iterations.max(*iters);
            diag.max_residual = diag.max_residual.max(*resid);
            diag.max_contraction = diag.max_contraction.max(*contr);
        }
        processed = hi;
    }
    let denom = if n > 1 { (n as f64 - 1.0) * n as f64 } else { 1.0 };
    let stderr_re: Vec<f64> = m2_re.iter().map(|&v| (v / denom).sqrt()).collect();
    let stderr_im: Vec<f64> = m2_im.iter().map(|&v| (v / denom).sqrt()).collect();
    Ok(EffectiveMatrix {
        d,
        q: mean,
        stderr_re,
        stderr_im,
        xi: xi.to_vec(),
        eta,
        n_samples: n,
        diagnostics: diag,
    })
}

/// One sample's estimate of `q`: returns the `d x d` matrix plus iteration
/// diagnostics (iterations, residual, contraction ratio).
fn sample_q_estimate(
    spec: &EnvironmentSpec,
    lat: &Arc<LatticeBox>,
    grid: TimeGrid,
    stream: u32,
    op: &CorrectorOperator,
    knobs: &CorrectorKnobs,
) -> Result<(Vec<Complex64>, usize, f64, f64)> {
    let d = spec.d;
    let dd = d * d;
    let path = sample_path(spec, lat, grid, stream)?;
    let b = ContrastField::from_path(&path);
    let n = lat.nsites();
    let nt = path.n_times();
    let cells = (n * nt) as f64;
    let big = b.big_lambda();

    let mut qhat = vec![Complex64::new(0.0, 0.0); dd];
    let mut max_iters = 0usize;
    let mut max_resid = 0.0f64;
    let mut max_contr = 0.0f64;
    for r in 0..d {
        let mut v = vec![Complex64::new(0.0, 0.0); d];
        v[r] = Complex64::new(1.0, 0.0);
        let sol = neumann_solve_with(op, &b, &v, knobs.tol, knobs.max_iter)?;
        max_iters = max_iters.max(sol.iterations);
        max_resid = max_resid.max(sol.residual);
        max_contr = max_contr.max(sol.contraction);
        // column r of q: mean over cells of a (e_r + psi)
        // with a = Lambda (I - b):
        //   q e_r = Lambda * [ mean(e_r + psi) - mean(b (e_r + psi)) ]
        let mut bw = StVectorField::zeros(lat, nt);
        b.apply_shifted(&sol.field, &v, &mut bw);
        for j in 0..d {
            let mean_psi: Complex64 =
                sol.field.component(j).iter().sum::<Complex64>() / cells;
            let mean_bw: Complex64 = bw.component(j).iter().sum::<Complex64>() / cells;
            qhat[j * d + r] = big * (v[j] + mean_psi - mean_bw);
        }
    }
    Ok((qhat, max_iters, max_resid, max_contr))
}

/// Ladder extrapolation of `q(0, eta_k)` to `eta = 0`: fit each entry
/// against `sqrt(eta_k)` by weighted least squares and report the intercept
/// with its fit uncertainty.
#[derive(Debug, Clone)]
pub struct QExtrapolation {
    pub rungs: Vec<EffectiveMatrix>,
    pub intercept: EffectiveMatrix,
}

pub fn extrapolate_q00(
    spec: &EnvironmentSpec,
    ladder_ks: &[u32],
    n: usize,
    knobs: &CorrectorKnobs,
) -> Result<QExtrapolation> {
    if ladder_ks.len() < 2 {
        return Err(Error::InvalidArgument(
            "ladder needs at least two rungs".into(),
        ));
    }
    if ladder_ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "ladder exponents must increase (eta decreasing)".into(),
        ));
    }
    let d = spec.d;
    let big = spec.ellipticity.big_lambda;
    let xi = vec![0.0; d];
    let mut rungs = Vec::with_capacity(ladder_ks.len());
    for &k in ladder_ks {
        let eta = Complex64::new(big * 0.5f64.powi(k as i32), 0.0);
        rungs.push(effective_matrix(spec, &xi, eta, n, knobs)?);
    }

    let dd = d * d;
    let xs: Vec<f64> = rungs.iter().map(|r| r.eta.re.sqrt()).collect();
    let mut q0 = vec![Complex64::new(0.0, 0.0); dd];
    let mut sd_re = vec![0.0; dd];
    let mut sd_im = vec![0.0; dd];
    for e in 0..dd {
        let ys_re: Vec<f64> = rungs.iter().map(|r| r.q[e].re).collect();
        let sg_re: Vec<f64> = rungs.iter().map(|r| r.stderr_re[e].max(1e-14)).collect();
        let fit_re = weighted_linfit(&xs, &ys_re, Some(&sg_re))?;
        let ys_im: Vec<f64> = rungs.iter().map(|r| r.q[e].im).collect();
        let sg_im: Vec<f64> = rungs.iter().map(|r| r.stderr_im[e].max(1e-14)).collect();
        let fit_im = weighted_linfit(&xs, &ys_im, Some(&sg_im))?;
        q0[e] = Complex64::new(fit_re.intercept, fit_im.intercept);
        sd_re[e] = fit_re.sd_intercept;
        sd_im[e] = fit_im.sd_intercept;
    }
    let intercept = EffectiveMatrix {
        d,
        q: q0,
        stderr_re: sd_re,
        stderr_im: sd_im,
        xi,
        eta: Complex64::new(0.0, 0.0),
        n_samples: n,
        diagnostics: rungs.last().unwrap().diagnostics.clone(),
    };
    Ok(QExtrapolation { rungs, intercept })
}

/// One probe point of the regularity scan.
#[derive(Debug, Clone)]
pub struct HolderPoint {
    /// `|xi' - xi|` for spatial offsets, 0 for temporal ones.
    pub d_xi: f64,
    /// `|eta' - eta|` for resolvent offsets, 0 for spatial ones.
    pub d_eta: f64,
    /// Frobenius norm of the mean difference matrix.
    pub diff: f64,
    pub stderr: f64,
    pub above_floor: bool,
}

/// Result of the Hölder continuity probe of `q` near a base point.
#[derive(Debug, Clone)]
pub struct HolderProbe {
    pub points: Vec<HolderPoint>,
    /// Fitted exponent: `diff ~ C [ |dxi|^alpha + |deta/Lambda|^{alpha/2} ]`.
    pub alpha: f64,
    pub alpha_band: (f64, f64),
    pub c: f64,
    pub conclusive: bool,
}

/// Measure `|q(xi', eta') - q(xi, eta)|` over dyadic offset ladders with
/// common random numbers (the same environment streams on both sides of each
/// difference) and fit the Hölder exponent in log space. Points whose mean
/// difference sits below three standard errors are excluded; with fewer than
/// three surviving points the probe is inconclusive rather than failed.
pub fn holder_probe(
    spec: &EnvironmentSpec,
    base: &FrequencyPoint,
    xi_offsets: &[f64],
    eta_offsets: &[f64],
    n: usize,
    knobs: &CorrectorKnobs,
) -> Result<HolderProbe> {
    let d = spec.d;
    let big = spec.ellipticity.big_lambda;
    if base.eta.re <= 0.0 || base.eta.re >= big {
        return Err(Error::InvalidArgument(
            "base eta must satisfy 0 < Re eta < Lambda".into(),
        ));
    }
    for &de in eta_offsets {
        let e2 = base.eta.re + de;
        if e2 <= 0.0 || e2 >= big {
            return Err(Error::InvalidArgument(
                "eta offsets leave the admissible region".into(),
            ));
        }
    }

    // operators: base plus one per offset
    let lat = crate::lattice::LatticeBox::cube(d, knobs.side)?;
    let (grid, _dt) = if spec.is_continuous_time() {
        let dt = match spec.kind {
            crate::env::EnvironmentKind::LangevinField(ls) => ls.grid_dt,
            _ => unreachable!(),
        };
        (
            TimeGrid::Uniform {
                n: knobs.nt_for(base.eta.re, dt),
                dt,
            },
            dt,
        )
    } else {
        (
            TimeGrid::Discrete {
                n: knobs.nt_for(base.eta.re, 1.0),
            },
            1.0,
        )
    };
    let nt = grid.len();
    let table = operator_kernel(&lat, big, &grid, base.eta)?;
    let op_base = CorrectorOperator::from_table(&table, nt, &base.xi, base.eta, knobs.tail_tol)?;
    let mut op_alts: Vec<(f64, f64, CorrectorOperator)> = Vec::new();
    for &dx in xi_offsets {
        let mut xi = base.xi.clone();
        xi[0] += dx;
        op_alts.push((
            dx,
            0.0,
            CorrectorOperator::from_table(&table, nt, &xi, base.eta, knobs.tail_tol)?,
        ));
    }
    for &de in eta_offsets {
        let eta = base.eta + de;
        op_alts.push((
            0.0,
            de.abs(),
            CorrectorOperator::from_table(&table, nt, &base.xi, eta, knobs.tail_tol)?,
        ));
    }

    // common-random-number differences, fixed-order reduction
    let dd = d * d;
    let n_off = op_alts.len();
    let mut mean = vec![Complex64::new(0.0, 0.0); n_off * dd];
    let mut m2 = vec![0.0; n_off * dd];
    let chunk = 32usize;
    let mut processed = 0usize;
    while processed < n {
        let hi = (processed + chunk).min(n);
        let rows: Vec<Vec<Complex64>> = (processed..hi)
            .into_par_iter()
            .map(|s| -> Result<Vec<Complex64>> {
                let (q_base, ..) =
                    sample_q_estimate(spec, &lat, grid.clone(), s as u32, &op_base, knobs)?;
                let mut row = Vec::with_capacity(n_off * dd);
                for (_, _, op) in &op_alts {
                    let (q_alt, ..) =
                        sample_q_estimate(spec, &lat, grid.clone(), s as u32, op, knobs)?;
                    for e in 0..dd {
                        row.push(q_alt[e] - q_base[e]);
                    }
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        for (offset, row) in rows.iter().enumerate() {
            let k = (processed + offset + 1) as f64;
            for (e, &x) in row.iter().enumerate() {
                let d0 = x - mean[e];
                mean[e] += d0 / k;
                let d1 = x - mean[e];
                m2[e] += d0.re * d1.re + d0.im * d1.im;
            }
        }
        processed = hi;
    }
    let denom = if n > 1 { (n as f64 - 1.0) * n as f64 } else { 1.0 };

    let mut points = Vec::with_capacity(n_off);
    for (oi, &(dx, de, _)) in op_alts.iter().enumerate() {
        let mut fro2 = 0.0;
        let mut var = 0.0;
        for e in 0..dd {
            fro2 += mean[oi * dd + e].norm_sqr();
            var += m2[oi * dd + e] / denom;
        }
        let diff = fro2.sqrt();
        let stderr = var.sqrt();
        points.push(HolderPoint {
            d_xi: dx,
            d_eta: de,
            diff,
            stderr,
            above_floor: diff > 3.0 * stderr,
        });
    }

    // joint log fit: log diff = log C + alpha * L,
    // L = log|dxi| for spatial points, (1/2) log|deta/Lambda| for temporal
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sg = Vec::new();
    for p in &points {
        if !p.above_floor {
            continue;
        }
        let l = if p.d_xi > 0.0 {
            p.d_xi.ln()
        } else {
            0.5 * (p.d_eta / big).ln()
        };
        xs.push(l);
        ys.push(p.diff.ln());
        sg.push((p.stderr / p.diff).max(1e-6));
    }
    if xs.len() < 3 {
        return Ok(HolderProbe {
            points,
            alpha: 0.0,
            alpha_band: (f64::NEG_INFINITY, f64::INFINITY),
            c: f64::NAN,
            conclusive: false,
        });
    }
    let fit = weighted_linfit(&xs, &ys, Some(&sg))?;
    Ok(HolderProbe {
        points,
        alpha: fit.slope,
        alpha_band: (
            fit.slope - 1.96 * fit.sd_slope,
            fit.slope + 1.96 * fit.sd_slope,
        ),
        c: fit.intercept.exp(),
        conclusive: true,
    })
}
