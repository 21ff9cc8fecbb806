//! Periodic lattice geometry and the discrete vector calculus.
//!
//! The forward gradient and its adjoint act on periodic fields over a box
//! `[0,L_1) x ... x [0,L_d)`:
//!
//! ```text
//! (grad f)_i(x) = f(x + e_i) - f(x)
//! (div  v)(x)  = sum_i v_i(x - e_i) - v_i(x)
//! ```
//!
//! With these conventions `<grad f, v> = <f, div v>` holds exactly in exact
//! arithmetic, and the divergence-form generator `div(a grad u)` annihilates
//! constants and conserves mass. Fields may be real or complex; the corrector
//! pipeline needs complex phases.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Scalar types a lattice field can hold.
pub trait FieldScalar:
    Copy
    + PartialEq
    + std::fmt::Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Mul<f64, Output = Self>
    + 'static
{
    const ZERO: Self;
    fn abs2(self) -> f64;
    fn is_finite_val(self) -> bool;
}

impl FieldScalar for f64 {
    const ZERO: f64 = 0.0;
    fn abs2(self) -> f64 {
        self * self
    }
    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
}

impl FieldScalar for Complex64 {
    const ZERO: Complex64 = Complex64::new(0.0, 0.0);
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn is_finite_val(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Periodic box with flat row-major site indexing and precomputed neighbor
/// tables (hot loops dominate runtime).
#[derive(Debug)]
pub struct LatticeBox {
    dims: Vec<usize>,
    strides: Vec<usize>,
    nsites: usize,
    /// `neighbors[site * 2d + 2*axis]` is `site + e_axis`, `.. + 1` is `site - e_axis`.
    neighbors: Vec<u32>,
}

impl LatticeBox {
    pub fn new(dims: &[usize]) -> Result<Arc<Self>> {
        let d = dims.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "dimension must be 1..={MAX_DIM}, got {d}"
            )));
        }
        if dims.iter().any(|&l| l < 2) {
            return Err(Error::InvalidArgument(format!(
                "all sides must be >= 2, got {dims:?}"
            )));
        }
        let nsites: usize = dims.iter().product();
        if nsites > u32::MAX as usize {
            return Err(Error::InvalidArgument("box exceeds u32 site count".into()));
        }
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        let mut neighbors = vec![0u32; nsites * 2 * d];
        let mut coord = vec![0usize; d];
        for site in 0..nsites {
            for axis in 0..d {
                let c = coord[axis];
                let up = if c + 1 == dims[axis] {
                    site + strides[axis] - dims[axis] * strides[axis]
                } else {
                    site + strides[axis]
                };
                let dn = if c == 0 {
                    site + (dims[axis] - 1) * strides[axis]
                } else {
                    site - strides[axis]
                };
                neighbors[site * 2 * d + 2 * axis] = up as u32;
                neighbors[site * 2 * d + 2 * axis + 1] = dn as u32;
            }
            // advance row-major coordinates, last axis fastest
            for axis in (0..d).rev() {
                coord[axis] += 1;
                if coord[axis] < dims[axis] {
                    break;
                }
                coord[axis] = 0;
            }
        }
        Ok(Arc::new(LatticeBox {
            dims: dims.to_vec(),
            strides,
            nsites,
            neighbors,
        }))
    }

    /// Cubic box, side `l`, dimension `d`.
    pub fn cube(d: usize, l: usize) -> Result<Arc<Self>> {
        Self::new(&vec![l; d])
    }

    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nsites(&self) -> usize {
        self.nsites
    }

    #[inline]
    pub fn up(&self, site: usize, axis: usize) -> usize {
        self.neighbors[site * 2 * self.dims.len() + 2 * axis] as usize
    }

    #[inline]
    pub fn down(&self, site: usize, axis: usize) -> usize {
        self.neighbors[site * 2 * self.dims.len() + 2 * axis + 1] as usize
    }

    pub fn index_of(&self, coords: &[i64]) -> usize {
        let d = self.dims.len();
        assert_eq!(coords.len(), d);
        let mut idx = 0;
        for i in 0..d {
            let l = self.dims[i] as i64;
            idx += coords[i].rem_euclid(l) as usize * self.strides[i];
        }
        idx
    }

    pub fn coords_of(&self, site: usize) -> Vec<i64> {
        let d = self.dims.len();
        let mut out = vec![0i64; d];
        let mut rest = site;
        for i in 0..d {
            out[i] = (rest / self.strides[i]) as i64;
            rest %= self.strides[i];
        }
        out
    }

    /// Coordinates wrapped to the centered representative in `[-L/2, L/2)`.
    pub fn centered_coords_of(&self, site: usize) -> Vec<i64> {
        let mut c = self.coords_of(site);
        for (i, ci) in c.iter_mut().enumerate() {
            let l = self.dims[i] as i64;
            if *ci >= l - l / 2 {
                *ci -= l;
            }
        }
        c
    }
}

pub fn same_box(a: &Arc<LatticeBox>, b: &Arc<LatticeBox>) -> bool {
    Arc::ptr_eq(a, b) || a.dims == b.dims
}

/// One value per site.
#[derive(Debug, Clone)]
pub struct ScalarField<T: FieldScalar = f64> {
    lat: Arc<LatticeBox>,
    values: Vec<T>,
}

impl<T: FieldScalar> ScalarField<T> {
    pub fn zeros(lat: &Arc<LatticeBox>) -> Self {
        ScalarField {
            lat: Arc::clone(lat),
            values: vec![T::ZERO; lat.nsites()],
        }
    }

    pub fn from_values(lat: &Arc<LatticeBox>, values: Vec<T>) -> Result<Self> {
        if values.len() != lat.nsites() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values for a box of {} sites",
                values.len(),
                lat.nsites()
            )));
        }
        if !values.iter().all(|v| v.is_finite_val()) {
            return Err(Error::InvalidArgument(
                "field contains non-finite entries".into(),
            ));
        }
        Ok(ScalarField {
            lat: Arc::clone(lat),
            values,
        })
    }

    pub fn constant(lat: &Arc<LatticeBox>, v: T) -> Self {
        ScalarField {
            lat: Arc::clone(lat),
            values: vec![v; lat.nsites()],
        }
    }

    /// Kronecker delta at the origin.
    pub fn delta(lat: &Arc<LatticeBox>, amplitude: T) -> Self {
        let mut f = Self::zeros(lat);
        f.values[0] = amplitude;
        f
    }

    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn sum(&self) -> T {
        let mut acc = T::ZERO;
        for &v in &self.values {
            acc += v;
        }
        acc
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v.abs2()).sum::<f64>().sqrt()
    }
}

/// `d` values per site, stored component-major.
#[derive(Debug, Clone)]
pub struct VectorField<T: FieldScalar = f64> {
    lat: Arc<LatticeBox>,
    values: Vec<T>,
}

impl<T: FieldScalar> VectorField<T> {
    pub fn zeros(lat: &Arc<LatticeBox>) -> Self {
        VectorField {
            lat: Arc::clone(lat),
            values: vec![T::ZERO; lat.nsites() * lat.d()],
        }
    }

    pub fn from_values(lat: &Arc<LatticeBox>, values: Vec<T>) -> Result<Self> {
        if values.len() != lat.nsites() * lat.d() {
            return Err(Error::DimensionMismatch(format!(
                "vector field has {} values for {} sites x {} components",
                values.len(),
                lat.nsites(),
                lat.d()
            )));
        }
        Ok(VectorField {
            lat: Arc::clone(lat),
            values,
        })
    }

    pub fn constant(lat: &Arc<LatticeBox>, v: &[T]) -> Result<Self> {
        if v.len() != lat.d() {
            return Err(Error::DimensionMismatch(format!(
                "constant vector has {} components in dimension {}",
                v.len(),
                lat.d()
            )));
        }
        let mut out = Self::zeros(lat);
        for (i, &vi) in v.iter().enumerate() {
            out.component_mut(i).fill(vi);
        }
        Ok(out)
    }

    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    #[inline]
    pub fn component(&self, i: usize) -> &[T] {
        let n = self.lat.nsites();
        &self.values[i * n..(i + 1) * n]
    }

    #[inline]
    pub fn component_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.lat.nsites();
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v.abs2()).sum::<f64>().sqrt()
    }
}

/// Uniform ellipticity bounds `lambda I <= a <= Lambda I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticityBounds {
    pub lambda: f64,
    pub big_lambda: f64,
    pub d: usize,
}

impl EllipticityBounds {
    pub fn new(lambda: f64, big_lambda: f64, d: usize) -> Result<Self> {
        if !(lambda > 0.0 && big_lambda >= lambda) {
            return Err(Error::Ellipticity(format!(
                "need 0 < lambda <= Lambda, got lambda={lambda}, Lambda={big_lambda}"
            )));
        }
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidArgument(format!("bad dimension {d}")));
        }
        Ok(EllipticityBounds {
            lambda,
            big_lambda,
            d,
        })
    }

    /// Contrast ratio `Lambda / lambda`.
    pub fn contrast(&self) -> f64 {
        self.big_lambda / self.lambda
    }

    /// Discrete-time schemes need `4 d Lambda <= 1`.
    pub fn check_discrete_time(&self) -> Result<()> {
        let prod = 4.0 * self.d as f64 * self.big_lambda;
        if prod > 1.0 + 1e-12 {
            return Err(Error::Stability(format!(
                "discrete time requires 4*d*Lambda <= 1, got {prod}"
            )));
        }
        Ok(())
    }
}

/// Eigenvalue range of a symmetric `d x d` matrix, `d <= 3`, closed form.
pub fn sym_eigen_range(m: &[f64], d: usize) -> (f64, f64) {
    match d {
        1 => (m[0], m[0]),
        2 => {
            let (a, b, c) = (m[0], m[1], m[3]);
            let tr = a + c;
            let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
            ((tr - disc) / 2.0, (tr + disc) / 2.0)
        }
        3 => {
            // trigonometric solution of the symmetric characteristic polynomial
            let (a11, a12, a13) = (m[0], m[1], m[2]);
            let (a22, a23, a33) = (m[4], m[5], m[8]);
            let q = (a11 + a22 + a33) / 3.0;
            let b11 = a11 - q;
            let b22 = a22 - q;
            let b33 = a33 - q;
            let p2 = b11 * b11 + b22 * b22 + b33 * b33
                + 2.0 * (a12 * a12 + a13 * a13 + a23 * a23);
            let p = (p2 / 6.0).sqrt();
            if p < 1e-300 {
                return (q, q);
            }
            let det_b = b11 * (b22 * b33 - a23 * a23) - a12 * (a12 * b33 - a23 * a13)
                + a13 * (a12 * a23 - b22 * a13);
            let r = (det_b / (2.0 * p * p * p)).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            let eig1 = q + 2.0 * p * phi.cos();
            let eig3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            (eig3.min(eig1), eig3.max(eig1))
        }
        _ => panic!("sym_eigen_range supports d <= 3"),
    }
}

/// Per-site symmetric coefficient matrices on a box, stored row-major
/// (`d*d` floats per site), together with the bounds they are declared to
/// satisfy.
#[derive(Debug, Clone)]
pub struct CoefficientSlice {
    lat: Arc<LatticeBox>,
    bounds: EllipticityBounds,
    data: Vec<f64>,
}

impl CoefficientSlice {
    /// Validating constructor: checks symmetry and eigenvalue bounds on every
    /// site for small boxes, on a deterministic sample of sites for large.
    pub fn new(
        lat: &Arc<LatticeBox>,
        bounds: EllipticityBounds,
        data: Vec<f64>,
    ) -> Result<Self> {
        let slice = Self::new_unchecked(lat, bounds, data)?;
        slice.validate_ellipticity()?;
        Ok(slice)
    }

    /// Shape-checked constructor without the eigenvalue sweep, for samplers
    /// whose families satisfy the bounds by construction.
    pub fn new_unchecked(
        lat: &Arc<LatticeBox>,
        bounds: EllipticityBounds,
        data: Vec<f64>,
    ) -> Result<Self> {
        let d = lat.d();
        if bounds.d != d {
            return Err(Error::DimensionMismatch(format!(
                "bounds dimension {} vs box dimension {d}",
                bounds.d
            )));
        }
        if data.len() != lat.nsites() * d * d {
            return Err(Error::DimensionMismatch(format!(
                "coefficient slice has {} floats for {} sites in dimension {d}",
                data.len(),
                lat.nsites()
            )));
        }
        Ok(CoefficientSlice {
            lat: Arc::clone(lat),
            bounds,
            data,
        })
    }

    /// `kappa * I` everywhere.
    pub fn scalar_constant(
        lat: &Arc<LatticeBox>,
        bounds: EllipticityBounds,
        kappa: f64,
    ) -> Result<Self> {
        let d = lat.d();
        let mut data = vec![0.0; lat.nsites() * d * d];
        for site in 0..lat.nsites() {
            for i in 0..d {
                data[site * d * d + i * d + i] = kappa;
            }
        }
        Self::new_unchecked(lat, bounds, data)
    }

    /// Scalar multiple of the identity per site.
    pub fn from_scalar_values(
        lat: &Arc<LatticeBox>,
        bounds: EllipticityBounds,
        values: &[f64],
    ) -> Result<Self> {
        if values.len() != lat.nsites() {
            return Err(Error::DimensionMismatch(
                "scalar value count differs from site count".into(),
            ));
        }
        let d = lat.d();
        let mut data = vec![0.0; lat.nsites() * d * d];
        for (site, &v) in values.iter().enumerate() {
            for i in 0..d {
                data[site * d * d + i * d + i] = v;
            }
        }
        Self::new_unchecked(lat, bounds, data)
    }

    pub fn lattice(&self) -> &Arc<LatticeBox> {
        &self.lat
    }

    pub fn bounds(&self) -> EllipticityBounds {
        self.bounds
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn site_matrix(&self, site: usize) -> &[f64] {
        let dd = self.lat.d() * self.lat.d();
        &self.data[site * dd..(site + 1) * dd]
    }

    /// Box average of the matrix entries.
    pub fn mean_matrix(&self) -> Vec<f64> {
        let dd = self.lat.d() * self.lat.d();
        let mut acc = vec![0.0; dd];
        for site in 0..self.lat.nsites() {
            for (k, a) in acc.iter_mut().enumerate() {
                *a += self.data[site * dd + k];
            }
        }
        let n = self.lat.nsites() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Symmetry plus eigenvalue bounds, exhaustive on small boxes, sampled on
    /// large ones.
    pub fn validate_ellipticity(&self) -> Result<()> {
        let n = self.lat.nsites();
        let full = n <= 1 << 16;
        let step = if full { 1 } else { (n / 4096).max(1) };
        let d = self.lat.d();
        let tol = 1e-10 * self.bounds.big_lambda.max(1.0);
        let mut site = 0;
        while site < n {
            let m = self.site_matrix(site);
            for i in 0..d {
                for j in (i + 1)..d {
                    if (m[i * d + j] - m[j * d + i]).abs() > tol {
                        return Err(Error::Ellipticity(format!(
                            "site {site}: matrix not symmetric"
                        )));
                    }
                }
            }
            let (lo, hi) = sym_eigen_range(m, d);
            if lo < self.bounds.lambda - tol || hi > self.bounds.big_lambda + tol {
                return Err(Error::Ellipticity(format!(
                    "site {site}: eigenvalues [{lo}, {hi}] outside [{}, {}]",
                    self.bounds.lambda, self.bounds.big_lambda
                )));
            }
            site += step;
        }
        Ok(())
    }
}

/// Forward gradient, periodic wrap.
pub fn gradient<T: FieldScalar>(f: &ScalarField<T>) -> VectorField<T> {
    let lat = f.lattice();
    let d = lat.d();
    let n = lat.nsites();
    let mut out = VectorField::zeros(lat);
    for axis in 0..d {
        let comp = out.component_mut(axis);
        for site in 0..n {
            comp[site] = f.values[lat.up(site, axis)] - f.values[site];
        }
    }
    out
}

/// Adjoint of the forward gradient: `sum_i v_i(x - e_i) - v_i(x)`.
pub fn divergence<T: FieldScalar>(v: &VectorField<T>) -> ScalarField<T> {
    let lat = Arc::clone(v.lattice());
    let d = lat.d();
    let n = lat.nsites();
    let mut out = ScalarField::zeros(&lat);
    for axis in 0..d {
        let comp = v.component(axis);
        for site in 0..n {
            out.values[site] += comp[lat.down(site, axis)] - comp[site];
        }
    }
    out
}

/// `div(a grad u)` with a per-site matrix multiply in between.
pub fn apply_divergence_form<T: FieldScalar>(
    a: &CoefficientSlice,
    u: &ScalarField<T>,
) -> Result<ScalarField<T>> {
    if !same_box(a.lattice(), u.lattice()) {
        return Err(Error::DimensionMismatch(
            "coefficient slice and field live on different boxes".into(),
        ));
    }
    let g = gradient(u);
    let flux = apply_matrix(a, &g);
    Ok(divergence(&flux))
}

/// Per-site `w = a v` for a vector field.
pub fn apply_matrix<T: FieldScalar>(a: &CoefficientSlice, v: &VectorField<T>) -> VectorField<T> {
    let lat = v.lattice();
    let d = lat.d();
    let n = lat.nsites();
    let mut out = VectorField::zeros(lat);
    if d == 1 {
        let src = v.component(0);
        let dst = out.component_mut(0);
        for site in 0..n {
            dst[site] = src[site] * a.data[site];
        }
        return out;
    }
    for i in 0..d {
        for j in 0..d {
            let src = v.component(j);
            // split borrow: component_mut borrows out, so accumulate in place per (i, j)
            let dst = out.component_mut(i);
            for site in 0..n {
                dst[site] += src[site] * a.data[site * d * d + i * d + j];
            }
        }
    }
    out
}

/// Complex inner product `<f, g> = sum conj(f) g`.
pub fn inner_c(f: &[Complex64], g: &[Complex64]) -> Complex64 {
    f.iter().zip(g).map(|(a, b)| a.conj() * b).sum()
}

/// Real inner product.
pub fn inner_r(f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, StreamKind};
    use proptest::prelude::*;

    fn random_scalar(lat: &Arc<LatticeBox>, seed: u64) -> ScalarField {
        let rng = CounterRng::new(seed, 0);
        let vals = (0..lat.nsites())
            .map(|i| rng.u01(StreamKind::Generic, i as u64, 0) - 0.5)
            .collect();
        ScalarField::from_values(lat, vals).unwrap()
    }

    fn random_vector(lat: &Arc<LatticeBox>, seed: u64) -> VectorField {
        let rng = CounterRng::new(seed, 1);
        let vals = (0..lat.nsites() * lat.d())
            .map(|i| rng.u01(StreamKind::Generic, i as u64, 1) - 0.5)
            .collect();
        VectorField::from_values(lat, vals).unwrap()
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let lat = LatticeBox::new(&[5, 4]).unwrap();
        let f = ScalarField::constant(&lat, 7.0);
        let g = gradient(&f);
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_wraps_at_the_seam() {
        // d=1, L=4, f=(0,1,2,3) -> grad f = (1,1,1,-3)
        let lat = LatticeBox::new(&[4]).unwrap();
        let f = ScalarField::from_values(&lat, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let g = gradient(&f);
        assert_eq!(g.component(0), &[1.0, 1.0, 1.0, -3.0]);
    }

    #[test]
    fn gradient_of_delta_support() {
        let lat = LatticeBox::new(&[8]).unwrap();
        let f = ScalarField::delta(&lat, 1.0);
        let g = gradient(&f);
        // nonzero only at x = -1 (i.e. 7) and x = 0
        for site in 0..8 {
            let v = g.component(0)[site];
            if site == 0 {
                assert_eq!(v, -1.0);
            } else if site == 7 {
                assert_eq!(v, 1.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn divergence_of_constant_is_zero() {
        let lat = LatticeBox::new(&[6, 3]).unwrap();
        let v = VectorField::constant(&lat, &[1.25, -0.5]).unwrap();
        let out = divergence(&v);
        assert!(out.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_of_delta_stencil() {
        // v = grad delta_0 in d=1 -> div v has 2 at 0 and -1 at +-1
        let lat = LatticeBox::new(&[8]).unwrap();
        let f = ScalarField::delta(&lat, 1.0);
        let lap = divergence(&gradient(&f));
        for site in 0..8 {
            let expect = match site {
                0 => 2.0,
                1 | 7 => -1.0,
                _ => 0.0,
            };
            assert_eq!(lap.values()[site], expect, "site {site}");
        }
    }

    #[test]
    fn adjointness_on_random_fields() {
        let lat = LatticeBox::new(&[8, 8]).unwrap();
        let f = random_scalar(&lat, 11);
        let v = random_vector(&lat, 12);
        let lhs: f64 = (0..lat.d())
            .map(|i| inner_r(gradient(&f).component(i), v.component(i)))
            .sum();
        let rhs = inner_r(f.values(), divergence(&v).values());
        let scale = f.norm_l2() * v.norm_l2();
        assert!((lhs - rhs).abs() < 1e-12 * scale.max(1.0));
    }

    #[test]
    fn divergence_form_annihilates_constants() {
        let lat = LatticeBox::new(&[6, 6]).unwrap();
        let bounds = EllipticityBounds::new(0.01, 0.04, 2).unwrap();
        let rng = CounterRng::new(3, 0);
        let vals: Vec<f64> = (0..lat.nsites())
            .map(|i| 0.01 + 0.03 * rng.u01(StreamKind::Generic, i as u64, 0))
            .collect();
        let a = CoefficientSlice::from_scalar_values(&lat, bounds, &vals).unwrap();
        let u = ScalarField::constant(&lat, 3.5);
        let out = apply_divergence_form(&a, &u).unwrap();
        assert!(out.values().iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn scalar_coefficient_factors_out() {
        let lat = LatticeBox::new(&[9]).unwrap();
        let kappa = 0.2;
        let bounds = EllipticityBounds::new(kappa, kappa, 1).unwrap();
        let a = CoefficientSlice::scalar_constant(&lat, bounds, kappa).unwrap();
        let u = random_scalar(&lat, 21);
        let via_a = apply_divergence_form(&a, &u).unwrap();
        let plain = divergence(&gradient(&u));
        for site in 0..lat.nsites() {
            let want = kappa * plain.values()[site];
            let got = via_a.values()[site];
            assert!((got - want).abs() <= 1e-13 * want.abs().max(1.0));
        }
    }

    #[test]
    fn divergence_form_delta_stencil() {
        // d=1, a = kappa I, u = delta_0: value 2 kappa at 0, -kappa at +-1
        let lat = LatticeBox::new(&[16]).unwrap();
        let kappa = 0.125;
        let bounds = EllipticityBounds::new(kappa, kappa, 1).unwrap();
        let a = CoefficientSlice::scalar_constant(&lat, bounds, kappa).unwrap();
        let u = ScalarField::delta(&lat, 1.0);
        let out = apply_divergence_form(&a, &u).unwrap();
        assert!((out.values()[0] - 2.0 * kappa).abs() < 1e-15);
        assert!((out.values()[1] + kappa).abs() < 1e-15);
        assert!((out.values()[15] + kappa).abs() < 1e-15);
    }

    #[test]
    fn ellipticity_violation_is_reported() {
        let lat = LatticeBox::new(&[4]).unwrap();
        let bounds = EllipticityBounds::new(0.1, 0.2, 1).unwrap();
        let mut vals = vec![0.15; 4];
        vals[2] = 0.3; // above Lambda
        let err = CoefficientSlice::from_scalar_values(&lat, bounds, &vals)
            .and_then(|s| s.validate_ellipticity().map(|_| s));
        assert!(matches!(err, Err(Error::Ellipticity(_))));
    }

    #[test]
    fn sym_eigen_range_matches_known_matrices() {
        let (lo, hi) = sym_eigen_range(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        // 3x3 with eigenvalues 1, 2, 4 (diagonal similarity preserved)
        let (lo, hi) = sym_eigen_range(&[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 4.0], 3);
        assert!((lo - 1.0).abs() < 1e-10 && (hi - 4.0).abs() < 1e-10);
    }

    #[test]
    fn centered_coords() {
        let lat = LatticeBox::new(&[8]).unwrap();
        assert_eq!(lat.centered_coords_of(0), vec![0]);
        assert_eq!(lat.centered_coords_of(3), vec![3]);
        assert_eq!(lat.centered_coords_of(4), vec![-4]);
        assert_eq!(lat.centered_coords_of(7), vec![-1]);
    }

    #[test]
    fn complex_fields_round_trip_through_calculus() {
        let lat = LatticeBox::new(&[8]).unwrap();
        let rng = CounterRng::new(5, 2);
        let vals: Vec<Complex64> = (0..8)
            .map(|i| {
                let (a, b) = rng.u01x2(StreamKind::Generic, i as u64, 0);
                Complex64::new(a - 0.5, b - 0.5)
            })
            .collect();
        let f = ScalarField::from_values(&lat, vals).unwrap();
        let g = gradient(&f);
        let lhs = inner_c(g.component(0), g.component(0));
        let rhs = inner_c(f.values(), divergence(&g).values());
        assert!((lhs - rhs).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn summation_by_parts(seed in 0u64..1000) {
            let lat = LatticeBox::new(&[7, 5]).unwrap();
            let v = random_vector(&lat, seed);
            let total: f64 = divergence(&v).values().iter().sum();
            prop_assert!(total.abs() < 1e-12 * v.norm_l2().max(1.0));
        }

        #[test]
        fn adjoint_identity_random_boxes(seed in 0u64..200, l1 in 2usize..9, l2 in 2usize..7) {
            let lat = LatticeBox::new(&[l1, l2]).unwrap();
            let f = random_scalar(&lat, seed);
            let v = random_vector(&lat, seed.wrapping_add(77));
            let g = gradient(&f);
            let lhs: f64 = (0..2).map(|i| inner_r(g.component(i), v.component(i))).sum();
            let rhs = inner_r(f.values(), divergence(&v).values());
            prop_assert!((lhs - rhs).abs() < 1e-11);
        }

        #[test]
        fn generator_conserves_mass(seed in 0u64..200) {
            let lat = LatticeBox::new(&[6, 4]).unwrap();
            let bounds = EllipticityBounds::new(0.01, 0.05, 2).unwrap();
            let rng = CounterRng::new(seed, 4);
            let vals: Vec<f64> = (0..lat.nsites())
                .map(|i| 0.01 + 0.04 * rng.u01(StreamKind::Generic, i as u64, 0))
                .collect();
            let a = CoefficientSlice::from_scalar_values(&lat, bounds, &vals).unwrap();
            let u = random_scalar(&lat, seed.wrapping_add(5));
            let out = apply_divergence_form(&a, &u).unwrap();
            let total: f64 = out.values().iter().sum();
            prop_assert!(total.abs() < 1e-12);
        }
    }
}
