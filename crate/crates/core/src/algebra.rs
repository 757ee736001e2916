//! Pointwise exterior algebra of complex (p,q)-forms on a Hermitian vector
//! space of complex dimension `n`.
//!
//! Forms are stored in the basis `dz^J ∧ dz̄^K` with `J`, `K` strictly
//! increasing multi-indices, enumerated lexicographically (`J` outer, `K`
//! inner). Internally every basis element is a bitmask over the `2n`
//! generators: bit `j` is `dz^{j+1}` and bit `n + j` is `dz̄^{j+1}`, so the
//! mask's increasing bit order is exactly the order `dz^J ∧ dz̄^K`.
//!
//! A Hermitian matrix `G` stands for the real (1,1)-form
//! `ω_G = i Σ G_{jk} dz^j ∧ dz̄^k`. The Hodge star is the complex-linear
//! extension of the Riemannian star of `ω_G`, with orientation `ω_G^n / n!`.

use itertools::Itertools;
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{FlowError, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Largest supported complex dimension (masks live in 2n bits of a `u32`).
pub const MAX_DIM: usize = 6;

pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// `k`-subsets of `{0, …, m-1}` as bitmasks, in lexicographic order of the
/// sorted index tuples.
pub(crate) fn subsets(m: usize, k: usize) -> Vec<u32> {
    (0..m)
        .combinations(k)
        .map(|c| c.iter().fold(0u32, |acc, &b| acc | (1 << b)))
        .collect()
}

/// Sign of reordering `e^a ∧ e^b` into increasing generator order. The masks
/// must be disjoint.
pub(crate) fn reorder_sign(a: u32, b: u32) -> f64 {
    debug_assert_eq!(a & b, 0);
    let mut swaps = 0;
    let mut rest = b;
    while rest != 0 {
        let j = rest.trailing_zeros();
        swaps += (a >> (j + 1)).count_ones();
        rest &= rest - 1;
    }
    if swaps % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn mask_bits(mask: u32) -> Vec<usize> {
    (0..32).filter(|b| mask & (1 << b) != 0).collect()
}

/// Coefficient layout of (p,q)-forms in dimension `n`.
#[derive(Clone, Debug)]
pub struct Basis {
    n: usize,
    p: usize,
    q: usize,
    masks: Vec<u32>,
    index: Vec<usize>,
}

impl Basis {
    pub fn new(n: usize, p: usize, q: usize) -> Result<Self> {
        if n == 0 || n > MAX_DIM || p > n || q > n {
            return Err(FlowError::Degree { n, p, q });
        }
        let js = subsets(n, p);
        let ks = subsets(n, q);
        let mut masks = Vec::with_capacity(js.len() * ks.len());
        for &j in &js {
            for &k in &ks {
                masks.push(j | (k << n));
            }
        }
        let mut index = vec![usize::MAX; 1 << (2 * n)];
        for (i, &m) in masks.iter().enumerate() {
            index[m as usize] = i;
        }
        Ok(Self {
            n,
            p,
            q,
            masks,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[u32] {
        &self.masks
    }

    pub fn index_of(&self, mask: u32) -> Option<usize> {
        self.index
            .get(mask as usize)
            .copied()
            .filter(|&i| i != usize::MAX)
    }

    /// Holomorphic and antiholomorphic indices (0-based) of basis element `i`.
    pub fn indices(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let m = self.masks[i];
        let low = m & ((1 << self.n) - 1);
        let high = m >> self.n;
        (mask_bits(low), mask_bits(high))
    }

    pub fn bidegree(&self) -> (usize, usize) {
        (self.p, self.q)
    }
}

/// A complex (p,q)-form at a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointForm {
    n: usize,
    p: usize,
    q: usize,
    coeffs: Vec<Complex64>,
}

impl PointForm {
    pub fn zero(n: usize, p: usize, q: usize) -> Result<Self> {
        if n == 0 || n > MAX_DIM || p > n || q > n {
            return Err(FlowError::Degree { n, p, q });
        }
        Ok(Self {
            n,
            p,
            q,
            coeffs: vec![ZERO; binomial(n, p) * binomial(n, q)],
        })
    }

    pub fn from_coeffs(n: usize, p: usize, q: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        let mut f = Self::zero(n, p, q)?;
        if coeffs.len() != f.coeffs.len() {
            return Err(FlowError::Dimension {
                expected: f.coeffs.len(),
                found: coeffs.len(),
            });
        }
        f.coeffs = coeffs;
        Ok(f)
    }

    pub fn scalar(n: usize, value: Complex64) -> Result<Self> {
        Self::from_coeffs(n, 0, 0, vec![value])
    }

    /// `dz^{a_1} ∧ … ∧ dz^{a_p} ∧ dz̄^{b_1} ∧ … ∧ dz̄^{b_q}` for 0-based indices in
    /// any order; repeated indices give the zero form.
    pub fn basis_element(n: usize, dz: &[usize], dzbar: &[usize]) -> Result<Self> {
        let mut out = Self::zero(n, dz.len(), dzbar.len())?;
        let mut mask = 0u32;
        let mut sign = 1.0;
        let gens = dz.iter().map(|&j| (j, 0)).chain(dzbar.iter().map(|&j| (j, n)));
        for (j, offset) in gens {
            if j >= n {
                return Err(FlowError::Invalid(format!("generator index {j} >= {n}")));
            }
            let bit = 1u32 << (j + offset);
            if mask & bit != 0 {
                return Ok(out);
            }
            sign *= reorder_sign(mask, bit);
            mask |= bit;
        }
        let basis = Basis::new(n, out.p, out.q)?;
        let idx = basis.index_of(mask).expect("mask of matching bidegree");
        out.coeffs[idx] = Complex64::new(sign, 0.0);
        Ok(out)
    }

    pub fn dz(n: usize, j: usize) -> Result<Self> {
        Self::basis_element(n, &[j], &[])
    }

    pub fn dzbar(n: usize, j: usize) -> Result<Self> {
        Self::basis_element(n, &[], &[j])
    }

    /// The (1,1)-form `ω_G = i Σ G_{jk} dz^j ∧ dz̄^k`.
    pub fn hermitian(g: &CMatrix) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(FlowError::Dimension {
                expected: n,
                found: g.ncols(),
            });
        }
        let mut out = Self::zero(n, 1, 1)?;
        for j in 0..n {
            for k in 0..n {
                out.coeffs[j * n + k] = I * g[(j, k)];
            }
        }
        Ok(out)
    }

    /// Inverse of [`PointForm::hermitian`]: the matrix `G` of a (1,1)-form.
    pub fn to_hermitian(&self) -> Result<CMatrix> {
        self.expect_bidegree(1, 1)?;
        let n = self.n;
        Ok(CMatrix::from_fn(n, n, |j, k| -I * self.coeffs[j * n + k]))
    }

    /// The constant complex volume form `Ω = dz^1 ∧ … ∧ dz^n`.
    pub fn volume(n: usize) -> Result<Self> {
        Self::basis_element(n, &(0..n).collect::<Vec<_>>(), &[])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bidegree(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn basis(&self) -> Basis {
        Basis::new(self.n, self.p, self.q).expect("valid bidegree")
    }

    pub(crate) fn expect_bidegree(&self, p: usize, q: usize) -> Result<()> {
        if (self.p, self.q) != (p, q) {
            return Err(FlowError::Bidegree {
                p1: self.p,
                q1: self.q,
                p2: p,
                q2: q,
            });
        }
        Ok(())
    }

    /// Complex conjugate, a (q,p)-form.
    pub fn conj(&self) -> Self {
        let src = self.basis();
        let dst = Basis::new(self.n, self.q, self.p).expect("valid bidegree");
        let n = self.n;
        let low = (1u32 << n) - 1;
        let sign = if (self.p * self.q).is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut out = Self::zero(n, self.q, self.p).expect("valid bidegree");
        for (i, &m) in src.masks().iter().enumerate() {
            let swapped = (m >> n) | ((m & low) << n);
            let j = dst.index_of(swapped).expect("swapped mask");
            out.coeffs[j] = self.coeffs[i].conj() * sign;
        }
        out
    }

    /// Largest coefficient of `self - conj(self)`; infinite when `p != q`.
    pub fn reality_defect(&self) -> f64 {
        if self.p != self.q {
            return f64::INFINITY;
        }
        let c = self.conj();
        self.coeffs
            .iter()
            .zip(&c.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.reality_defect() <= tol
    }

    pub fn sup_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    fn assert_same_shape(&self, other: &Self) {
        assert_eq!(
            (self.n, self.p, self.q),
            (other.n, other.p, other.q),
            "form shapes differ"
        );
    }
}

impl Add for &PointForm {
    type Output = PointForm;
    fn add(self, rhs: &PointForm) -> PointForm {
        self.assert_same_shape(rhs);
        let mut out = self.clone();
        out.coeffs
            .iter_mut()
            .zip(&rhs.coeffs)
            .for_each(|(a, b)| *a += b);
        out
    }
}

impl Sub for &PointForm {
    type Output = PointForm;
    fn sub(self, rhs: &PointForm) -> PointForm {
        self.assert_same_shape(rhs);
        let mut out = self.clone();
        out.coeffs
            .iter_mut()
            .zip(&rhs.coeffs)
            .for_each(|(a, b)| *a -= b);
        out
    }
}

impl Neg for &PointForm {
    type Output = PointForm;
    fn neg(self) -> PointForm {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

impl Mul<f64> for &PointForm {
    type Output = PointForm;
    fn mul(self, rhs: f64) -> PointForm {
        self.scale(Complex64::new(rhs, 0.0))
    }
}

impl Mul<Complex64> for &PointForm {
    type Output = PointForm;
    fn mul(self, rhs: Complex64) -> PointForm {
        self.scale(rhs)
    }
}

/// Exterior product. Fails with a degree error when the result would not fit.
pub fn wedge(a: &PointForm, b: &PointForm) -> Result<PointForm> {
    if a.n != b.n {
        return Err(FlowError::Dimension {
            expected: a.n,
            found: b.n,
        });
    }
    let n = a.n;
    let (p, q) = (a.p + b.p, a.q + b.q);
    let mut out = PointForm::zero(n, p, q)?;
    let ba = a.basis();
    let bb = b.basis();
    let bo = out.basis();
    for (i, &ma) in ba.masks().iter().enumerate() {
        let ca = a.coeffs[i];
        if ca == ZERO {
            continue;
        }
        for (j, &mb) in bb.masks().iter().enumerate() {
            let cb = b.coeffs[j];
            if cb == ZERO || ma & mb != 0 {
                continue;
            }
            let k = bo.index_of(ma | mb).expect("bidegree of product");
            out.coeffs[k] += ca * cb * reorder_sign(ma, mb);
        }
    }
    Ok(out)
}

/// `ω_G^k`, not divided by `k!`.
pub fn metric_power(g: &CMatrix, k: usize) -> Result<PointForm> {
    let n = g.nrows();
    if k > n {
        return Err(FlowError::Degree { n, p: k, q: k });
    }
    let omega = PointForm::hermitian(g)?;
    let mut acc = PointForm::scalar(n, Complex64::new(1.0, 0.0))?;
    for _ in 0..k {
        acc = wedge(&acc, &omega)?;
    }
    Ok(acc)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(h: &CMatrix) -> f64 {
    let herm = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    nalgebra::SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest entry of the anti-Hermitian part `(H - H*)/2`.
pub fn hermitian_defect(h: &CMatrix) -> f64 {
    let a = (h - h.adjoint()) * Complex64::new(0.5, 0.0);
    a.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Cholesky factor of a positive definite Hermitian matrix together with
/// its (real) determinant.
pub(crate) fn positive_factor(h: &CMatrix) -> Result<(nalgebra::Cholesky<Complex64, nalgebra::Dyn>, f64)> {
    let chol = nalgebra::Cholesky::new(h.clone()).ok_or_else(|| FlowError::NotPositive {
        point: None,
        eigenvalue: min_eigenvalue(h),
    })?;
    let diag = chol.l_dirty().diagonal();
    // complex Cholesky happily takes square roots of negative pivots
    let real_pivots = diag.iter().all(|d| d.re > 0.0 && d.im.abs() <= 1e-12 * d.re);
    let det = diag.iter().map(|d| d.re * d.re).product::<f64>();
    if !real_pivots || !(det > 0.0) || !det.is_finite() {
        return Err(FlowError::NotPositive {
            point: None,
            eigenvalue: min_eigenvalue(h),
        });
    }
    Ok((chol, det))
}

pub fn adjugate(m: &CMatrix) -> Result<CMatrix> {
    let n = m.nrows();
    if n == 1 {
        return Ok(CMatrix::identity(1, 1));
    }
    let mut adj = CMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let minor = m.clone().remove_row(c).remove_column(r);
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            adj[(r, c)] = minor.determinant() * sign;
        }
    }
    Ok(adj)
}

/// Orthonormal real coframe adapted to `ω_G`.
///
/// `to_real` expresses the generators `dz^j`, `dz̄^j` (columns) in a real
/// orthonormal coframe `e^1, …, e^{2n}` with `ω_G = Σ e^{2a-1} ∧ e^{2a}`.
#[derive(Clone, Debug)]
pub struct HermitianFrame {
    n: usize,
    to_real: CMatrix,
    from_real: CMatrix,
}

impl HermitianFrame {
    pub fn new(g: &CMatrix) -> Result<Self> {
        let n = g.nrows();
        if n == 0 || n > MAX_DIM || g.ncols() != n {
            return Err(FlowError::Dimension {
                expected: n,
                found: g.ncols(),
            });
        }
        let (chol, _) = positive_factor(g)?;
        // θ = Lᵀ dz is unitary for ω_G, so dz = (Lᵀ)⁻¹ θ.
        let q = chol
            .l()
            .transpose()
            .try_inverse()
            .ok_or(FlowError::NotPositive {
                point: None,
                eigenvalue: 0.0,
            })?;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut to_real = CMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            for a in 0..n {
                let c = q[(j, a)] * s;
                to_real[(2 * a, j)] = c;
                to_real[(2 * a + 1, j)] = I * c;
                to_real[(2 * a, n + j)] = c.conj();
                to_real[(2 * a + 1, n + j)] = -I * c.conj();
            }
        }
        let from_real = to_real.clone().try_inverse().ok_or(FlowError::NotPositive {
            point: None,
            eigenvalue: 0.0,
        })?;
        Ok(Self {
            n,
            to_real,
            from_real,
        })
    }

    /// Matrix taking coefficients over `cols` (source generators, columns of
    /// `gen`) to coefficients over `rows` (target generators).
    fn induced(gen: &CMatrix, rows: &[u32], cols: &[u32]) -> CMatrix {
        CMatrix::from_fn(rows.len(), cols.len(), |r, c| {
            let ri = mask_bits(rows[r]);
            let ci = mask_bits(cols[c]);
            if ri.len() != ci.len() {
                return ZERO;
            }
            if ri.is_empty() {
                return Complex64::new(1.0, 0.0);
            }
            let k = ri.len();
            CMatrix::from_fn(k, k, |a, b| gen[(ri[a], ci[b])]).determinant()
        })
    }

    /// Coefficients of (p,q)-forms expressed in the real orthonormal basis of
    /// degree `p+q` (rows ordered as `subsets(2n, p+q)`).
    pub fn real_coordinates(&self, p: usize, q: usize) -> Result<CMatrix> {
        let basis = Basis::new(self.n, p, q)?;
        let e = subsets(2 * self.n, p + q);
        Ok(Self::induced(&self.to_real, &e, basis.masks()))
    }
}

/// The complex-linear Hodge star `Λ^{p,q} → Λ^{n-q,n-p}` of a fixed metric.
#[derive(Clone, Debug)]
pub struct StarOperator {
    n: usize,
    from: (usize, usize),
    matrix: CMatrix,
}

impl StarOperator {
    pub fn new(g: &CMatrix, p: usize, q: usize) -> Result<Self> {
        let frame = HermitianFrame::new(g)?;
        Self::with_frame(&frame, p, q)
    }

    pub fn with_frame(frame: &HermitianFrame, p: usize, q: usize) -> Result<Self> {
        let n = frame.n;
        if p > n || q > n {
            return Err(FlowError::Degree { n, p, q });
        }
        let out = Basis::new(n, n - q, n - p)?;
        let full = (1u32 << (2 * n)) - 1;
        let e_in = subsets(2 * n, p + q);
        let e_out: Vec<u32> = e_in.iter().map(|&m| full ^ m).collect();
        let t = frame.real_coordinates(p, q)?;
        let back = HermitianFrame::induced(&frame.from_real, out.masks(), &e_out);
        let signs = nalgebra::DVector::from_iterator(
            e_in.len(),
            e_in.iter()
                .map(|&m| Complex64::new(reorder_sign(m, full ^ m), 0.0)),
        );
        let matrix = back * CMatrix::from_diagonal(&signs) * t;
        Ok(Self {
            n,
            from: (p, q),
            matrix,
        })
    }

    pub fn target(&self) -> (usize, usize) {
        (self.n - self.from.1, self.n - self.from.0)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn apply(&self, a: &PointForm) -> Result<PointForm> {
        a.expect_bidegree(self.from.0, self.from.1)?;
        let (p, q) = self.target();
        let mut out = PointForm::zero(self.n, p, q)?;
        self.apply_slice(&a.coeffs, &mut out.coeffs);
        Ok(out)
    }

    pub(crate) fn apply_slice(&self, src: &[Complex64], dst: &mut [Complex64]) {
        for (r, d) in dst.iter_mut().enumerate() {
            let mut acc = ZERO;
            for (c, s) in src.iter().enumerate() {
                acc += self.matrix[(r, c)] * s;
            }
            *d = acc;
        }
    }
}

pub fn hodge_star(a: &PointForm, g: &CMatrix) -> Result<PointForm> {
    check_metric_dim(a, g)?;
    StarOperator::new(g, a.p, a.q)?.apply(a)
}

fn check_metric_dim(a: &PointForm, g: &CMatrix) -> Result<()> {
    if g.nrows() != a.n || g.ncols() != a.n {
        return Err(FlowError::Dimension {
            expected: a.n,
            found: g.nrows(),
        });
    }
    Ok(())
}

/// Pointwise Hermitian inner product of (p,q)-forms, `⟨a,b⟩ vol = a ∧ *b̄`.
#[derive(Clone, Debug)]
pub struct PointInner {
    gram: CMatrix,
}

impl PointInner {
    pub fn new(g: &CMatrix, p: usize, q: usize) -> Result<Self> {
        let frame = HermitianFrame::new(g)?;
        let t = frame.real_coordinates(p, q)?;
        Ok(Self {
            gram: t.adjoint() * t,
        })
    }

    pub(crate) fn eval(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        let mut acc = ZERO;
        for (r, br) in b.iter().enumerate() {
            if *br == ZERO {
                continue;
            }
            let mut row = ZERO;
            for (c, ac) in a.iter().enumerate() {
                row += self.gram[(r, c)] * ac;
            }
            acc += br.conj() * row;
        }
        acc
    }

    pub fn inner(&self, a: &PointForm, b: &PointForm) -> Complex64 {
        self.eval(&a.coeffs, &b.coeffs)
    }
}

pub fn inner(a: &PointForm, b: &PointForm, g: &CMatrix) -> Result<Complex64> {
    check_metric_dim(a, g)?;
    if a.bidegree() != b.bidegree() {
        return Err(FlowError::Bidegree {
            p1: a.p,
            q1: a.q,
            p2: b.p,
            q2: b.q,
        });
    }
    Ok(PointInner::new(g, a.p, a.q)?.inner(a, b))
}

/// Coordinatization of (n−1,n−1)-forms by n×n matrices:
/// `H_{jk} = (Φ ∧ i dz^k ∧ dz̄^j) / vol₀` with `vol₀ = χ^n/n!` for the
/// identity metric. Under this pairing `ω_G^{n−1}/(n−1)!` has matrix
/// `adj(G)`.
#[derive(Clone, Debug)]
pub struct DensityMap {
    n: usize,
    /// For each basis element of Λ^{n−1,n−1}: `(j, k, c)` with
    /// `basis ∧ i dz^k ∧ dz̄^j = c·vol₀`.
    entries: Vec<(usize, usize, Complex64)>,
}

impl DensityMap {
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(FlowError::Degree { n, p: 0, q: 0 });
        }
        let vol0 = metric_power(&CMatrix::identity(n, n), n)?.scale(Complex64::new(1.0 / factorial(n), 0.0));
        let v0 = vol0.coeffs[0];
        let basis = Basis::new(n, n - 1, n - 1)?;
        let mut entries = Vec::with_capacity(basis.len());
        for i in 0..basis.len() {
            let (js, ks) = basis.indices(i);
            let a = (0..n).find(|x| !js.contains(x)).expect("missing holomorphic index");
            let b = (0..n).find(|x| !ks.contains(x)).expect("missing antiholomorphic index");
            let mut e = PointForm::zero(n, n - 1, n - 1)?;
            e.coeffs[i] = Complex64::new(1.0, 0.0);
            let pair = PointForm::basis_element(n, &[a], &[b])?.scale(I);
            let top = wedge(&e, &pair)?;
            entries.push((b, a, top.coeffs[0] / v0));
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The linear map without reality checks; accepts raw coefficients.
    pub fn matrix_of_coeffs(&self, coeffs: &[Complex64]) -> CMatrix {
        let mut h = CMatrix::zeros(self.n, self.n);
        for (c, &(j, k, w)) in coeffs.iter().zip(&self.entries) {
            h[(j, k)] += w * c;
        }
        h
    }

    pub(crate) fn coeffs_of_matrix(&self, h: &CMatrix, out: &mut [Complex64]) {
        for (o, &(j, k, w)) in out.iter_mut().zip(&self.entries) {
            *o = h[(j, k)] / w;
        }
    }

    pub fn matrix_of(&self, phi: &PointForm) -> Result<CMatrix> {
        phi.expect_bidegree(self.n - 1, self.n - 1)?;
        Ok(self.matrix_of_coeffs(&phi.coeffs))
    }

    pub fn form_of(&self, h: &CMatrix) -> Result<PointForm> {
        if h.nrows() != self.n || h.ncols() != self.n {
            return Err(FlowError::Dimension {
                expected: self.n,
                found: h.nrows(),
            });
        }
        let mut out = PointForm::zero(self.n, self.n - 1, self.n - 1)?;
        self.coeffs_of_matrix(h, &mut out.coeffs);
        Ok(out)
    }
}

/// Matrix of a real (n−1,n−1)-form. Rejects forms whose matrix has an
/// anti-Hermitian part above `1e-10` relative to its largest entry (or 1).
pub fn matrix_of_density(phi: &PointForm) -> Result<CMatrix> {
    let h = DensityMap::new(phi.n)?.matrix_of(phi)?;
    let defect = hermitian_defect(&h);
    let scale = h.iter().map(|v| v.norm()).fold(1.0, f64::max);
    if defect > 1e-10 * scale {
        return Err(FlowError::NotReal { defect });
    }
    Ok(h)
}

pub fn density_of_matrix(h: &CMatrix) -> Result<PointForm> {
    DensityMap::new(h.nrows())?.form_of(h)
}

/// The unique `G > 0` with `ω_G^{n−1}/(n−1)!` having matrix `h`:
/// `G = adj(H)·det(H)^{−(n−2)/(n−1)} = det(H)^{1/(n−1)} H⁻¹`.
pub fn root_of_density_matrix(h: &CMatrix) -> Result<CMatrix> {
    let n = h.nrows();
    if n < 2 {
        return Err(FlowError::Degree { n, p: 0, q: 0 });
    }
    let (chol, det) = positive_factor(h)?;
    let inv = chol.inverse();
    let g = inv * Complex64::new(det.powf(1.0 / (n as f64 - 1.0)), 0.0);
    Ok((&g + g.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Inverse of `G ↦ ω_G^{n−1}`: the metric whose (n−1)-th power is `phi`.
pub fn power_root(phi: &PointForm) -> Result<CMatrix> {
    let n = phi.n;
    let h = matrix_of_density(phi)? * Complex64::new(1.0 / factorial(n - 1), 0.0);
    root_of_density_matrix(&h)
}

/// `|Ω|_ω` for `Ω = f dz^1 ∧ … ∧ dz^n`, normalized by
/// `|Ω|²_ω = i^{n²} Ω ∧ Ω̄ / (ω^n/n!)`, i.e. `|f| / √det G`.
pub fn omega_norm(g: &CMatrix, f: Complex64) -> Result<f64> {
    let (_, det) = positive_factor(g)?;
    Ok(f.norm() / det.sqrt())
}

/// Trace `tr_ω u = Σ (G⁻¹)_{kj} U_{jk}` of a (1,1)-form `u = i U_{jk} dz^j∧dz̄^k`.
pub fn trace(u: &PointForm, g: &CMatrix) -> Result<Complex64> {
    let um = u.to_hermitian()?;
    let (chol, _) = positive_factor(g)?;
    Ok((chol.inverse() * um).trace())
}

/// Splits a real (1,1)-form as `u = h0·ω + h2` with `h2` primitive.
pub fn primitive_split(u: &PointForm, g: &CMatrix) -> Result<(f64, PointForm)> {
    check_metric_dim(u, g)?;
    let n = u.n as f64;
    let h0 = trace(u, g)?.re / n;
    let h2 = u - &(&PointForm::hermitian(g)? * h0);
    Ok((h0, h2))
}

/// Lefschetz splitting of a (1,2)-form: `γ = α∧ω + γ₋` with `γ₋ ∧ ω^{n−2} = 0`.
pub fn onetwo_split(gamma: &PointForm, g: &CMatrix) -> Result<(PointForm, PointForm)> {
    gamma.expect_bidegree(1, 2)?;
    check_metric_dim(gamma, g)?;
    let n = gamma.n;
    if n < 3 {
        return Err(FlowError::Invalid("(1,2) splitting needs n >= 3".into()));
    }
    let omega = PointForm::hermitian(g)?;
    let target = wedge(gamma, &metric_power(g, n - 2)?)?;
    let top = metric_power(g, n - 1)?;
    let mut lef = CMatrix::zeros(n, n);
    for j in 0..n {
        let img = wedge(&PointForm::dzbar(n, j)?, &top)?;
        for (r, c) in img.coeffs.iter().enumerate() {
            lef[(r, j)] = *c;
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(&target.coeffs);
    let alpha = lef
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FlowError::Invalid("degenerate Lefschetz map".into()))?;
    let alpha = PointForm::from_coeffs(n, 0, 1, alpha.iter().copied().collect())?;
    let plus = wedge(&alpha, &omega)?;
    let minus = gamma - &plus;
    Ok((plus, minus))
}

/// `adj(G)`, the matrix of `ω_G^{n−1}/(n−1)!`, by the closed form `det(G)·G⁻¹`.
pub fn density_matrix_of_metric(g: &CMatrix) -> Result<CMatrix> {
    let (chol, det) = positive_factor(g)?;
    Ok(chol.inverse() * Complex64::new(det, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn diag(v: &[f64]) -> CMatrix {
        CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            v.len(),
            v.iter().map(|&x| c(x)),
        ))
    }

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(subsets(3, 2), vec![0b011, 0b101, 0b110]);
        assert_eq!(subsets(4, 0), vec![0]);
    }

    #[test]
    fn dz_wedge_basis_and_antisymmetry() {
        let a = PointForm::dz(3, 0).unwrap();
        let b = PointForm::dz(3, 1).unwrap();
        let ab = wedge(&a, &b).unwrap();
        assert_eq!(ab.bidegree(), (2, 0));
        assert_eq!(ab.coeffs()[0], c(1.0));
        let ba = wedge(&b, &a).unwrap();
        assert_eq!(ba.coeffs()[0], c(-1.0));
    }

    #[test]
    fn wedge_degree_overflow_is_an_error() {
        let a = PointForm::volume(3).unwrap();
        let b = PointForm::dz(3, 0).unwrap();
        assert!(matches!(wedge(&a, &b), Err(FlowError::Degree { .. })));
    }

    #[test]
    fn repeated_index_gives_zero() {
        let f = PointForm::basis_element(3, &[1, 1], &[]).unwrap();
        assert_eq!(f.sup_norm(), 0.0);
    }

    #[test]
    fn hermitian_roundtrip() {
        let g = diag(&[1.0, 2.0, 3.0]);
        let f = PointForm::hermitian(&g).unwrap();
        assert!(f.is_real(1e-15));
        assert_eq!(f.to_hermitian().unwrap(), g);
    }

    #[test]
    fn conj_of_dz_is_dzbar() {
        let f = PointForm::dz(3, 2).unwrap();
        assert_eq!(f.conj(), PointForm::dzbar(3, 2).unwrap());
    }

    #[test]
    fn omega_norm_examples() {
        assert!((omega_norm(&CMatrix::identity(3, 3), c(1.0)).unwrap() - 1.0).abs() < 1e-15);
        let v = omega_norm(&diag(&[1.0, 2.0, 3.0]), c(1.0)).unwrap();
        assert!((v - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        let s = omega_norm(&(CMatrix::identity(3, 3) * c(4.0)), c(1.0)).unwrap();
        assert!((s - 4f64.powf(-1.5)).abs() < 1e-15);
        assert!(omega_norm(&diag(&[1.0, -1.0, 1.0]), c(1.0)).is_err());
    }

    #[test]
    fn non_positive_metric_rejected_by_star() {
        let g = diag(&[1.0, 0.0, 1.0]);
        let f = PointForm::dz(3, 0).unwrap();
        assert!(matches!(hodge_star(&f, &g), Err(FlowError::NotPositive { .. })));
    }

    #[test]
    fn identity_density_is_identity_matrix() {
        let chi = CMatrix::identity(3, 3);
        let phi = &metric_power(&chi, 2).unwrap() * 0.5;
        let h = matrix_of_density(&phi).unwrap();
        assert!((h - CMatrix::identity(3, 3)).norm() < 1e-15);
        let g = root_of_density_matrix(&CMatrix::identity(3, 3)).unwrap();
        assert!((g - chi).norm() < 1e-15);
    }

    #[test]
    fn non_real_density_rejected() {
        let mut phi = PointForm::zero(3, 2, 2).unwrap();
        phi.coeffs_mut()[1] = c(1.0);
        assert!(matches!(matrix_of_density(&phi), Err(FlowError::NotReal { .. })));
    }

    #[test]
    fn root_rejects_indefinite() {
        let h = diag(&[1.0, -0.5, 2.0]);
        assert!(matches!(
            root_of_density_matrix(&h),
            Err(FlowError::NotPositive { eigenvalue, .. }) if (eigenvalue + 0.5).abs() < 1e-12
        ));
    }

    #[test]
    fn primitive_split_of_omega_and_single_plane() {
        let g = CMatrix::identity(3, 3);
        let omega = PointForm::hermitian(&g).unwrap();
        let (h0, h2) = primitive_split(&omega, &g).unwrap();
        assert!((h0 - 1.0).abs() < 1e-15 && h2.sup_norm() < 1e-15);

        let u = &PointForm::basis_element(3, &[0], &[0]).unwrap() * I;
        let (h0, h2) = primitive_split(&u, &g).unwrap();
        assert!((h0 - 1.0 / 3.0).abs() < 1e-15);
        let top = wedge(&h2, &metric_power(&g, 2).unwrap()).unwrap();
        assert!(top.sup_norm() < 1e-14);
    }

    #[test]
    fn onetwo_split_of_pure_pieces() {
        let g = diag(&[1.0, 2.0, 0.5]);
        let omega = PointForm::hermitian(&g).unwrap();
        let beta = &PointForm::dzbar(3, 1).unwrap() * Complex64::new(0.3, -1.2);
        let gamma = wedge(&beta, &omega).unwrap();
        let (plus, minus) = onetwo_split(&gamma, &g).unwrap();
        assert!((&plus - &gamma).sup_norm() < 1e-13);
        assert!(minus.sup_norm() < 1e-13);

        let (plus2, minus2) = onetwo_split(&minus_of(&g), &g).unwrap();
        assert!(plus2.sup_norm() < 1e-13);
        assert!((&minus2 - &minus_of(&g)).sup_norm() < 1e-13);
    }

    fn minus_of(g: &CMatrix) -> PointForm {
        let mut gamma = PointForm::zero(3, 1, 2).unwrap();
        gamma.coeffs_mut()[3] = Complex64::new(0.7, 0.2);
        gamma.coeffs_mut()[5] = Complex64::new(-0.1, 0.4);
        onetwo_split(&gamma, g).unwrap().1
    }
}
