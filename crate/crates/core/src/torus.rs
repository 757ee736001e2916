//! Periodic fields on the flat torus `T^n = C^n / (Z + iZ)^n` with
//! Fourier-spectral Dolbeault operators.
//!
//! Fields may depend only on a chosen subset of the `2n` real coordinates
//! (`x¹, y¹, …, xⁿ, yⁿ`, indexed `0, 1, …, 2n−1`). Grid points are stored
//! row-major over the active coordinates in increasing order. Derivatives
//! along inactive coordinates are never formed, so they are exactly zero.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Sub};
use std::sync::Arc;

use crate::algebra::{
    self, reorder_sign, Basis, CMatrix, DensityMap, PointForm, PointInner, StarOperator, I,
};
use crate::error::{FlowError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Parses `x1`, `y3`, … into a real coordinate index.
pub fn parse_coord(name: &str) -> Option<usize> {
    let (axis, idx) = name.split_at(1);
    let j: usize = idx.parse().ok()?;
    if j == 0 {
        return None;
    }
    match axis {
        "x" => Some(2 * (j - 1)),
        "y" => Some(2 * (j - 1) + 1),
        _ => None,
    }
}

pub fn coord_name(c: usize) -> String {
    format!("{}{}", if c.is_multiple_of(2) { 'x' } else { 'y' }, c / 2 + 1)
}

struct GridInner {
    n: usize,
    resolution: usize,
    active: Vec<usize>,
    period: f64,
    npts: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// Integer wavenumber of each 1D index.
    modes: Vec<i64>,
    /// First-derivative wavenumber `2πk/period`, zero at the Nyquist index.
    kappa: Vec<f64>,
    /// Fourier symbols of `∂/∂z^j` and `∂/∂z̄^j`; `None` when `j` is inactive.
    del: Vec<Option<Vec<Complex64>>>,
    delbar: Vec<Option<Vec<Complex64>>>,
}

/// Uniform periodic grid on the active coordinates of `T^n`.
#[derive(Clone)]
pub struct TorusGrid(Arc<GridInner>);

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.0.n)
            .field("resolution", &self.0.resolution)
            .field("active", &self.0.active)
            .field("period", &self.0.period)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.n == other.0.n
                && self.0.resolution == other.0.resolution
                && self.0.active == other.0.active
                && self.0.period == other.0.period)
    }
}

impl TorusGrid {
    pub fn new(n: usize, resolution: usize, active: &[usize]) -> Result<Self> {
        Self::with_period(n, resolution, active, 1.0)
    }

    pub fn with_period(n: usize, resolution: usize, active: &[usize], period: f64) -> Result<Self> {
        if n == 0 || n > algebra::MAX_DIM {
            return Err(FlowError::Grid(format!("complex dimension {n} unsupported")));
        }
        if resolution < 4 || !resolution.is_multiple_of(2) {
            return Err(FlowError::Grid(format!(
                "resolution must be even and >= 4, got {resolution}"
            )));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(FlowError::Grid(format!("period must be positive, got {period}")));
        }
        let mut act = active.to_vec();
        act.sort_unstable();
        act.dedup();
        if act.len() != active.len() || act.iter().any(|&c| c >= 2 * n) {
            return Err(FlowError::Grid(format!("bad active coordinates {active:?}")));
        }
        let npts = resolution.pow(act.len() as u32);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(resolution);
        let ifft = planner.plan_fft_inverse(resolution);
        let modes: Vec<i64> = (0..resolution)
            .map(|i| {
                if i < resolution / 2 {
                    i as i64
                } else {
                    i as i64 - resolution as i64
                }
            })
            .collect();
        let kappa: Vec<f64> = modes
            .iter()
            .map(|&k| {
                if k == -(resolution as i64) / 2 {
                    0.0
                } else {
                    2.0 * PI * k as f64 / period
                }
            })
            .collect();

        let d = act.len();
        let axis_index = |pt: usize, a: usize| (pt / resolution.pow((d - 1 - a) as u32)) % resolution;
        let mut del = Vec::with_capacity(n);
        let mut delbar = Vec::with_capacity(n);
        for j in 0..n {
            let ax = act.iter().position(|&c| c == 2 * j);
            let ay = act.iter().position(|&c| c == 2 * j + 1);
            if ax.is_none() && ay.is_none() {
                del.push(None);
                delbar.push(None);
                continue;
            }
            let mut s = vec![ZERO; npts];
            let mut sb = vec![ZERO; npts];
            for pt in 0..npts {
                let kx = ax.map_or(0.0, |a| kappa[axis_index(pt, a)]);
                let ky = ay.map_or(0.0, |a| kappa[axis_index(pt, a)]);
                // ∂_z = ½(∂_x − i∂_y), ∂_z̄ = ½(∂_x + i∂_y), with ∂ ↦ iκ
                s[pt] = Complex64::new(0.5 * ky, 0.5 * kx);
                sb[pt] = Complex64::new(-0.5 * ky, 0.5 * kx);
            }
            del.push(Some(s));
            delbar.push(Some(sb));
        }
        Ok(Self(Arc::new(GridInner {
            n,
            resolution,
            active: act,
            period,
            npts,
            fft,
            ifft,
            modes,
            kappa,
            del,
            delbar,
        })))
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn resolution(&self) -> usize {
        self.0.resolution
    }

    pub fn active(&self) -> &[usize] {
        &self.0.active
    }

    pub fn period(&self) -> f64 {
        self.0.period
    }

    pub fn len(&self) -> usize {
        self.0.npts
    }

    pub fn is_empty(&self) -> bool {
        self.0.npts == 0
    }

    /// Total volume of the torus in coordinate measure.
    pub fn volume(&self) -> f64 {
        self.0.period.powi(2 * self.0.n as i32)
    }

    /// Real coordinates (length `2n`, inactive ones zero) of a grid point.
    pub fn coords(&self, pt: usize) -> Vec<f64> {
        let g = &self.0;
        let d = g.active.len();
        let h = g.period / g.resolution as f64;
        let mut x = vec![0.0; 2 * g.n];
        for (a, &c) in g.active.iter().enumerate() {
            let i = (pt / g.resolution.pow((d - 1 - a) as u32)) % g.resolution;
            x[c] = i as f64 * h;
        }
        x
    }

    /// Integer wave vector (one entry per active coordinate) of Fourier index `pt`.
    pub fn mode(&self, pt: usize) -> Vec<i64> {
        let g = &self.0;
        let d = g.active.len();
        (0..d)
            .map(|a| g.modes[(pt / g.resolution.pow((d - 1 - a) as u32)) % g.resolution])
            .collect()
    }

    pub fn is_active_complex(&self, j: usize) -> bool {
        self.0.del.get(j).is_some_and(|s| s.is_some())
    }

    /// Largest resolved first-derivative wavenumber per active axis.
    pub fn max_wavenumber(&self) -> f64 {
        self.0.kappa.iter().fold(0.0, |m, k| m.max(k.abs()))
    }

    pub fn spacing(&self) -> f64 {
        self.0.period / self.0.resolution as f64
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let g = &self.0;
        let d = g.active.len();
        let nres = g.resolution;
        let plan = if inverse { &g.ifft } else { &g.fft };
        let mut line = vec![ZERO; nres];
        let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
        for a in 0..d {
            let stride = nres.pow((d - 1 - a) as u32);
            let block = stride * nres;
            for base in (0..g.npts).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[start + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[start + i * stride] = *v;
                    }
                }
            }
        }
        if inverse && d > 0 {
            let s = 1.0 / g.npts as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    pub(crate) fn del_symbol(&self, j: usize) -> Option<&[Complex64]> {
        self.0.del[j].as_deref()
    }

    pub(crate) fn delbar_symbol(&self, j: usize) -> Option<&[Complex64]> {
        self.0.delbar[j].as_deref()
    }

    /// Symbol `Π_a (iκ_a)^{α_a}` of a real derivative multi-index.
    fn real_derivative_symbol(&self, alpha: &[usize]) -> Vec<Complex64> {
        let g = &self.0;
        let d = g.active.len();
        (0..g.npts)
            .map(|pt| {
                let mut s = Complex64::new(1.0, 0.0);
                for (a, &k) in alpha.iter().enumerate() {
                    let idx = (pt / g.resolution.pow((d - 1 - a) as u32)) % g.resolution;
                    s *= (I * g.kappa[idx]).powu(k as u32);
                }
                s
            })
            .collect()
    }
}

/// Precomputed coefficient products for pointwise wedges of fixed bidegrees.
struct WedgeTable {
    out: (usize, usize),
    terms: Vec<(usize, usize, usize, f64)>,
}

impl WedgeTable {
    fn new(n: usize, a: (usize, usize), b: (usize, usize)) -> Result<Self> {
        let ba = Basis::new(n, a.0, a.1)?;
        let bb = Basis::new(n, b.0, b.1)?;
        let bo = Basis::new(n, a.0 + b.0, a.1 + b.1)?;
        let mut terms = Vec::new();
        for (i, &ma) in ba.masks().iter().enumerate() {
            for (j, &mb) in bb.masks().iter().enumerate() {
                if ma & mb == 0 {
                    let k = bo.index_of(ma | mb).expect("product bidegree");
                    terms.push((i, j, k, reorder_sign(ma, mb)));
                }
            }
        }
        Ok(Self {
            out: (a.0 + b.0, a.1 + b.1),
            terms,
        })
    }
}

/// A field of (p,q)-forms, stored coefficient-major (one scalar field per
/// basis element).
#[derive(Clone, Debug)]
pub struct FormField {
    grid: TorusGrid,
    p: usize,
    q: usize,
    coeffs: Vec<Vec<Complex64>>,
}

impl FormField {
    pub fn zeros(grid: &TorusGrid, p: usize, q: usize) -> Result<Self> {
        let basis = Basis::new(grid.n(), p, q)?;
        Ok(Self {
            grid: grid.clone(),
            p,
            q,
            coeffs: vec![vec![ZERO; grid.len()]; basis.len()],
        })
    }

    pub fn constant(grid: &TorusGrid, form: &PointForm) -> Result<Self> {
        if form.n() != grid.n() {
            return Err(FlowError::Dimension {
                expected: grid.n(),
                found: form.n(),
            });
        }
        let (p, q) = form.bidegree();
        Ok(Self {
            grid: grid.clone(),
            p,
            q,
            coeffs: form.coeffs().iter().map(|&c| vec![c; grid.len()]).collect(),
        })
    }

    pub fn from_fn<F>(grid: &TorusGrid, p: usize, q: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> PointForm,
    {
        let mut out = Self::zeros(grid, p, q)?;
        for pt in 0..grid.len() {
            let v = f(&grid.coords(pt));
            out.set(pt, &v)?;
        }
        Ok(out)
    }

    /// Scalar (0,0) field from a real function of the coordinates.
    pub fn scalar_fn<F>(grid: &TorusGrid, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64,
    {
        let vals = (0..grid.len())
            .map(|pt| Complex64::new(f(&grid.coords(pt)), 0.0))
            .collect();
        Self {
            grid: grid.clone(),
            p: 0,
            q: 0,
            coeffs: vec![vals],
        }
    }

    /// Field from one point form per grid point, all of bidegree `(p,q)`.
    pub fn from_points(grid: &TorusGrid, p: usize, q: usize, points: &[PointForm]) -> Result<Self> {
        if points.len() != grid.len() {
            return Err(FlowError::Dimension {
                expected: grid.len(),
                found: points.len(),
            });
        }
        let mut out = Self::zeros(grid, p, q)?;
        for (pt, f) in points.iter().enumerate() {
            out.set(pt, f)?;
        }
        Ok(out)
    }

    pub fn scalar_values(grid: &TorusGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FlowError::Dimension {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            p: 0,
            q: 0,
            coeffs: vec![values],
        })
    }

    pub fn from_coeffs(grid: &TorusGrid, p: usize, q: usize, coeffs: Vec<Vec<Complex64>>) -> Result<Self> {
        let basis = Basis::new(grid.n(), p, q)?;
        if coeffs.len() != basis.len() || coeffs.iter().any(|c| c.len() != grid.len()) {
            return Err(FlowError::Dimension {
                expected: basis.len(),
                found: coeffs.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            p,
            q,
            coeffs,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn bidegree(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn coeffs(&self) -> &[Vec<Complex64>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Vec<Complex64>] {
        &mut self.coeffs
    }

    /// Scalar values of a (0,0) field.
    pub fn values(&self) -> &[Complex64] {
        &self.coeffs[0]
    }

    pub fn at(&self, pt: usize) -> PointForm {
        PointForm::from_coeffs(
            self.grid.n(),
            self.p,
            self.q,
            self.coeffs.iter().map(|c| c[pt]).collect(),
        )
        .expect("field shape")
    }

    pub fn set(&mut self, pt: usize, form: &PointForm) -> Result<()> {
        if form.bidegree() != (self.p, self.q) {
            let (p2, q2) = form.bidegree();
            return Err(FlowError::Bidegree {
                p1: self.p,
                q1: self.q,
                p2,
                q2,
            });
        }
        for (c, v) in self.coeffs.iter_mut().zip(form.coeffs()) {
            c[pt] = *v;
        }
        Ok(())
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(FlowError::Grid("fields live on different grids".into()));
        }
        if (self.p, self.q) != (other.p, other.q) {
            return Err(FlowError::Bidegree {
                p1: self.p,
                q1: self.q,
                p2: other.p,
                q2: other.q,
            });
        }
        Ok(())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        out.coeffs
            .iter_mut()
            .flat_map(|c| c.iter_mut())
            .for_each(|v| *v *= s);
        out
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    /// Multiplies every coefficient by a scalar field.
    pub fn times_scalar(&self, f: &[Complex64]) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            c.iter_mut().zip(f).for_each(|(v, s)| *v *= s);
        }
        out
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y * s);
        }
        Ok(out)
    }

    pub fn sup_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Largest pointwise reality defect.
    pub fn reality_defect(&self) -> f64 {
        (0..self.grid.len())
            .map(|pt| self.at(pt).reality_defect())
            .fold(0.0, f64::max)
    }

    /// Pointwise exterior product of two fields.
    pub fn wedge(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(FlowError::Grid("fields live on different grids".into()));
        }
        let table = WedgeTable::new(self.grid.n(), (self.p, self.q), (other.p, other.q))?;
        let mut out = Self::zeros(&self.grid, table.out.0, table.out.1)?;
        for &(i, j, k, s) in &table.terms {
            let (a, b) = (&self.coeffs[i], &other.coeffs[j]);
            out.coeffs[k]
                .iter_mut()
                .zip(a.iter().zip(b))
                .for_each(|(o, (x, y))| *o += x * y * s);
        }
        Ok(out)
    }

    /// Pointwise exterior product with a constant form.
    pub fn wedge_const(&self, form: &PointForm) -> Result<Self> {
        self.wedge(&Self::constant(&self.grid, form)?)
    }

    fn to_fourier(&self) -> Vec<Vec<Complex64>> {
        self.coeffs
            .iter()
            .map(|c| {
                let mut h = c.clone();
                self.grid.forward(&mut h);
                h
            })
            .collect()
    }

    fn from_fourier(grid: &TorusGrid, p: usize, q: usize, mut hat: Vec<Vec<Complex64>>) -> Self {
        for h in hat.iter_mut() {
            if h.iter().any(|v| *v != ZERO) {
                grid.inverse(h);
            }
        }
        Self {
            grid: grid.clone(),
            p,
            q,
            coeffs: hat,
        }
    }

    /// 2/3-rule truncation: drops every Fourier mode with some active
    /// wavenumber above `resolution/3`.
    pub fn truncate_two_thirds(&self) -> Self {
        let res = self.grid.resolution() as i64;
        let keep: Vec<bool> = (0..self.grid.len())
            .map(|pt| self.grid.mode(pt).iter().all(|k| 3 * k.abs() <= res))
            .collect();
        let mut hat = self.to_fourier();
        for h in hat.iter_mut() {
            h.iter_mut().zip(&keep).filter(|(_, k)| !**k).for_each(|(v, _)| *v = ZERO);
        }
        Self::from_fourier(&self.grid, self.p, self.q, hat)
    }

    /// Applies `∂` (holomorphic) or `∂̄` to Fourier coefficients of a (p,q)-field.
    fn dolbeault_hat(
        grid: &TorusGrid,
        p: usize,
        q: usize,
        hat: &[Vec<Complex64>],
        which: Dolbeault,
    ) -> Result<(usize, usize, Vec<Vec<Complex64>>)> {
        let n = grid.n();
        let (po, qo) = match which {
            Dolbeault::Del => (p + 1, q),
            Dolbeault::DelBar => (p, q + 1),
        };
        let bi = Basis::new(n, p, q)?;
        let bo = Basis::new(n, po, qo)?;
        let mut out = vec![vec![ZERO; grid.len()]; bo.len()];
        for j in 0..n {
            let (sym, bit) = match which {
                Dolbeault::Del => (grid.del_symbol(j), 1u32 << j),
                Dolbeault::DelBar => (grid.delbar_symbol(j), 1u32 << (n + j)),
            };
            let Some(sym) = sym else { continue };
            for (i, &m) in bi.masks().iter().enumerate() {
                if m & bit != 0 {
                    continue;
                }
                let k = bo.index_of(m | bit).expect("raised bidegree");
                let sign = reorder_sign(bit, m);
                out[k]
                    .iter_mut()
                    .zip(sym.iter().zip(&hat[i]))
                    .for_each(|(o, (s, h))| *o += s * h * sign);
            }
        }
        Ok((po, qo, out))
    }

    pub fn dolbeault(&self, which: Dolbeault) -> Result<Self> {
        let hat = self.to_fourier();
        let (p, q, out) = Self::dolbeault_hat(&self.grid, self.p, self.q, &hat, which)?;
        Ok(Self::from_fourier(&self.grid, p, q, out))
    }

    pub fn del(&self) -> Result<Self> {
        self.dolbeault(Dolbeault::Del)
    }

    pub fn delbar(&self) -> Result<Self> {
        self.dolbeault(Dolbeault::DelBar)
    }

    /// `d = ∂ + ∂̄`, returned as its `(p+1,q)` and `(p,q+1)` parts.
    pub fn exterior_derivative(&self) -> Result<(Self, Self)> {
        let hat = self.to_fourier();
        let (p1, q1, a) = Self::dolbeault_hat(&self.grid, self.p, self.q, &hat, Dolbeault::Del)?;
        let (p2, q2, b) = Self::dolbeault_hat(&self.grid, self.p, self.q, &hat, Dolbeault::DelBar)?;
        Ok((
            Self::from_fourier(&self.grid, p1, q1, a),
            Self::from_fourier(&self.grid, p2, q2, b),
        ))
    }

    /// `i∂∂̄F`; maps real fields to real fields.
    pub fn i_ddbar(&self) -> Result<Self> {
        let hat = self.to_fourier();
        let (p1, q1, h1) = Self::dolbeault_hat(&self.grid, self.p, self.q, &hat, Dolbeault::DelBar)?;
        let (p2, q2, mut h2) = Self::dolbeault_hat(&self.grid, p1, q1, &h1, Dolbeault::Del)?;
        h2.iter_mut()
            .flat_map(|h| h.iter_mut())
            .for_each(|v| *v *= I);
        Ok(Self::from_fourier(&self.grid, p2, q2, h2))
    }

    /// Pointwise Hodge star in the metric field.
    pub fn star(&self, metric: &MatrixField) -> Result<Self> {
        metric.check_grid(&self.grid)?;
        let n = self.grid.n();
        let (p, q) = (n - self.q, n - self.p);
        let mut out = Self::zeros(&self.grid, p, q)?;
        let mut src = vec![ZERO; self.coeffs.len()];
        let mut dst = vec![ZERO; out.coeffs.len()];
        let constant = metric.is_constant();
        let mut op = None;
        for pt in 0..self.grid.len() {
            if op.is_none() || !constant {
                op = Some(StarOperator::new(&metric.at(pt), self.p, self.q).map_err(|e| at_point(e, pt))?);
            }
            for (s, c) in src.iter_mut().zip(&self.coeffs) {
                *s = c[pt];
            }
            op.as_ref().expect("star built").apply_slice(&src, &mut dst);
            for (c, d) in out.coeffs.iter_mut().zip(&dst) {
                c[pt] = *d;
            }
        }
        Ok(out)
    }

    /// Formal adjoint of `∂`: `∂*F = −*∂̄*F`, star taken in `metric`.
    pub fn codifferential(&self, metric: &MatrixField) -> Result<Self> {
        if self.p == 0 {
            return Err(FlowError::Degree {
                n: self.grid.n(),
                p: 0,
                q: self.q,
            });
        }
        Ok(self.star(metric)?.delbar()?.star(metric)?.scale_real(-1.0))
    }

    /// Real and imaginary parts of the matrices `matrix_of_density` at each
    /// point, for (n−1,n−1)-fields.
    pub fn to_density(&self, map: &DensityMap) -> Result<MatrixField> {
        let n = self.grid.n();
        if (self.p, self.q) != (n - 1, n - 1) {
            return Err(FlowError::Bidegree {
                p1: self.p,
                q1: self.q,
                p2: n - 1,
                q2: n - 1,
            });
        }
        let mut out = MatrixField::zeros(&self.grid);
        let mut src = vec![ZERO; self.coeffs.len()];
        for pt in 0..self.grid.len() {
            for (s, c) in src.iter_mut().zip(&self.coeffs) {
                *s = c[pt];
            }
            out.set(pt, &map.matrix_of_coeffs(&src));
        }
        Ok(out)
    }

    /// Largest coefficient of spectral derivatives up to total order `k`
    /// over the active coordinates.
    pub fn ck_norm(&self, k: usize) -> Result<f64> {
        let res = self.grid.resolution();
        if k > res / 4 {
            return Err(FlowError::Resolution { k, resolution: res });
        }
        let d = self.grid.active().len();
        let mut alphas = vec![vec![]];
        for _ in 0..d {
            alphas = alphas
                .into_iter()
                .flat_map(|a: Vec<usize>| {
                    (0..=k).map(move |e| {
                        let mut b = a.clone();
                        b.push(e);
                        b
                    })
                })
                .collect();
        }
        alphas.retain(|a| a.iter().sum::<usize>() <= k);
        let symbols: Vec<Vec<Complex64>> = alphas
            .iter()
            .map(|a| self.grid.real_derivative_symbol(a))
            .collect();
        let mut best: f64 = 0.0;
        for h in self.to_fourier() {
            for (alpha, sym) in alphas.iter().zip(&symbols) {
                let mut v: Vec<Complex64> = if alpha.iter().all(|&e| e == 0) {
                    h.clone()
                } else {
                    h.iter().zip(sym).map(|(x, s)| x * s).collect()
                };
                self.grid.inverse(&mut v);
                best = v.iter().map(|z| z.norm()).fold(best, f64::max);
            }
        }
        Ok(best)
    }
}

impl Add for &FormField {
    type Output = FormField;
    fn add(self, rhs: &FormField) -> FormField {
        self.axpy(1.0, rhs).expect("matching fields")
    }
}

impl Sub for &FormField {
    type Output = FormField;
    fn sub(self, rhs: &FormField) -> FormField {
        self.axpy(-1.0, rhs).expect("matching fields")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dolbeault {
    Del,
    DelBar,
}

fn at_point(e: FlowError, pt: usize) -> FlowError {
    match e {
        FlowError::NotPositive { eigenvalue, .. } => FlowError::NotPositive {
            point: Some(pt),
            eigenvalue,
        },
        other => other,
    }
}

/// Field of n×n complex matrices (metrics or density matrices), stored
/// point-major with row-major entries.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: TorusGrid,
    data: Vec<Complex64>,
}

impl MatrixField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        let n = grid.n();
        Self {
            grid: grid.clone(),
            data: vec![ZERO; grid.len() * n * n],
        }
    }

    pub fn constant(grid: &TorusGrid, m: &CMatrix) -> Result<Self> {
        let mut out = Self::zeros(grid);
        if m.nrows() != grid.n() || m.ncols() != grid.n() {
            return Err(FlowError::Dimension {
                expected: grid.n(),
                found: m.nrows(),
            });
        }
        for pt in 0..grid.len() {
            out.set(pt, m);
        }
        Ok(out)
    }

    pub fn identity(grid: &TorusGrid) -> Self {
        Self::constant(grid, &CMatrix::identity(grid.n(), grid.n())).expect("square identity")
    }

    pub fn from_fn<F>(grid: &TorusGrid, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> CMatrix,
    {
        let mut out = Self::zeros(grid);
        for pt in 0..grid.len() {
            let m = f(&grid.coords(pt));
            if m.nrows() != grid.n() || m.ncols() != grid.n() {
                return Err(FlowError::Dimension {
                    expected: grid.n(),
                    found: m.nrows(),
                });
            }
            out.set(pt, &m);
        }
        Ok(out)
    }

    pub fn from_data(grid: &TorusGrid, data: Vec<Complex64>) -> Result<Self> {
        let expected = grid.len() * grid.n() * grid.n();
        if data.len() != expected {
            return Err(FlowError::Dimension {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            data,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn at(&self, pt: usize) -> CMatrix {
        let n = self.grid.n();
        let s = &self.data[pt * n * n..(pt + 1) * n * n];
        CMatrix::from_fn(n, n, |r, c| s[r * n + c])
    }

    pub fn set(&mut self, pt: usize, m: &CMatrix) {
        let n = self.grid.n();
        let s = &mut self.data[pt * n * n..(pt + 1) * n * n];
        for r in 0..n {
            for c in 0..n {
                s[r * n + c] = m[(r, c)];
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        let m = self.grid.n() * self.grid.n();
        let first = &self.data[..m];
        self.data.chunks(m).all(|c| c == first)
    }

    pub(crate) fn check_grid(&self, grid: &TorusGrid) -> Result<()> {
        if &self.grid != grid {
            return Err(FlowError::Grid("metric lives on a different grid".into()));
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        let mut out = self.clone();
        out.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b * s);
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest anti-Hermitian entry over the grid.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.grid.len())
            .map(|pt| algebra::hermitian_defect(&self.at(pt)))
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue over the grid.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.grid.len())
            .map(|pt| algebra::min_eigenvalue(&self.at(pt)))
            .fold(f64::INFINITY, f64::min)
    }

    /// (n−1,n−1)-form field with these matrices under the density map.
    pub fn to_form(&self, map: &DensityMap) -> Result<FormField> {
        let n = self.grid.n();
        let mut out = FormField::zeros(&self.grid, n - 1, n - 1)?;
        let mut buf = vec![ZERO; out.coeffs.len()];
        for pt in 0..self.grid.len() {
            map.coeffs_of_matrix(&self.at(pt), &mut buf);
            for (c, b) in out.coeffs.iter_mut().zip(&buf) {
                c[pt] = *b;
            }
        }
        Ok(out)
    }

    /// The (1,1)-form field `ω_G` of a metric field.
    pub fn to_kahler_form(&self) -> FormField {
        let n = self.grid.n();
        let mut out = FormField::zeros(&self.grid, 1, 1).expect("(1,1) fits");
        for pt in 0..self.grid.len() {
            for r in 0..n {
                for c in 0..n {
                    out.coeffs[r * n + c][pt] = I * self.data[pt * n * n + r * n + c];
                }
            }
        }
        out
    }
}

/// `∫ ⟨F1, F2⟩_ω dvol_ω` with `dvol_ω = det G · dx` (unit torus has volume 1).
pub fn l2_inner(f1: &FormField, f2: &FormField, metric: &MatrixField) -> Result<Complex64> {
    f1.check_same(f2)?;
    metric.check_grid(&f1.grid)?;
    let npts = f1.grid.len();
    let constant = metric.is_constant();
    let mut a = vec![ZERO; f1.coeffs.len()];
    let mut b = vec![ZERO; f1.coeffs.len()];
    let mut acc = ZERO;
    let mut cached: Option<(PointInner, f64)> = None;
    for pt in 0..npts {
        if cached.is_none() || !constant {
            let g = metric.at(pt);
            let (_, det) = algebra::positive_factor(&g).map_err(|e| at_point(e, pt))?;
            cached = Some((PointInner::new(&g, f1.p, f1.q)?, det));
        }
        let (ip, det) = cached.as_ref().expect("inner built");
        for (k, (c1, c2)) in f1.coeffs.iter().zip(&f2.coeffs).enumerate() {
            a[k] = c1[pt];
            b[k] = c2[pt];
        }
        acc += ip.eval(&a, &b) * *det;
    }
    Ok(acc * (f1.grid.volume() / npts as f64))
}

pub fn l2_norm(f: &FormField, metric: &MatrixField) -> Result<f64> {
    Ok(l2_inner(f, f, metric)?.re.max(0.0).sqrt())
}

/// Same inner product evaluated from Fourier coefficients (flat constant
/// metric only), via Parseval.
pub fn l2_inner_fourier(f1: &FormField, f2: &FormField, metric: &CMatrix) -> Result<Complex64> {
    f1.check_same(f2)?;
    let (_, det) = algebra::positive_factor(metric)?;
    let ip = PointInner::new(metric, f1.p, f1.q)?;
    let h1 = f1.to_fourier();
    let h2 = f2.to_fourier();
    let npts = f1.grid.len();
    let mut acc = ZERO;
    let mut a = vec![ZERO; h1.len()];
    let mut b = vec![ZERO; h1.len()];
    for k in 0..npts {
        for (i, (x, y)) in h1.iter().zip(&h2).enumerate() {
            a[i] = x[k];
            b[i] = y[k];
        }
        acc += ip.eval(&a, &b);
    }
    let n2 = (npts as f64) * (npts as f64);
    Ok(acc * det * (f1.grid.volume() / n2))
}
