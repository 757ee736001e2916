//! Linearization of the flow operator: closed perturbation directions, the
//! `(h0, h2)` decomposition, the Laplacian `□ = ∂∂*` in direct and
//! closed-form versions, finite-difference derivatives of `E`, and the
//! spectral gap of the linearization at the flat metric.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    factorial, metric_power, primitive_split, Basis, CMatrix, DensityMap, PointForm, I,
};
use crate::error::{FlowError, Result};
use crate::flow::{metric_from_density, FlowOperator, FlowState};
use crate::torus::{l2_inner, FormField, MatrixField, TorusGrid};

/// Generator `μ = c₀χ + H + i∂∂̄f` of a closed (1,1)-form.
#[derive(Clone, Debug)]
pub struct ClosedGenerator {
    pub c0: f64,
    pub h: Option<CMatrix>,
    /// Real scalar potential `f`.
    pub f: Option<FormField>,
}

impl ClosedGenerator {
    pub fn potential(f: FormField) -> Self {
        Self {
            c0: 0.0,
            h: None,
            f: Some(f),
        }
    }

    /// Matrix field of `μ`.
    pub fn matrix(&self, grid: &TorusGrid) -> Result<MatrixField> {
        let n = grid.n();
        let mut m = CMatrix::identity(n, n) * Complex64::new(self.c0, 0.0);
        if let Some(h) = &self.h {
            m += h;
        }
        let base = MatrixField::constant(grid, &m)?;
        match &self.f {
            Some(f) => Ok(base.axpy(1.0, &crate::flow::hessian_field(f)?)),
            None => Ok(base),
        }
    }
}

/// Real closed (n−1,n−1) direction with its decomposition
/// `ψ = h0·ω^{n−1}/(n−1)! − h2∧ω^{n−2}/(n−2)!`.
#[derive(Clone, Debug)]
pub struct PerturbationDirection {
    pub psi: FormField,
    /// Real scalar field (stored as a (0,0) field).
    pub h0: FormField,
    /// Primitive real (1,1) field.
    pub h2: FormField,
    pub metric: MatrixField,
}

fn omega_power_field(metric: &MatrixField, k: usize) -> Result<FormField> {
    let grid = metric.grid();
    let points: Vec<PointForm> = (0..grid.len())
        .map(|pt| metric_power(&metric.at(pt), k))
        .collect::<Result<_>>()?;
    FormField::from_points(grid, k, k, &points)
}

/// `ψ = (n−1)·μ∧χ^{n−2}`, the derivative of `(χ + sμ)^{n−1}` at `s = 0`,
/// decomposed against the flat metric.
pub fn closed_direction(grid: &TorusGrid, generator: &ClosedGenerator) -> Result<PerturbationDirection> {
    let n = grid.n();
    let mu = generator.matrix(grid)?.to_kahler_form();
    let chi_pow = omega_power_field(&MatrixField::identity(grid), n - 2)?;
    let psi = mu.wedge(&chi_pow)?.scale_real((n - 1) as f64);
    let metric = MatrixField::identity(grid);
    let (h0, h2) = decompose_n1n1(&psi, &metric)?;
    Ok(PerturbationDirection { psi, h0, h2, metric })
}

/// `(h0, h2)` with `u = *ψ = h0·ω + h2`, `h2` primitive.
pub fn decompose_n1n1(psi: &FormField, metric: &MatrixField) -> Result<(FormField, FormField)> {
    let grid = psi.grid();
    let n = grid.n();
    if psi.bidegree() != (n - 1, n - 1) {
        return Err(FlowError::Bidegree {
            p1: psi.bidegree().0,
            q1: psi.bidegree().1,
            p2: n - 1,
            q2: n - 1,
        });
    }
    // on (n−1,n−1)-forms ** = 1, so * inverts itself
    let u = psi.star(metric)?;
    let mut h0 = Vec::with_capacity(grid.len());
    let mut h2 = FormField::zeros(grid, 1, 1)?;
    for pt in 0..grid.len() {
        let (a, b) = primitive_split(&u.at(pt), &metric.at(pt))?;
        h0.push(Complex64::new(a, 0.0));
        h2.set(pt, &b)?;
    }
    Ok((FormField::scalar_values(grid, h0)?, h2))
}

/// `h0·ω^{n−1}/(n−1)! − h2∧ω^{n−2}/(n−2)!`.
pub fn recompose(h0: &FormField, h2: &FormField, metric: &MatrixField) -> Result<FormField> {
    let n = metric.grid().n();
    let a = omega_power_field(metric, n - 1)?
        .times_scalar(h0.values())
        .scale_real(1.0 / factorial(n - 1));
    let b = h2
        .wedge(&omega_power_field(metric, n - 2)?)?
        .scale_real(1.0 / factorial(n - 2));
    Ok(&a - &b)
}

fn d_sup(f: &FormField) -> Result<f64> {
    let (a, b) = f.exterior_derivative()?;
    Ok(a.sup_norm().max(b.sup_norm()))
}

/// `□ψ = ∂∂*ψ` with `∂* = −*∂̄*` in the metric field.
pub fn laplacian_direct(psi: &FormField, metric: &MatrixField) -> Result<FormField> {
    let defect = d_sup(psi)?;
    if defect > 1e-8 {
        log::warn!("Laplacian applied to a form that is not closed (|dψ| = {defect:e})");
    }
    psi.codifferential(metric)?.del()
}

/// `−(2i/(n−2)!)∂∂̄h0∧ω^{n−2} + (i/(n−3)!)∂∂̄h2∧ω^{n−3}`, exact for closed
/// `ψ` and Kähler `ω`.
pub fn laplacian_formula(psi: &FormField, metric: &MatrixField) -> Result<FormField> {
    let n = psi.grid().n();
    if n < 3 {
        return Err(FlowError::Invalid("the Laplacian formula needs n >= 3".into()));
    }
    let (h0, h2) = decompose_n1n1(psi, metric)?;
    // written through i∂∂̄: −(2i/(n−2)!)∂∂̄h0 = −(2/(n−2)!)·i∂∂̄h0
    let a = h0
        .i_ddbar()?
        .wedge(&omega_power_field(metric, n - 2)?)?
        .scale_real(-2.0 / factorial(n - 2));
    let b = h2
        .i_ddbar()?
        .wedge(&omega_power_field(metric, n - 3)?)?
        .scale_real(1.0 / factorial(n - 3));
    Ok(&a + &b)
}

/// Adds `s·ψ` to a state (ψ a real (n−1,n−1)-form field).
pub fn perturb(state: &FlowState, psi: &FormField, s: f64, map: &DensityMap) -> Result<FlowState> {
    let n = state.grid().n();
    let dm = psi.to_density(map)?;
    Ok(FlowState {
        t: state.t,
        density: state.density.axpy(s / factorial(n - 1), &dm),
        formulation: state.formulation,
    })
}

/// Richardson-extrapolated central difference of `E` at `state` along `ψ`,
/// over `ε ∈ {1, 1/2, 1/4}·base·‖Φ‖/‖ψ‖` (sup norms).
pub fn fd_linearization(state: &FlowState, psi: &FormField, base: f64) -> Result<FormField> {
    let op = FlowOperator::new(state.grid())?;
    let map = op.density_map().clone();
    let phi = state.density_form(&map)?;
    let psi_sup = psi.sup_norm();
    if psi_sup == 0.0 {
        return FormField::zeros(state.grid(), psi.bidegree().0, psi.bidegree().1);
    }
    let scale = phi.sup_norm() / psi_sup;
    let central = |eps: f64| -> Result<FormField> {
        let plus = op.rhs(&perturb(state, psi, eps, &map)?)?.form;
        let minus = op.rhs(&perturb(state, psi, -eps, &map)?)?.form;
        Ok((&plus - &minus).scale_real(0.5 / eps))
    };
    let eps = base * scale;
    let d1 = central(eps)?;
    let d2 = central(eps / 2.0)?;
    let d3 = central(eps / 4.0)?;
    let r1 = (&d2.scale_real(4.0) - &d1).scale_real(1.0 / 3.0);
    let r2 = (&d3.scale_real(4.0) - &d2).scale_real(1.0 / 3.0);
    Ok((&r2.scale_real(16.0) - &r1).scale_real(1.0 / 15.0))
}

/// Default ε base of the finite-difference sweep.
pub const FD_BASE: f64 = 1e-3;

/// Principal part `−(1/(n−1))·r·□ψ` of the linearization at `state`, with
/// `r = |Ω|_ω̃^{−2}` and `□` taken in `ω̃ = Φ^{1/(n−1)}`. At the flat metric
/// `r = |Ω|_χ = 1`.
pub fn predicted_linearization(state: &FlowState, psi: &FormField) -> Result<FormField> {
    let n = state.grid().n();
    let metric = metric_from_density(state)?;
    let lap = laplacian_direct(psi, &metric.gtilde)?;
    let w: Vec<Complex64> = metric
        .norm_tilde
        .iter()
        .map(|v| Complex64::new(-v.powi(-2) / (n as f64 - 1.0), 0.0))
        .collect();
    Ok(lap.times_scalar(&w))
}

/// `ω̇ = h0/((n−1)(n−1)!)·ω − h2/(n−1)!` and `ṙ = n·h0/((n−1)(n−1)!)·r`
/// with `r = |Ω|_ω^{−2} = det G`.
pub fn variation_formulas(dir: &PerturbationDirection) -> Result<(FormField, Vec<f64>)> {
    let grid = dir.psi.grid();
    let n = grid.n();
    let c = 1.0 / ((n as f64 - 1.0) * factorial(n - 1));
    let omega = dir.metric.to_kahler_form();
    let w: Vec<Complex64> = dir.h0.values().iter().map(|h| h * c).collect();
    let dot = &omega.times_scalar(&w) - &dir.h2.scale_real(1.0 / factorial(n - 1));
    let mut rdot = Vec::with_capacity(grid.len());
    for pt in 0..grid.len() {
        let r = dir.metric.at(pt).determinant().re;
        rdot.push(n as f64 * dir.h0.values()[pt].re * c * r);
    }
    Ok((dot, rdot))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Smallest positive eigenvalue of `−DE(χ^{n−1})` on closed directions.
    pub mu1: f64,
    /// `mu1 / 2`.
    pub decay_bound: f64,
    /// Realizing wave vector, one entry per active coordinate.
    pub mode: Vec<i64>,
    /// Names of the active coordinates the mode refers to.
    pub coords: Vec<String>,
    /// Shape of the realizing direction.
    pub shape: String,
}

/// Largest mode (sup norm) scanned by [`spectral_gap`].
pub const GAP_SCAN: i64 = 2;

/// Real constant (n−2,n−2)-forms spanning the potentials of closed shapes.
fn potential_shapes(n: usize) -> Result<Vec<(String, PointForm)>> {
    let k = n - 2;
    let basis = Basis::new(n, k, k)?;
    let mut out = Vec::new();
    for i in 0..basis.len() {
        let (js, ks) = basis.indices(i);
        let mut f = PointForm::zero(n, k, k)?;
        f.coeffs_mut()[i] = Complex64::new(1.0, 0.0);
        let conj = f.conj();
        let re = &f + &conj;
        let im = &(&f - &conj) * I;
        for (tag, form) in [("re", re), ("im", im)] {
            if form.sup_norm() > 0.0 && !out.iter().any(|(_, g): &(String, PointForm)| {
                (g - &form).sup_norm() < 1e-14 || (g + &form).sup_norm() < 1e-14
            }) {
                out.push((format!("{tag} dz{js:?} dzbar{ks:?}"), form));
            }
        }
    }
    Ok(out)
}

/// Gap of the linearization at the flat metric, from the Rayleigh quotient
/// of `(1/(n−1))□` on explicit closed directions `i∂∂̄(β·w)`, where `w`
/// runs over `cos` and `sin` of each nonzero low mode of the active
/// coordinates and `β` over real constant (n−2,n−2)-forms.
pub fn spectral_gap(grid: &TorusGrid) -> Result<GapReport> {
    let n = grid.n();
    if n < 3 {
        return Err(FlowError::Invalid("the flow needs complex dimension n >= 3".into()));
    }
    let d = grid.active().len();
    if d == 0 {
        return Err(FlowError::Grid("no active coordinate, no nonconstant mode".into()));
    }
    let res = grid.resolution() as i64;
    let top = GAP_SCAN.min(res / 2 - 1);
    let mut modes: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..d {
        modes = modes
            .into_iter()
            .flat_map(|k| {
                (-top..=top).map(move |e| {
                    let mut v = k.clone();
                    v.push(e);
                    v
                })
            })
            .collect();
    }
    modes.retain(|k| k.iter().find(|&&e| e != 0).is_some_and(|&e| e > 0));
    let flat = MatrixField::identity(grid);
    let shapes = potential_shapes(n)?;
    let act = grid.active().to_vec();
    let w0 = 2.0 * std::f64::consts::PI / grid.period();
    let mut best: Option<(f64, Vec<i64>, String)> = None;
    for k in &modes {
        for (trig, phase) in [("cos", 0.0), ("sin", -std::f64::consts::FRAC_PI_2)] {
            let wave = FormField::scalar_fn(grid, |x| {
                let ph: f64 = k.iter().zip(&act).map(|(&e, &c)| e as f64 * x[c]).sum::<f64>() * w0;
                (ph + phase).cos()
            });
            for (name, beta) in &shapes {
                let pot = FormField::constant(grid, beta)?.times_scalar(wave.values());
                let psi = pot.i_ddbar()?;
                let norm2 = l2_inner(&psi, &psi, &flat)?.re;
                if norm2 < 1e-20 {
                    continue;
                }
                let lap = laplacian_direct(&psi, &flat)?;
                let q = l2_inner(&lap, &psi, &flat)?.re / norm2 / (n as f64 - 1.0);
                let better = match &best {
                    None => true,
                    Some((b, _, _)) => q < *b * (1.0 - 1e-12),
                };
                if better {
                    best = Some((q, k.clone(), format!("{trig} {name}")));
                }
            }
        }
    }
    let (mu1, mode, shape) = best.ok_or_else(|| FlowError::Grid("no closed direction found".into()))?;
    Ok(GapReport {
        mu1,
        decay_bound: mu1 / 2.0,
        mode,
        coords: act.iter().map(|&c| crate::torus::coord_name(c)).collect(),
        shape,
    })
}
