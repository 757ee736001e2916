//! The anomaly flow on density matrices: metric recovery, the right-hand
//! side `E`, RK4 time stepping, runs, and initial data.
//!
//! The evolved quantity is the matrix field `S` of `Φ/(n−1)!`, where `Φ` is
//! a positive real (n−1,n−1)-form; the flat metric `χ` has `S = I`.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    density_matrix_of_metric, factorial, metric_power, min_eigenvalue, positive_factor,
    CMatrix, DensityMap, PointForm, StarOperator,
};
use crate::diagnostics::{self, DefectReport, RunRecord, RunRow};
use crate::error::{FlowError, Result};
use crate::torus::{FormField, MatrixField, TorusGrid};

/// Generator pinned for seeded initial data.
pub const RNG_NAME: &str = "rand_chacha 0.3 ChaCha8Rng";

/// Identifies the sign, ordering and normalization conventions baked into
/// stored states: bit `j` of a basis mask is `dz^{j+1}`, bit `n+j` is
/// `dz̄^{j+1}`; `ω = i G_jk dz^j∧dz̄^k`; the state is the matrix of `Φ/(n−1)!`
/// with `H_jk = Φ∧(i dz^k∧dz̄^j)/vol₀`; `|Ω|² = i^{n²}Ω∧Ω̄/(ω^n/n!)`.
pub const CONVENTIONS_ID: &str = "aflow-conventions/1";

/// Which equation is integrated. Both evolve the same density `Φ`; they
/// differ in how the right-hand side is assembled from it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// `∂_t(|Ω|_ω ω^{n−1}) = i∂∂̄ ω^{n−2}`, recovering `ω` from `Φ`.
    Anomaly,
    /// `∂_t ω̃^{n−1} = i∂∂̄(|Ω|_ω̃^{−2} ω̃^{n−2})`.
    #[default]
    Rescaled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    /// Matrix of `Φ/(n−1)!` at each grid point.
    pub density: MatrixField,
    pub formulation: Formulation,
}

impl FlowState {
    pub fn new(density: MatrixField, formulation: Formulation) -> Self {
        Self {
            t: 0.0,
            density,
            formulation,
        }
    }

    /// The stationary state `Φ = χ^{n−1}`.
    pub fn flat(grid: &TorusGrid, formulation: Formulation) -> Self {
        Self::new(MatrixField::identity(grid), formulation)
    }

    pub fn grid(&self) -> &TorusGrid {
        self.density.grid()
    }

    /// The evolved form `Φ` itself.
    pub fn density_form(&self, map: &DensityMap) -> Result<FormField> {
        let n = self.grid().n();
        Ok(self.density.to_form(map)?.scale_real(factorial(n - 1)))
    }
}

/// Metrics recovered from a density field.
#[derive(Clone, Debug)]
pub struct MetricState {
    /// `ω̃` with `ω̃^{n−1} = Φ`.
    pub gtilde: MatrixField,
    /// `ω` with `|Ω|_ω ω^{n−1} = Φ`.
    pub g: MatrixField,
    /// `|Ω|_ω̃`.
    pub norm_tilde: Vec<f64>,
    /// `|Ω|_ω`.
    pub omega_norm: Vec<f64>,
    /// `r = |Ω|_ω^{−2}`.
    pub r: Vec<f64>,
}

pub fn metric_from_density(state: &FlowState) -> Result<MetricState> {
    let grid = state.grid();
    let n = grid.n();
    if n < 3 {
        return Err(FlowError::Invalid("the flow needs complex dimension n >= 3".into()));
    }
    let nf = n as f64;
    let exp = (2.0 * nf - 2.0) / (nf - 2.0);
    let points: Vec<(CMatrix, CMatrix, f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|pt| {
            let h = state.density.at(pt);
            let (chol, det_s) = positive_factor(&h).map_err(|e| at(e, pt))?;
            // G̃ = det(S)^{1/(n−1)} S⁻¹, so det G̃ = det(S)^{1/(n−1)}
            let c = det_s.powf(1.0 / (nf - 1.0));
            let inv = chol.inverse() * Complex64::new(c, 0.0);
            let gt = (&inv + inv.adjoint()) * Complex64::new(0.5, 0.0);
            let nt = 1.0 / c.sqrt();
            let on = nt.powf(exp);
            let g = &gt * Complex64::new(on.powf(-1.0 / (nf - 1.0)), 0.0);
            Ok((gt, g, nt, on))
        })
        .collect::<Result<_>>()?;
    let mut gtilde = MatrixField::zeros(grid);
    let mut g = MatrixField::zeros(grid);
    let mut norm_tilde = Vec::with_capacity(points.len());
    let mut omega_norm = Vec::with_capacity(points.len());
    for (pt, (a, b, nt, on)) in points.into_iter().enumerate() {
        gtilde.set(pt, &a);
        g.set(pt, &b);
        norm_tilde.push(nt);
        omega_norm.push(on);
    }
    let r = omega_norm.iter().map(|v| v.powi(-2)).collect();
    Ok(MetricState {
        gtilde,
        g,
        norm_tilde,
        omega_norm,
        r,
    })
}

fn at(e: FlowError, pt: usize) -> FlowError {
    match e {
        FlowError::NotPositive { eigenvalue, .. } => FlowError::NotPositive {
            point: Some(pt),
            eigenvalue,
        },
        other => other,
    }
}

/// Right-hand side of the flow in both representations.
#[derive(Clone, Debug)]
pub struct Rhs {
    /// `E`, a real d-closed (n−1,n−1)-form field.
    pub form: FormField,
    /// `dS/dt`, the matrix of `E/(n−1)!`.
    pub rate: MatrixField,
}

/// Reusable evaluator for one grid.
#[derive(Clone, Debug)]
pub struct FlowOperator {
    grid: TorusGrid,
    map: DensityMap,
    dealias: bool,
}

impl FlowOperator {
    pub fn new(grid: &TorusGrid) -> Result<Self> {
        if grid.n() < 3 {
            return Err(FlowError::Invalid("the flow needs complex dimension n >= 3".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            map: DensityMap::new(grid.n())?,
            dealias: false,
        })
    }

    pub fn with_dealias(mut self, on: bool) -> Self {
        self.dealias = on;
        self
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn density_map(&self) -> &DensityMap {
        &self.map
    }

    /// The potential `F` with `E = i∂∂̄F`: `ω^{n−2}` or `|Ω|_ω̃^{−2} ω̃^{n−2}`.
    pub fn potential(&self, formulation: Formulation, metric: &MetricState) -> Result<FormField> {
        let n = self.grid.n();
        let points: Vec<PointForm> = (0..self.grid.len())
            .into_par_iter()
            .map(|pt| {
                let (g, w) = match formulation {
                    Formulation::Anomaly => (metric.g.at(pt), 1.0),
                    Formulation::Rescaled => (metric.gtilde.at(pt), metric.norm_tilde[pt].powi(-2)),
                };
                let p = if n == 3 { PointForm::hermitian(&g)? } else { metric_power(&g, n - 2)? };
                Ok(p.scale(Complex64::new(w, 0.0)))
            })
            .collect::<Result<_>>()?;
        let f = FormField::from_points(&self.grid, n - 2, n - 2, &points)?;
        Ok(if self.dealias { f.truncate_two_thirds() } else { f })
    }

    pub fn rhs_with(&self, formulation: Formulation, metric: &MetricState) -> Result<Rhs> {
        let n = self.grid.n();
        let form = self.potential(formulation, metric)?.i_ddbar()?;
        let mut rate = form.to_density(&self.map)?;
        let s = 1.0 / factorial(n - 1);
        let m = n * n;
        for block in rate.data_mut().chunks_mut(m) {
            for r in 0..n {
                for c in r..n {
                    let a = block[r * n + c];
                    let b = block[c * n + r].conj();
                    let h = (a + b) * (0.5 * s);
                    block[r * n + c] = h;
                    block[c * n + r] = h.conj();
                }
            }
        }
        Ok(Rhs { form, rate })
    }

    pub fn rhs(&self, state: &FlowState) -> Result<Rhs> {
        self.rhs_with(state.formulation, &metric_from_density(state)?)
    }

    /// Stability-limited RK4 step: `cfl · 2.785 / λ_max`, where `λ_max`
    /// bounds the stiffest mode of the principal part `−(1/(n−1))·r·□` with
    /// `r = |Ω|_ω̃^{−2}`.
    pub fn cfl_dt(&self, metric: &MetricState, cfl: f64) -> f64 {
        let n = self.grid.n();
        let kmax = self.grid.max_wavenumber();
        let spatial = self.grid.active().len() as f64 * kmax * kmax / 4.0;
        let coeff = (0..self.grid.len())
            .map(|pt| {
                let inv = metric
                    .gtilde
                    .at(pt)
                    .try_inverse()
                    .unwrap_or_else(|| CMatrix::from_element(n, n, Complex64::new(f64::INFINITY, 0.0)));
                let gersh = inv
                    .row_iter()
                    .map(|row| row.iter().map(|v| v.norm()).sum::<f64>())
                    .fold(0.0, f64::max);
                metric.norm_tilde[pt].powi(-2) * gersh
            })
            .fold(0.0, f64::max);
        let lambda = coeff * spatial / (n as f64 - 1.0);
        if lambda > 0.0 {
            cfl * 2.785 / lambda
        } else {
            f64::INFINITY
        }
    }

    /// One classical RK4 step; `k1` may be supplied when already known.
    pub fn step_with(&self, state: &FlowState, dt: f64, k1: Option<&MatrixField>) -> Result<FlowState> {
        let f = state.formulation;
        let k1 = match k1 {
            Some(k) => k.clone(),
            None => self.rhs(state)?.rate,
        };
        let stage = |k: &MatrixField, h: f64| FlowState {
            t: state.t + h,
            density: state.density.axpy(h, k),
            formulation: f,
        };
        let k2 = self.rhs(&stage(&k1, 0.5 * dt))?.rate;
        let k3 = self.rhs(&stage(&k2, 0.5 * dt))?.rate;
        let k4 = self.rhs(&stage(&k3, dt))?.rate;
        let mut density = state.density.clone();
        let w = dt / 6.0;
        for (i, v) in density.data_mut().iter_mut().enumerate() {
            *v += (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i]) * w;
        }
        Ok(FlowState {
            t: state.t + dt,
            density,
            formulation: f,
        })
    }

    pub fn step(&self, state: &FlowState, dt: f64) -> Result<FlowState> {
        self.step_with(state, dt, None)
    }

    /// Fixed-step integration to `t_end` (last step shortened).
    pub fn advance(&self, state: &FlowState, t_end: f64, dt: f64) -> Result<FlowState> {
        let mut s = state.clone();
        let mut k = 0;
        while s.t < t_end - 1e-12 * dt {
            let h = dt.min(t_end - s.t);
            s = self.step(&s, h)?;
            k += 1;
            check_finite(&s, k)?;
        }
        Ok(s)
    }
}

fn check_finite(state: &FlowState, step: usize) -> Result<()> {
    if state.density.data().iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(FlowError::NonFinite { step })
    }
}

/// `E(Φ)` as a form field.
pub fn anomaly_rhs(state: &FlowState) -> Result<FormField> {
    Ok(FlowOperator::new(state.grid())?.rhs(state)?.form)
}

pub fn step(state: &FlowState, dt: f64) -> Result<FlowState> {
    FlowOperator::new(state.grid())?.step(state, dt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub t_max: f64,
    pub cfl: f64,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub stop_energy: f64,
    /// 2/3-rule truncation of the nonlinear potential.
    pub dealias: bool,
    /// Derivative order of the distance norm in diagnostics.
    pub norms_k: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            cfl: 0.25,
            checkpoint_every: 0,
            stop_energy: 1e-10,
            dealias: false,
            norms_k: 4,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(FlowError::Invalid(format!("cfl must lie in (0,1), got {}", self.cfl)));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(FlowError::Invalid(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.stop_energy >= 0.0) {
            return Err(FlowError::Invalid("stop_energy must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    TMax,
    Aborted,
}

/// Hooks called while a run progresses.
pub trait Observer {
    fn sample(&mut self, _row: &RunRow, _state: &FlowState) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _state: &FlowState, _metric: &MetricState, _step: usize) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub abort_reason: Option<String>,
    pub record: RunRecord,
    /// Last valid state.
    pub state: FlowState,
    pub steps: usize,
}

/// Integrates until `t_max` or until the energy drops below `stop_energy`.
///
/// Every step records a diagnostics row for the state at the start of the
/// step. Positivity loss and non-finite values end the run with status
/// `Aborted`; the record up to that point is kept.
pub fn run(config: &FlowConfig, initial: &FlowState, observer: &mut dyn Observer) -> Result<RunOutcome> {
    config.validate()?;
    let op = FlowOperator::new(initial.grid())?.with_dealias(config.dealias);
    let ctx = diagnostics::Context::new(initial.grid(), config.norms_k)?;
    let start = Instant::now();
    let mut state = initial.clone();
    let mut record = RunRecord::default();
    let mut steps = 0usize;
    let mut abort = None;
    let mut reached_stop = false;

    loop {
        let evaluated = metric_from_density(&state)
            .and_then(|m| op.rhs_with(state.formulation, &m).map(|r| (m, r)));
        let (metric, rhs) = match evaluated {
            Ok(v) => v,
            Err(e) => {
                abort = Some(e);
                break;
            }
        };
        let energy = ctx.energy_of(&rhs.form)?;
        let defects: DefectReport = ctx.report(&state, &metric, energy)?;
        let remaining = config.t_max - state.t;
        let done = energy < config.stop_energy || remaining <= 1e-12 * config.t_max;
        let dt = if done { 0.0 } else { op.cfl_dt(&metric, config.cfl).min(remaining) };
        let row = RunRow {
            t: state.t,
            energy,
            defects,
            dt,
            wall_time: start.elapsed().as_secs_f64(),
        };
        observer.sample(&row, &state)?;
        record.rows.push(row);
        if config.checkpoint_every > 0 && steps > 0 && steps.is_multiple_of(config.checkpoint_every) {
            observer.checkpoint(&state, &metric, steps)?;
        }
        if done {
            reached_stop = energy < config.stop_energy;
            break;
        }
        match op.step_with(&state, dt, Some(&rhs.rate)) {
            Ok(next) => {
                steps += 1;
                if let Err(e) = check_finite(&next, steps) {
                    abort = Some(e);
                    break;
                }
                state = next;
            }
            Err(e) => {
                abort = Some(e);
                break;
            }
        }
    }

    record.decay_fit = diagnostics::decay_fit(&record, 0.5, config.stop_energy).ok();
    let status = if abort.is_some() {
        RunStatus::Aborted
    } else if reached_stop && diagnostics::certify_convergence(&record, config.stop_energy) {
        RunStatus::Converged
    } else {
        RunStatus::TMax
    };
    Ok(RunOutcome {
        status,
        abort_reason: abort.map(|e| e.to_string()),
        record,
        state,
        steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `Φ₀ = η^{n−1}` with `η = χ + i∂∂̄f` Kähler; the anomaly metric
    /// recovered from it is `|Ω|_η^{−2/(n−2)} η`, conformal to `η`.
    Conformal,
    /// `Φ₀ = (χ + i∂∂̄f + H)^{n−1}` with constant Hermitian `H`.
    Balanced,
    /// `Φ₀ = χ^{n−1} + s·*u` for a non-closed real (1,1)-form `u`.
    Generic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub family: Family,
    /// Sup norm of the generator (`μ` or `u`) after normalization.
    pub amplitude: f64,
    pub seed: u64,
    #[serde(default = "default_max_mode")]
    pub max_mode: usize,
}

fn default_max_mode() -> usize {
    2
}

/// Random real band-limited function of the active coordinates with
/// nonzero integer modes of sup norm at most `max_mode`.
pub fn random_scalar(grid: &TorusGrid, max_mode: usize, rng: &mut ChaCha8Rng) -> FormField {
    let d = grid.active().len();
    let m = max_mode as i64;
    let mut modes: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..d {
        modes = modes
            .into_iter()
            .flat_map(|k| {
                (-m..=m).map(move |e| {
                    let mut v = k.clone();
                    v.push(e);
                    v
                })
            })
            .collect();
    }
    // one representative of each ±k pair
    modes.retain(|k| k.iter().find(|&&e| e != 0).is_some_and(|&e| e > 0));
    let terms: Vec<(Vec<i64>, f64, f64)> = modes
        .into_iter()
        .map(|k| (k, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let act = grid.active().to_vec();
    let w = 2.0 * std::f64::consts::PI / grid.period();
    FormField::scalar_fn(grid, |x| {
        terms
            .iter()
            .map(|(k, a, b)| {
                let ph: f64 = k.iter().zip(&act).map(|(&e, &c)| e as f64 * x[c]).sum::<f64>() * w;
                a * ph.cos() + b * ph.sin()
            })
            .sum()
    })
}

fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let mut h = CMatrix::zeros(n, n);
    for r in 0..n {
        h[(r, r)] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
        for c in r + 1..n {
            let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            h[(r, c)] = v;
            h[(c, r)] = v.conj();
        }
    }
    h
}

/// Matrix field of the (1,1)-form `i∂∂̄f`.
pub fn hessian_field(f: &FormField) -> Result<MatrixField> {
    let form = f.i_ddbar()?;
    let grid = f.grid();
    let mut out = MatrixField::zeros(grid);
    for pt in 0..grid.len() {
        out.set(pt, &form.at(pt).to_hermitian()?);
    }
    Ok(out)
}

/// Density field `adj(I + M)` of `(χ + μ)^{n−1}/(n−1)!`.
pub fn power_density(mu: &MatrixField) -> Result<MatrixField> {
    let grid = mu.grid();
    let n = grid.n();
    let id = CMatrix::identity(n, n);
    let mut out = MatrixField::zeros(grid);
    for pt in 0..grid.len() {
        let g = &id + mu.at(pt);
        out.set(pt, &density_matrix_of_metric(&g).map_err(|e| at(e, pt))?);
    }
    Ok(out)
}

pub fn make_initial_data(grid: &TorusGrid, spec: &PerturbationSpec, formulation: Formulation) -> Result<FlowState> {
    let n = grid.n();
    if n < 3 {
        return Err(FlowError::Invalid("the flow needs complex dimension n >= 3".into()));
    }
    if !(spec.amplitude >= 0.0) || !spec.amplitude.is_finite() {
        return Err(FlowError::Invalid(format!("amplitude must be >= 0, got {}", spec.amplitude)));
    }
    if 2 * spec.max_mode >= grid.resolution() {
        return Err(FlowError::Grid(format!(
            "max_mode {} not resolved at resolution {}",
            spec.max_mode,
            grid.resolution()
        )));
    }
    if spec.amplitude == 0.0 {
        return Ok(FlowState::flat(grid, formulation));
    }
    if grid.active().is_empty() && spec.family != Family::Balanced {
        return Err(FlowError::Grid("random perturbations need an active coordinate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let density = match spec.family {
        Family::Conformal | Family::Balanced => {
            let mut mu = if grid.active().is_empty() {
                MatrixField::zeros(grid)
            } else {
                let f = random_scalar(grid, spec.max_mode, &mut rng);
                let h = hessian_field(&f)?;
                h.scale(1.0 / h.sup_norm())
            };
            if spec.family == Family::Balanced {
                let c = random_hermitian(n, &mut rng);
                let c = &c / Complex64::new(c.iter().map(|v| v.norm()).fold(0.0, f64::max), 0.0);
                mu = mu.axpy(1.0, &MatrixField::constant(grid, &c)?);
            }
            power_density(&mu.scale(spec.amplitude / mu.sup_norm()))?
        }
        Family::Generic => {
            let mut u = MatrixField::zeros(grid);
            let fields: Vec<FormField> = (0..n * n)
                .map(|_| random_scalar(grid, spec.max_mode, &mut rng))
                .collect();
            for pt in 0..grid.len() {
                let m = CMatrix::from_fn(n, n, |r, c| {
                    let a = fields[r * n + c].values()[pt].re;
                    match r.cmp(&c) {
                        std::cmp::Ordering::Equal => Complex64::new(a, 0.0),
                        std::cmp::Ordering::Less => Complex64::new(a, fields[c * n + r].values()[pt].re),
                        std::cmp::Ordering::Greater => Complex64::new(
                            fields[c * n + r].values()[pt].re,
                            -fields[r * n + c].values()[pt].re,
                        ),
                    }
                });
                u.set(pt, &m);
            }
            let u = u.scale(1.0 / u.sup_norm());
            let star = StarOperator::new(&CMatrix::identity(n, n), 1, 1)?;
            let map = DensityMap::new(n)?;
            let scale = spec.amplitude / factorial(n - 1);
            let mut out = MatrixField::identity(grid);
            for pt in 0..grid.len() {
                let su = star.apply(&PointForm::hermitian(&u.at(pt))?)?;
                let m = map.matrix_of(&su)? * Complex64::new(scale, 0.0);
                out.set(pt, &(CMatrix::identity(n, n) + m));
            }
            out
        }
    };
    let margin = density.min_eigenvalue();
    if !(margin > 0.0) {
        return Err(FlowError::NotPositive {
            point: None,
            eigenvalue: margin,
        });
    }
    Ok(FlowState::new(density, formulation))
}

/// Smallest eigenvalue of the state over the grid.
pub fn positivity_margin(state: &FlowState) -> f64 {
    (0..state.grid().len())
        .map(|pt| min_eigenvalue(&state.density.at(pt)))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TorusGrid {
        TorusGrid::new(3, 8, &[0, 1]).unwrap()
    }

    #[test]
    fn flat_state_recovers_flat_metric() {
        let s = FlowState::flat(&grid(), Formulation::Rescaled);
        let m = metric_from_density(&s).unwrap();
        assert!(m.g.max_abs_diff(&MatrixField::identity(&grid())) < 1e-14);
        assert!(m.omega_norm.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn flat_state_is_stationary() {
        for f in [Formulation::Anomaly, Formulation::Rescaled] {
            let s = FlowState::flat(&grid(), f);
            let e = anomaly_rhs(&s).unwrap();
            assert!(e.sup_norm() < 1e-14);
            let next = step(&s, 1e-3).unwrap();
            assert!(next.density.max_abs_diff(&s.density) < 1e-14);
        }
    }

    #[test]
    fn non_positive_state_is_rejected_with_point() {
        let g = grid();
        let mut d = MatrixField::identity(&g);
        d.set(5, &(CMatrix::identity(3, 3) * Complex64::new(-1.0, 0.0)));
        let err = metric_from_density(&FlowState::new(d, Formulation::Anomaly)).unwrap_err();
        assert!(matches!(err, FlowError::NotPositive { point: Some(5), .. }));
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::default().validate().is_ok());
        let bad = FlowConfig {
            cfl: 1.5,
            ..FlowConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_amplitude_is_flat() {
        for family in [Family::Conformal, Family::Balanced, Family::Generic] {
            let spec = PerturbationSpec {
                family,
                amplitude: 0.0,
                seed: 1,
                max_mode: 2,
            };
            let s = make_initial_data(&grid(), &spec, Formulation::Rescaled).unwrap();
            assert_eq!(s.density, MatrixField::identity(&grid()));
        }
    }

    #[test]
    fn oversized_perturbation_is_rejected() {
        let spec = PerturbationSpec {
            family: Family::Generic,
            amplitude: 50.0,
            seed: 3,
            max_mode: 2,
        };
        assert!(matches!(
            make_initial_data(&grid(), &spec, Formulation::Rescaled),
            Err(FlowError::NotPositive { .. })
        ));
    }
}
