//! Defect norms, flow energy and exponential decay fits.
//!
//! All L² norms are taken against the flat reference metric.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{factorial, DensityMap};
use crate::error::{FlowError, Result};
use crate::flow::{metric_from_density, FlowOperator, FlowState, Formulation, MetricState};
use crate::torus::{l2_norm, FormField, MatrixField, TorusGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    /// `‖dΦ‖`.
    pub balanced: f64,
    /// `‖i∂∂̄ω^{n−2}‖`.
    pub astheno: f64,
    /// `‖dω‖`.
    pub kahler: f64,
    /// `‖i∂∂̄ log det G‖`.
    pub ricci: f64,
    /// Smallest eigenvalue of the state matrix over the grid.
    pub positivity_margin: f64,
    /// `C^k` distance of `Φ` from `χ^{n−1}`.
    pub dist_ck: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: f64,
    pub energy: f64,
    pub defects: DefectReport,
    pub dt: f64,
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Positive for decay.
    pub rate: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Time interval covered by the fit.
    pub window: (f64, f64),
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    pub decay_fit: Option<DecayFit>,
}

impl RunRecord {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy).collect()
    }
}

/// Cached objects for repeated diagnostics on one grid.
#[derive(Clone, Debug)]
pub struct Context {
    grid: TorusGrid,
    flat: MatrixField,
    map: DensityMap,
    op: FlowOperator,
    k: usize,
}

impl Context {
    pub fn new(grid: &TorusGrid, k: usize) -> Result<Self> {
        if k > grid.resolution() / 4 {
            return Err(FlowError::Resolution {
                k,
                resolution: grid.resolution(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            flat: MatrixField::identity(grid),
            map: DensityMap::new(grid.n())?,
            op: FlowOperator::new(grid)?,
            k,
        })
    }

    pub fn flat_norm(&self, f: &FormField) -> Result<f64> {
        l2_norm(f, &self.flat)
    }

    fn d_norm(&self, f: &FormField) -> Result<f64> {
        let (a, b) = f.exterior_derivative()?;
        Ok(self.flat_norm(&a)?.hypot(self.flat_norm(&b)?))
    }

    pub fn energy_of(&self, e: &FormField) -> Result<f64> {
        self.flat_norm(e)
    }

    pub fn energy(&self, state: &FlowState) -> Result<f64> {
        self.energy_of(&self.op.rhs(state)?.form)
    }

    /// Full report given the recovered metric and the energy.
    pub fn report(&self, state: &FlowState, metric: &MetricState, energy: f64) -> Result<DefectReport> {
        let n = self.grid.n();
        let phi = state.density_form(&self.map)?;
        let balanced = self.d_norm(&phi)?;
        let omega = metric.g.to_kahler_form();
        let kahler = self.d_norm(&omega)?;
        let logdet: Vec<Complex64> = (0..self.grid.len())
            .map(|pt| Complex64::new(-2.0 * metric.omega_norm[pt].ln(), 0.0))
            .collect();
        let ricci = self.flat_norm(&FormField::scalar_values(&self.grid, logdet)?.i_ddbar()?)?;
        let flat_phi = MatrixField::identity(&self.grid)
            .to_form(&self.map)?
            .scale_real(factorial(n - 1));
        let dist_ck = (&phi - &flat_phi).ck_norm(self.k)?;
        Ok(DefectReport {
            balanced,
            astheno: energy,
            kahler,
            ricci,
            positivity_margin: state.density.min_eigenvalue(),
            dist_ck,
        })
    }

    pub fn defect_report(&self, state: &FlowState) -> Result<DefectReport> {
        let metric = metric_from_density(state)?;
        let e = self.op.rhs_with(state.formulation, &metric)?.form;
        // the astheno defect uses the anomaly metric regardless of formulation
        let astheno = if state.formulation == Formulation::Anomaly {
            self.energy_of(&e)?
        } else {
            self.energy_of(&self.op.rhs_with(Formulation::Anomaly, &metric)?.form)?
        };
        self.report(state, &metric, astheno)
    }
}

pub fn defect_report(state: &FlowState, k: usize) -> Result<DefectReport> {
    Context::new(state.grid(), k)?.defect_report(state)
}

/// `‖E(Φ)‖` against the flat reference metric.
pub fn energy(state: &FlowState) -> Result<f64> {
    Context::new(state.grid(), 0)?.energy(state)
}

/// Least-squares fit `log e ≈ intercept − rate·t`.
pub fn fit_exponential(ts: &[f64], es: &[f64]) -> Result<DecayFit> {
    if ts.len() != es.len() || ts.len() < 2 {
        return Err(FlowError::Invalid("need at least two samples".into()));
    }
    if es.iter().any(|&e| !(e > 0.0)) {
        return Err(FlowError::Invalid("non-positive energy in fit window".into()));
    }
    let m = ts.len() as f64;
    let ys: Vec<f64> = es.iter().map(|e| e.ln()).collect();
    let tb = ts.iter().sum::<f64>() / m;
    let yb = ys.iter().sum::<f64>() / m;
    let sxx: f64 = ts.iter().map(|t| (t - tb).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tb) * (y - yb)).sum();
    let syy: f64 = ys.iter().map(|y| (y - yb).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(FlowError::Invalid("degenerate time window".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(DecayFit {
        rate: -slope,
        intercept: yb - slope * tb,
        r2,
        window: (ts[0], ts[ts.len() - 1]),
        samples: ts.len(),
    })
}

/// Decay fit over the trailing `window` fraction (by time) of the samples
/// recorded before the energy first fell below `stop_energy`.
///
/// Samples with energy at or below `1e-14` are dropped from the end of the
/// window; at least 20 samples must remain.
pub fn decay_fit(record: &RunRecord, window: f64, stop_energy: f64) -> Result<DecayFit> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(FlowError::Invalid(format!("window fraction {window} outside (0,1]")));
    }
    let end = record
        .rows
        .iter()
        .position(|r| r.energy < stop_energy)
        .unwrap_or(record.rows.len());
    let rows = &record.rows[..end];
    if rows.is_empty() {
        return Err(FlowError::Invalid("no samples above the stop threshold".into()));
    }
    let (t0, t1) = (rows[0].t, rows[rows.len() - 1].t);
    let cut = t1 - window * (t1 - t0);
    let mut sel: Vec<&RunRow> = rows.iter().filter(|r| r.t >= cut).collect();
    while sel.last().is_some_and(|r| r.energy <= 1e-14) {
        sel.pop();
    }
    if sel.len() < 20 {
        return Err(FlowError::Invalid(format!(
            "decay fit needs at least 20 samples, window has {}",
            sel.len()
        )));
    }
    let ts: Vec<f64> = sel.iter().map(|r| r.t).collect();
    let es: Vec<f64> = sel.iter().map(|r| r.energy).collect();
    fit_exponential(&ts, &es)
}

/// A run has converged when its energy went below `stop_energy` and the
/// last decade of decay is exponential with `R² ≥ 0.99`. A run that starts
/// below the threshold is stationary and counts as converged.
pub fn certify_convergence(record: &RunRecord, stop_energy: f64) -> bool {
    let Some(last) = record.rows.last() else {
        return false;
    };
    if last.energy >= stop_energy {
        return false;
    }
    if record.rows[0].energy < stop_energy {
        return true;
    }
    let start = record
        .rows
        .iter()
        .rposition(|r| r.energy >= 10.0 * stop_energy)
        .unwrap_or(0);
    let seg = &record.rows[start..];
    if seg.len() < 3 {
        return false;
    }
    let ts: Vec<f64> = seg.iter().map(|r| r.t).collect();
    let es: Vec<f64> = seg.iter().map(|r| r.energy).collect();
    fit_exponential(&ts, &es).is_ok_and(|f| f.rate > 0.0 && f.r2 >= 0.99)
}
