//! State estimators driven by the measurement record: the full quantum
//! observer, the reduced filter that ignores the actuation noise, and the
//! `d`-dimensional population filter built on the actuation Laplacian.

use nalgebra::DMatrix;

use crate::dynamics::{feedback_gain, ControlSetup, MeasurementSetup};
use crate::error::{Error, Result};
use crate::quantum::{
    c, project_to_physical, trace_product, CMatrix, DensityMatrix, HermitianOperator,
    PopulationVector, SpectralDecomposition,
};

pub const DEFAULT_CONNECTIVITY_TOL: f64 = 1e-10;

/// Population-transfer rates `Delta_{k,k'} = tr(Pi_k D_H(Pi_k'))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    entries: DMatrix<f64>,
}

impl LaplacianMatrix {
    /// Validates symmetry, nonnegative off-diagonals and zero row sums.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let d = entries.nrows();
        if entries.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: entries.ncols(),
            });
        }
        for i in 0..d {
            let row_sum: f64 = entries.row(i).iter().sum();
            if row_sum.abs() > 1e-10 {
                return Err(Error::InvalidParameter {
                    field: "laplacian",
                    reason: format!("row {i} sums to {row_sum:e}"),
                });
            }
            for j in 0..d {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidParameter {
                        field: "laplacian",
                        reason: format!("asymmetric at ({i}, {j})"),
                    });
                }
                if i != j && entries[(i, j)] < -1e-12 {
                    return Err(Error::InvalidParameter {
                        field: "laplacian",
                        reason: format!("negative off-diagonal at ({i}, {j})"),
                    });
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `(Delta p)_k`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|k| (0..d).map(|j| self.entries[(k, j)] * p[j]).sum())
            .collect()
    }
}

pub fn laplacian_matrix(h: &HermitianOperator, dec: &SpectralDecomposition) -> Result<LaplacianMatrix> {
    if h.dim() != dec.dim() {
        return Err(Error::DimensionMismatch {
            expected: dec.dim(),
            found: h.dim(),
        });
    }
    let hm = h.matrix();
    let sandwiched: Vec<CMatrix> = dec.projectors().iter().map(|p| hm * p * hm).collect();
    let d = dec.len();
    let mut entries = DMatrix::zeros(d, d);
    for k in 0..d {
        for j in (k + 1)..d {
            // tr(Pi_k H Pi_j H), symmetric by cyclicity
            let a = trace_product(&dec.projectors()[k], &sandwiched[j]).re;
            let b = trace_product(&dec.projectors()[j], &sandwiched[k]).re;
            let v = (0.5 * (a + b)).max(0.0);
            entries[(k, j)] = v;
            entries[(j, k)] = v;
        }
    }
    for k in 0..d {
        let off: f64 = (0..d).filter(|&j| j != k).map(|j| entries[(k, j)]).sum();
        entries[(k, k)] = -off;
    }
    Ok(LaplacianMatrix { entries })
}

/// Connectivity of the graph with edges where `Delta_{k,k'} > tolerance`.
pub fn graph_connected(delta: &LaplacianMatrix, tolerance: f64) -> bool {
    let d = delta.dim();
    if d <= 1 {
        return true;
    }
    let mut seen = vec![false; d];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(k) = stack.pop() {
        for j in 0..d {
            if !seen[j] && j != k && delta.get(k, j) > tolerance {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn innovation(meas: &MeasurementSetup, rho: &CMatrix, dy: f64, dt: f64) -> f64 {
    dy - 2.0 * meas.eta().sqrt() * meas.expectation(rho) * dt
}

/// Full observer; the gain is evaluated on the estimate.
pub fn full_observer_step(
    rho_hat: &DensityMatrix,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    dy: f64,
    db: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    let sigma = feedback_gain(&meas.populations(rho_hat), ctrl);
    full_observer_step_with_gain(rho_hat, meas, ctrl, sigma, dy, db, dt)
}

/// Observer update with the applied gain. The actuation term uses the same
/// exact rotation `exp(-i H sigma dB)` as the plant, so an observer started
/// on the true state reproduces it.
pub fn full_observer_step_with_gain(
    rho_hat: &DensityMatrix,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    sigma: f64,
    dy: f64,
    db: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    let m = rho_hat.matrix();
    let dw_hat = innovation(meas, m, dy, dt);
    let next = m + meas.measurement_increment(m, dt, dw_hat);
    project_to_physical(&ctrl.propagator().conjugate(sigma * db, &next))
}

/// Reduced filter without knowledge of the actuation noise.
pub fn reduced_filter_step(
    rho_hat: &DensityMatrix,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    dy: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    let sigma = feedback_gain(&meas.populations(rho_hat), ctrl);
    reduced_filter_step_with_gain(rho_hat, meas, ctrl, sigma, dy, dt)
}

pub fn reduced_filter_step_with_gain(
    rho_hat: &DensityMatrix,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    sigma: f64,
    dy: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    let m = rho_hat.matrix();
    let dw_hat = innovation(meas, m, dy, dt);
    let mut next = m + meas.measurement_increment(m, dt, dw_hat);
    if sigma != 0.0 {
        next += ctrl.dissipator_h(m) * c(sigma * sigma * dt);
    }
    project_to_physical(&next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFilterState {
    pub p_hat: PopulationVector,
}

impl PopulationFilterState {
    pub fn new(p_hat: PopulationVector) -> Self {
        Self { p_hat }
    }
}

/// Raw Euler increment of the population filter, before the simplex
/// safeguard.
pub fn population_filter_increment(
    p_hat: &PopulationVector,
    meas: &MeasurementSetup,
    delta: &LaplacianMatrix,
    sigma: f64,
    dy: f64,
    dt: f64,
) -> Vec<f64> {
    let lambdas = meas.eigenvalues();
    let p = p_hat.values();
    let sqrt_eta = meas.eta().sqrt();
    let mean = p_hat.mean_eigenvalue(lambdas);
    let dw_hat = dy - 2.0 * sqrt_eta * mean * dt;
    let transfer = delta.apply(p);
    p.iter()
        .zip(lambdas)
        .zip(&transfer)
        .map(|((&pk, &lk), &tk)| 2.0 * sqrt_eta * pk * (lk - mean) * dw_hat + sigma * sigma * tk * dt)
        .collect()
}

pub fn population_filter_step(
    state: &PopulationFilterState,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    delta: &LaplacianMatrix,
    dy: f64,
    dt: f64,
) -> Result<PopulationFilterState> {
    let sigma = feedback_gain(&state.p_hat, ctrl);
    population_filter_step_with_gain(state, meas, delta, sigma, dy, dt)
}

pub fn population_filter_step_with_gain(
    state: &PopulationFilterState,
    meas: &MeasurementSetup,
    delta: &LaplacianMatrix,
    sigma: f64,
    dy: f64,
    dt: f64,
) -> Result<PopulationFilterState> {
    if state.p_hat.len() != delta.dim() || delta.dim() != meas.eigenvalues().len() {
        return Err(Error::DimensionMismatch {
            expected: meas.eigenvalues().len(),
            found: state.p_hat.len(),
        });
    }
    let inc = population_filter_increment(&state.p_hat, meas, delta, sigma, dy, dt);
    let next: Vec<f64> = state.p_hat.values().iter().zip(inc).map(|(p, d)| p + d).collect();
    Ok(PopulationFilterState {
        p_hat: PopulationVector::normalized(next)?,
    })
}
