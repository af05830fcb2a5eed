//! Lyapunov functions for the open and closed loop, the weight systems that
//! build the closed-loop function, the closed-form Markov generator, and
//! sampling-based certification of exponential decay.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::dynamics::{closed_loop_step, feedback_gain, open_loop_step, ControlSetup, MeasurementSetup, StepInput};
use crate::error::{Error, Result};
use crate::filters::{graph_connected, laplacian_matrix, LaplacianMatrix, DEFAULT_CONNECTIVITY_TOL};
use crate::quantum::{
    c, commutator, trace, trace_product, CMatrix, DensityMatrix, PopulationVector, I,
};
use crate::rng::{stream_rng, Stream, WienerIncrements};

/// Minimum `1 - p_target` at which the generator is evaluated.
pub const TARGET_EXCLUSION: f64 = 1e-6;
/// A certificate requires the sampled rate to exceed this.
pub const CERTIFY_TOL: f64 = 1e-9;
/// Trace-distance radius of the near-vertex sampling stratum.
pub const NEAR_VERTEX_RADIUS: f64 = 0.05;

/// `V_o = sum_{k<k'} sqrt(p_k p_k')`.
pub fn v_open(p: &PopulationVector) -> f64 {
    let xi: Vec<f64> = p.values().iter().map(|v| v.sqrt()).collect();
    let mut total = 0.0;
    for (k, a) in xi.iter().enumerate() {
        for b in &xi[k + 1..] {
            total += a * b;
        }
    }
    total
}

/// `(eta / 2) min_{k != k'} (lambda_k - lambda_k')^2`.
pub fn open_loop_rate(meas: &MeasurementSetup) -> Result<f64> {
    let lambdas = meas.eigenvalues();
    if lambdas.len() < 2 {
        return Err(Error::NoContraction);
    }
    let mut gap = f64::INFINITY;
    for (k, a) in lambdas.iter().enumerate() {
        for b in &lambdas[k + 1..] {
            gap = gap.min((a - b).powi(2));
        }
    }
    Ok(0.5 * meas.eta() * gap)
}

/// Weights `alpha_{s,k}` and right-hand sides `beta_{s,k}`; row `r` belongs to
/// the `r`-th non-target index `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaWeights {
    target: usize,
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
}

impl AlphaWeights {
    pub fn target(&self) -> usize {
        self.target
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn dim(&self) -> usize {
        self.alpha.ncols()
    }

    /// Non-target indices in row order.
    pub fn rows(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&k| k != self.target).collect()
    }

    /// Largest `|Delta alpha_s + beta_s|` over all rows.
    pub fn residual(&self, delta: &LaplacianMatrix) -> f64 {
        let mut worst = 0.0_f64;
        for r in 0..self.alpha.nrows() {
            let row: Vec<f64> = self.alpha.row(r).iter().copied().collect();
            for (k, v) in delta.apply(&row).into_iter().enumerate() {
                worst = worst.max((v + self.beta[(r, k)]).abs());
            }
        }
        worst
    }

    /// `(c_lower, c_upper)` with `c_lower V <= sqrt(1 - p_target) <= c_upper V`.
    pub fn equivalence_constants(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for r in 0..self.alpha.nrows() {
            for k in self.rows() {
                lo = lo.min(self.alpha[(r, k)]);
                hi = hi.max(self.alpha[(r, k)]);
            }
        }
        let scale = (self.dim() - 1) as f64;
        (1.0 / (scale * hi.sqrt()), 1.0 / (scale * lo.sqrt()))
    }
}

/// `beta_{s,k} = 1 + delta_{s,k} / 2` for `k != target` and
/// `beta_{s,target} = -(d - 1/2)`.
pub fn default_beta(d: usize, target: usize) -> DMatrix<f64> {
    let rows: Vec<usize> = (0..d).filter(|&k| k != target).collect();
    DMatrix::from_fn(rows.len(), d, |r, k| {
        if k == target {
            -((d - 1) as f64 + 0.5)
        } else if k == rows[r] {
            1.5
        } else {
            1.0
        }
    })
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > top * 1e-10).count()
}

/// Solve `sum_k' Delta_{k,k'} alpha_{s,k'} = -beta_{s,k}` with
/// `alpha_{s,target} = 0` through the grounded Laplacian.
pub fn solve_alpha(delta: &LaplacianMatrix, target: usize, beta: &DMatrix<f64>) -> Result<AlphaWeights> {
    let d = delta.dim();
    if d < 2 || target >= d {
        return Err(Error::InvalidParameter {
            field: "target",
            reason: format!("index {target} invalid for dimension {d}"),
        });
    }
    if beta.nrows() != d - 1 || beta.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d - 1,
            found: beta.nrows(),
        });
    }
    for r in 0..d - 1 {
        let mut sum = 0.0;
        for k in (0..d).filter(|&k| k != target) {
            if !(beta[(r, k)] > 0.0) {
                return Err(Error::InvalidParameter {
                    field: "beta",
                    reason: format!("beta[{r}][{k}] must be positive"),
                });
            }
            sum += beta[(r, k)];
        }
        if (beta[(r, target)] + sum).abs() > 1e-12 * sum.max(1.0) {
            return Err(Error::InvalidParameter {
                field: "beta",
                reason: format!("row {r} does not sum to zero"),
            });
        }
    }
    if numerical_rank(beta) < d - 1 {
        return Err(Error::InvalidParameter {
            field: "beta",
            reason: "rank below d - 1".into(),
        });
    }
    if !graph_connected(delta, DEFAULT_CONNECTIVITY_TOL) {
        return Err(Error::CertificationImpossible);
    }

    let keep: Vec<usize> = (0..d).filter(|&k| k != target).collect();
    let grounded = DMatrix::from_fn(d - 1, d - 1, |i, j| -delta.get(keep[i], keep[j]));
    let sv = grounded.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < 1e12) {
        return Err(Error::SingularSystem { condition });
    }
    let lu = grounded.lu();
    let mut alpha = DMatrix::zeros(d - 1, d);
    for r in 0..d - 1 {
        let rhs = DVector::from_iterator(d - 1, keep.iter().map(|&k| beta[(r, k)]));
        let sol = lu.solve(&rhs).ok_or(Error::SingularSystem { condition })?;
        for (i, &k) in keep.iter().enumerate() {
            alpha[(r, k)] = sol[i];
        }
    }
    let weights = AlphaWeights {
        target,
        alpha,
        beta: beta.clone(),
    };
    let residual = weights.residual(delta);
    if residual > 1e-8 || keep.iter().any(|&k| (0..d - 1).any(|r| !(weights.alpha[(r, k)] > 0.0))) {
        return Err(Error::SingularSystem { condition });
    }
    Ok(weights)
}

/// `V_alpha = sum_s sqrt(sum_k alpha_{s,k} p_k)`.
pub fn v_alpha(p: &PopulationVector, w: &AlphaWeights) -> f64 {
    (0..w.alpha.nrows())
        .map(|r| {
            let s: f64 = p.values().iter().enumerate().map(|(k, pk)| w.alpha[(r, k)] * pk).sum();
            s.max(0.0).sqrt()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTerms {
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub sigma: f64,
    /// `(sigma^2 / 2) f - (eta / 2) g - (sigma^2 / 8) h`.
    pub av: f64,
}

/// Closed-form Markov generator of `V_alpha` with the gain evaluated on `rho`.
pub fn generator_terms(
    rho: &DensityMatrix,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    w: &AlphaWeights,
) -> Result<GeneratorTerms> {
    let sigma = feedback_gain(&meas.populations(rho), ctrl);
    generator_terms_with_gain(rho, meas, ctrl, w, sigma)
}

pub fn generator_terms_with_gain(
    rho: &DensityMatrix,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    w: &AlphaWeights,
    sigma: f64,
) -> Result<GeneratorTerms> {
    let dec = meas.decomposition();
    if rho.dim() != meas.dim() || w.dim() != dec.len() {
        return Err(Error::DimensionMismatch {
            expected: meas.dim(),
            found: rho.dim(),
        });
    }
    let p = meas.populations(rho);
    let gap = 1.0 - p.get(w.target);
    if gap < TARGET_EXCLUSION {
        return Err(Error::EvaluatedAtTarget { gap });
    }
    let m = rho.matrix();
    let hm = ctrl.h().matrix();
    let d_h = ctrl.dissipator_h(m);
    let transfer: Vec<f64> = dec.projectors().iter().map(|pk| trace_product(pk, &d_h).re).collect();
    let rotation: Vec<f64> = dec
        .projectors()
        .iter()
        .map(|pk| trace_product(&(commutator(pk, hm) * I), m).re)
        .collect();
    let mean = meas.expectation(m);
    let lambdas = meas.eigenvalues();

    let (mut f, mut g, mut h) = (0.0, 0.0, 0.0);
    for r in 0..w.alpha.nrows() {
        let a = |k: usize| w.alpha[(r, k)];
        let weight: f64 = (0..p.len()).map(|k| a(k) * p.get(k)).sum();
        let drift: f64 = (0..p.len()).map(|k| a(k) * transfer[k]).sum();
        let spread: f64 = (0..p.len()).map(|k| a(k) * (lambdas[k] - mean) * p.get(k)).sum();
        let rot: f64 = (0..p.len()).map(|k| a(k) * rotation[k]).sum();
        let root = weight.sqrt();
        f += drift / root;
        g += (spread / weight).powi(2) * root;
        h += rot * rot / (weight * root);
    }
    let s2 = sigma * sigma;
    Ok(GeneratorTerms {
        f,
        g,
        h,
        sigma,
        av: 0.5 * s2 * f - 0.5 * meas.eta() * g - 0.125 * s2 * h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stratum {
    NearWrongVertex,
    Bulk,
    Diagonal,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::NearWrongVertex, Stratum::Bulk, Stratum::Diagonal];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::NearWrongVertex => "near_wrong_vertex",
            Stratum::Bulk => "bulk",
            Stratum::Diagonal => "diagonal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumSummary {
    pub stratum: Stratum,
    pub samples: usize,
    /// Minimum of `-AV / V_alpha` over the stratum.
    pub min_ratio: f64,
    pub worst_populations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub strata: Vec<StratumSummary>,
    pub nu_hat: f64,
    pub worst_populations: Vec<f64>,
    pub certified: bool,
    pub c_lower: f64,
    pub c_upper: f64,
}

/// Hilbert-Schmidt random state `G G^dag / tr(G G^dag)`, `G` complex Ginibre.
pub fn random_hs_state<R: Rng>(rng: &mut R, n: usize) -> DensityMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| {
        num_complex::Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let m = &g * g.adjoint();
    let tr = trace(&m).re;
    DensityMatrix::new(m * c(1.0 / tr)).expect("Ginibre state is valid")
}

fn random_simplex<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid shape");
    let draws: Vec<f64> = (0..d).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

fn sample_state(
    meas: &MeasurementSetup,
    target: usize,
    stratum: Stratum,
    slot: usize,
    seed: u64,
    index: u64,
) -> DensityMatrix {
    let dec = meas.decomposition();
    let d = dec.len();
    let n = meas.dim();
    let wrong: Vec<usize> = (0..d).filter(|&k| k != target).collect();
    let mut rng = stream_rng(seed, index, Stream::Sampling);
    loop {
        let rho = match stratum {
            Stratum::NearWrongVertex => {
                let j = wrong[slot % wrong.len()];
                let vertex = dec.eigenspace_state(j);
                if slot < wrong.len() {
                    vertex
                } else {
                    let eps = NEAR_VERTEX_RADIUS * rng.gen::<f64>();
                    let tau = random_hs_state(&mut rng, n);
                    let m = vertex.matrix() * c(1.0 - eps) + tau.matrix() * c(eps);
                    DensityMatrix::new(m).expect("convex combination is valid")
                }
            }
            Stratum::Bulk => random_hs_state(&mut rng, n),
            Stratum::Diagonal => {
                let p = PopulationVector::normalized(random_simplex(&mut rng, d)).expect("simplex");
                dec.state_from_populations(&p).expect("diagonal state is valid")
            }
        };
        if 1.0 - meas.populations(&rho).get(target) >= TARGET_EXCLUSION {
            return rho;
        }
    }
}

/// Evaluate `-AV / V_alpha` over stratified samples of the state space.
pub fn certify_decay(
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    w: &AlphaWeights,
    samples: usize,
    seed: u64,
) -> Result<CertificateReport> {
    let delta = laplacian_matrix(ctrl.h(), meas.decomposition())?;
    if !graph_connected(&delta, DEFAULT_CONNECTIVITY_TOL) {
        return Err(Error::CertificationImpossible);
    }
    if w.target != ctrl.target() {
        return Err(Error::InvalidParameter {
            field: "target",
            reason: "weights and control target differ".into(),
        });
    }
    let per = samples / 3;
    let counts = [per, samples - 2 * per, per];
    let mut strata = Vec::with_capacity(3);
    let mut offset = 0u64;
    for (stratum, &count) in Stratum::ALL.iter().zip(&counts) {
        let base = offset;
        let ratios: Vec<(f64, Vec<f64>)> = (0..count)
            .into_par_iter()
            .map(|slot| {
                let rho = sample_state(meas, w.target, *stratum, slot, seed, base + slot as u64);
                let p = meas.populations(&rho);
                let terms = generator_terms(&rho, meas, ctrl, w)?;
                Ok((-terms.av / v_alpha(&p, w), p.values().to_vec()))
            })
            .collect::<Result<_>>()?;
        offset += count as u64;
        let (min_ratio, worst) = ratios
            .into_iter()
            .fold((f64::INFINITY, Vec::new()), |acc, (r, p)| if r < acc.0 { (r, p) } else { acc });
        strata.push(StratumSummary {
            stratum: *stratum,
            samples: count,
            min_ratio,
            worst_populations: worst,
        });
    }
    let worst = strata
        .iter()
        .filter(|s| s.samples > 0)
        .min_by(|a, b| a.min_ratio.total_cmp(&b.min_ratio))
        .cloned();
    let (nu_hat, worst_populations) = worst.map_or((f64::INFINITY, Vec::new()), |s| (s.min_ratio, s.worst_populations));
    let (c_lower, c_upper) = w.equivalence_constants();
    Ok(CertificateReport {
        strata,
        nu_hat,
        worst_populations,
        certified: nu_hat > CERTIFY_TOL,
        c_lower,
        c_upper,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftCheck {
    pub index: usize,
    /// Mean over trajectories of `xi(T) - xi(0) - int drift dt`.
    pub mean_residual: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDecayCheck {
    pub pair: (usize, usize),
    pub mean_product: f64,
    pub predicted: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiDriftReport {
    pub drift: Vec<DriftCheck>,
    pub pairs: Vec<PairDecayCheck>,
}

impl XiDriftReport {
    /// All checks within `z` standard errors.
    pub fn passes(&self, z: f64) -> bool {
        let tol = |se: f64| z * se + 1e-12;
        self.drift.iter().all(|c| c.mean_residual.abs() <= tol(c.standard_error))
            && self
                .pairs
                .iter()
                .all(|c| (c.mean_product - c.predicted).abs() <= tol(c.standard_error))
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Finite-difference estimate of the generator `AV_alpha(rho)`: the sample
/// mean of `(V_alpha(rho_dt) - V_alpha(rho)) / dt` over independent one-step
/// closed-loop increments from `rho`, with its standard error.
pub fn generator_monte_carlo(
    rho: &DensityMatrix,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    w: &AlphaWeights,
    samples: usize,
    dt: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let v0 = v_alpha(&meas.populations(rho), w);
    let mut noise_w = WienerIncrements::new(seed, 0, Stream::Measurement, dt);
    let mut noise_b = WienerIncrements::new(seed, 0, Stream::Actuation, dt);
    let rates = (0..samples)
        .map(|_| {
            let step = StepInput {
                dt,
                dw: noise_w.next_increment(),
                db: noise_b.next_increment(),
            };
            let out = closed_loop_step(rho, meas, ctrl, step)?;
            Ok((v_alpha(&meas.populations(&out.rho_next), w) - v0) / dt)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&rates))
}

/// Check the open-loop drift of `xi_k = sqrt(p_k)` and the exact decay of
/// `E[xi_k xi_k']` along simulated trajectories.
pub fn xi_dynamics_check(
    meas: &MeasurementSetup,
    rho0: &DensityMatrix,
    trajectories: usize,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<XiDriftReport> {
    let d = meas.eigenvalues().len();
    let steps = (t_end / dt).round() as usize;
    let eta = meas.eta();
    let lambdas = meas.eigenvalues().to_vec();
    let xi0: Vec<f64> = meas.populations(rho0).values().iter().map(|p| p.sqrt()).collect();

    let per_traj: Vec<(Vec<f64>, Vec<f64>)> = (0..trajectories as u64)
        .into_par_iter()
        .map(|index| {
            let mut noise = WienerIncrements::new(seed, index, Stream::Measurement, dt);
            let mut rho = rho0.clone();
            let mut residual = vec![0.0; d];
            let mut xi = xi0.clone();
            for _ in 0..steps {
                let p = meas.populations(&rho);
                let mean = p.mean_eigenvalue(&lambdas);
                let out = open_loop_step(&rho, meas, StepInput { dt, dw: noise.next_increment(), db: 0.0 })?;
                let next: Vec<f64> = meas.populations(&out.rho_next).values().iter().map(|v| v.sqrt()).collect();
                for k in 0..d {
                    let drift = -0.5 * eta * (lambdas[k] - mean).powi(2) * xi[k];
                    residual[k] += next[k] - xi[k] - drift * dt;
                }
                xi = next;
                rho = out.rho_next;
            }
            Ok((residual, xi))
        })
        .collect::<Result<_>>()?;

    let drift = (0..d)
        .map(|k| {
            let xs: Vec<f64> = per_traj.iter().map(|(r, _)| r[k]).collect();
            let (mean_residual, standard_error) = mean_and_se(&xs);
            DriftCheck {
                index: k,
                mean_residual,
                standard_error,
            }
        })
        .collect();
    let t = steps as f64 * dt;
    let mut pairs = Vec::new();
    for k in 0..d {
        for j in k + 1..d {
            let xs: Vec<f64> = per_traj.iter().map(|(_, xi)| xi[k] * xi[j]).collect();
            let (mean_product, standard_error) = mean_and_se(&xs);
            let rate = 0.5 * eta * (lambdas[k] - lambdas[j]).powi(2);
            pairs.push(PairDecayCheck {
                pair: (k, j),
                mean_product,
                predicted: xi0[k] * xi0[j] * (-rate * t).exp(),
                standard_error,
            });
        }
    }
    Ok(XiDriftReport { drift, pairs })
}
