//! Ito integration of the QND measurement dynamics, the noise-assisted
//! closed loop and the static output (Markovian) feedback baseline.
//!
//! The measurement part is integrated with Euler-Maruyama; the control part
//! is an exact unitary conjugation by `exp(-i H dv)` with `dv = sigma dB`.
//! Every step ends with [`project_to_physical`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{
    c, commutator, dissipator_hermitian, innovation_hermitian, populations_unchecked,
    project_to_physical, spectral_decomposition, trace_product, CMatrix, DensityMatrix,
    HermitianOperator, PopulationVector, SpectralDecomposition, UnitaryPropagator,
    DEFAULT_DEGENERACY_TOL, I,
};

#[derive(Debug, Clone)]
pub struct MeasurementSetup {
    l: HermitianOperator,
    l_sq: CMatrix,
    eta: f64,
    dec: SpectralDecomposition,
}

impl MeasurementSetup {
    pub fn new(l: HermitianOperator, eta: f64) -> Result<Self> {
        Self::with_tolerance(l, eta, DEFAULT_DEGENERACY_TOL)
    }

    pub fn with_tolerance(l: HermitianOperator, eta: f64, degeneracy_tolerance: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter {
                field: "eta",
                reason: format!("{eta} not in [0, 1]"),
            });
        }
        let dec = spectral_decomposition(&l, degeneracy_tolerance)?;
        let l_sq = l.matrix() * l.matrix();
        Ok(Self { l, l_sq, eta, dec })
    }

    pub fn l(&self) -> &HermitianOperator {
        &self.l
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.dec
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.dec.eigenvalues()
    }

    pub fn populations(&self, rho: &DensityMatrix) -> PopulationVector {
        populations_unchecked(rho.matrix(), &self.dec)
    }

    /// `tr(L rho)`.
    pub fn expectation(&self, rho: &CMatrix) -> f64 {
        trace_product(self.l.matrix(), rho).re
    }

    /// `D_L(rho) dt + sqrt(eta) M_L(rho) dw`.
    pub(crate) fn measurement_increment(&self, rho: &CMatrix, dt: f64, dw: f64) -> CMatrix {
        let l = self.l.matrix();
        let mut inc = dissipator_hermitian(l, &self.l_sq, rho) * c(dt);
        if self.eta > 0.0 && dw != 0.0 {
            inc += innovation_hermitian(l, rho) * c(self.eta.sqrt() * dw);
        }
        inc
    }

    /// Measurement record increment `2 sqrt(eta) tr(L rho) dt + dW`.
    pub fn record_increment(&self, rho: &CMatrix, dt: f64, dw: f64) -> f64 {
        2.0 * self.eta.sqrt() * self.expectation(rho) * dt + dw
    }
}

/// Saturation `phi` of the feedback gain law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Saturation {
    /// `min(1, max(0, s))`.
    #[default]
    PiecewiseLinear,
    /// `3s^2 - 2s^3` on `[0, 1]`, continuously differentiable.
    Smoothstep,
}

impl Saturation {
    pub fn apply(self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match self {
            Saturation::PiecewiseLinear => s,
            Saturation::Smoothstep => s * s * (3.0 - 2.0 * s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlSetup {
    h: HermitianOperator,
    h_sq: CMatrix,
    propagator: UnitaryPropagator,
    sigma_bar: f64,
    p_min: f64,
    p_max: f64,
    target: usize,
    saturation: Saturation,
}

impl ControlSetup {
    /// `target` is a zero-based eigenspace index. `sigma_bar = 0` is allowed
    /// and disables the feedback.
    pub fn new(
        h: HermitianOperator,
        sigma_bar: f64,
        p_min: f64,
        p_max: f64,
        target: usize,
        saturation: Saturation,
    ) -> Result<Self> {
        if !(sigma_bar >= 0.0) || !sigma_bar.is_finite() {
            return Err(Error::InvalidParameter {
                field: "sigma_bar",
                reason: format!("{sigma_bar} must be a finite nonnegative number"),
            });
        }
        if !(p_min > 0.5) {
            return Err(Error::InvalidParameter {
                field: "p_min",
                reason: format!("{p_min} must exceed 1/2"),
            });
        }
        if !(p_max > p_min) || !(p_max < 1.0) {
            return Err(Error::InvalidParameter {
                field: "p_max",
                reason: format!("{p_max} must satisfy p_min < p_max < 1"),
            });
        }
        let h_sq = h.matrix() * h.matrix();
        let propagator = UnitaryPropagator::new(&h);
        Ok(Self {
            h,
            h_sq,
            propagator,
            sigma_bar,
            p_min,
            p_max,
            target,
            saturation,
        })
    }

    pub fn with_sigma_bar(&self, sigma_bar: f64) -> Result<Self> {
        Self::new(
            self.h.clone(),
            sigma_bar,
            self.p_min,
            self.p_max,
            self.target,
            self.saturation,
        )
    }

    pub fn h(&self) -> &HermitianOperator {
        &self.h
    }

    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn saturation(&self) -> Saturation {
        self.saturation
    }

    pub fn propagator(&self) -> &UnitaryPropagator {
        &self.propagator
    }

    pub(crate) fn dissipator_h(&self, rho: &CMatrix) -> CMatrix {
        dissipator_hermitian(self.h.matrix(), &self.h_sq, rho)
    }

    fn check(&self, meas: &MeasurementSetup) -> Result<()> {
        if self.h.dim() != meas.dim() {
            return Err(Error::DimensionMismatch {
                expected: meas.dim(),
                found: self.h.dim(),
            });
        }
        if self.target >= meas.decomposition().len() {
            return Err(Error::InvalidParameter {
                field: "target",
                reason: format!(
                    "index {} out of range for {} eigenspaces",
                    self.target,
                    meas.decomposition().len()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInput {
    pub dt: f64,
    pub dw: f64,
    pub db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub rho_next: DensityMatrix,
    pub dy: f64,
    pub dv: f64,
    pub sigma_used: f64,
}

fn check_step(rho: &DensityMatrix, meas: &MeasurementSetup, step: &StepInput) -> Result<()> {
    if rho.dim() != meas.dim() {
        return Err(Error::DimensionMismatch {
            expected: meas.dim(),
            found: rho.dim(),
        });
    }
    if !(step.dt > 0.0) {
        return Err(Error::InvalidParameter {
            field: "dt",
            reason: format!("{} must be positive", step.dt),
        });
    }
    Ok(())
}

pub fn open_loop_step(rho: &DensityMatrix, meas: &MeasurementSetup, step: StepInput) -> Result<StepOutput> {
    check_step(rho, meas, &step)?;
    let m = rho.matrix();
    let next = m + meas.measurement_increment(m, step.dt, step.dw);
    Ok(StepOutput {
        rho_next: project_to_physical(&next)?,
        dy: meas.record_increment(m, step.dt, step.dw),
        dv: 0.0,
        sigma_used: 0.0,
    })
}

/// `sigma_bar * phi((max_{k != target} p_k - p_min) / (p_max - p_min))`.
pub fn feedback_gain(p: &PopulationVector, ctrl: &ControlSetup) -> f64 {
    let worst = p
        .values()
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != ctrl.target)
        .map(|(_, &v)| v)
        .fold(0.0_f64, f64::max);
    let s = (worst - ctrl.p_min) / (ctrl.p_max - ctrl.p_min);
    ctrl.sigma_bar * ctrl.saturation.apply(s)
}

/// Closed-loop step with the gain evaluated on the pre-step true state.
pub fn closed_loop_step(
    rho: &DensityMatrix,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    step: StepInput,
) -> Result<StepOutput> {
    ctrl.check(meas)?;
    let sigma = feedback_gain(&meas.populations(rho), ctrl);
    closed_loop_step_with_gain(rho, meas, ctrl, sigma, step)
}

/// Closed-loop step driven by an externally supplied gain (estimator output,
/// possibly delayed).
pub fn closed_loop_step_with_gain(
    rho: &DensityMatrix,
    meas: &MeasurementSetup,
    ctrl: &ControlSetup,
    sigma: f64,
    step: StepInput,
) -> Result<StepOutput> {
    check_step(rho, meas, &step)?;
    let m = rho.matrix();
    let dv = sigma * step.db;
    let next = m + meas.measurement_increment(m, step.dt, step.dw);
    let rotated = ctrl.propagator.conjugate(dv, &next);
    Ok(StepOutput {
        rho_next: project_to_physical(&rotated)?,
        dy: meas.record_increment(m, step.dt, step.dw),
        dv,
        sigma_used: sigma,
    })
}

/// Drift and diffusion coefficients of the static output feedback
/// `dv = f dt + s dY`.
pub fn markovian_feedback_terms(
    rho: &DensityMatrix,
    meas: &MeasurementSetup,
    h: &HermitianOperator,
    f: f64,
    s: f64,
) -> Result<(CMatrix, CMatrix)> {
    if h.dim() != meas.dim() || rho.dim() != meas.dim() {
        return Err(Error::DimensionMismatch {
            expected: meas.dim(),
            found: if h.dim() != meas.dim() { h.dim() } else { rho.dim() },
        });
    }
    let m = rho.matrix();
    let hm = h.matrix();
    let l = meas.l().matrix();
    let sqrt_eta = meas.eta().sqrt();
    let h_sq = hm * hm;
    let l_rho = l * m + m * l;
    let drift = (commutator(hm, m) * c(f) + commutator(hm, &l_rho) * c(sqrt_eta * s)) * (-I)
        + dissipator_hermitian(l, &meas.l_sq, m)
        + dissipator_hermitian(hm, &h_sq, m) * c(s * s);
    let diffusion = innovation_hermitian(l, m) * c(sqrt_eta) - commutator(hm, m) * (I * s);
    Ok((drift, diffusion))
}

pub fn markovian_feedback_step(
    rho: &DensityMatrix,
    meas: &MeasurementSetup,
    h: &HermitianOperator,
    f: f64,
    s: f64,
    step: StepInput,
) -> Result<StepOutput> {
    check_step(rho, meas, &step)?;
    let (drift, diffusion) = markovian_feedback_terms(rho, meas, h, f, s)?;
    let m = rho.matrix();
    let next = m + drift * c(step.dt) + diffusion * c(step.dw);
    let dy = meas.record_increment(m, step.dt, step.dw);
    Ok(StepOutput {
        rho_next: project_to_physical(&next)?,
        dy,
        dv: f * step.dt + s * dy,
        sigma_used: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::testing::{random_hermitian, random_state};
    use crate::quantum::trace;
    use crate::spin::SpinModel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn preset(p_min: f64) -> (MeasurementSetup, ControlSetup) {
        SpinModel::new(4).unwrap().preset(p_min).unwrap()
    }

    #[test]
    fn eigenstates_are_fixed_points_of_open_loop() {
        let (meas, _) = preset(0.9);
        for k in 0..5 {
            let rho = DensityMatrix::basis(5, k);
            let out = open_loop_step(&rho, &meas, StepInput { dt: 1e-3, dw: 0.37, db: 0.0 }).unwrap();
            assert_eq!(out.rho_next.matrix(), rho.matrix());
            assert_eq!(out.dv, 0.0);
            let lambda = meas.eigenvalues()[k];
            assert!((out.dy - (2.0 * 0.8_f64.sqrt() * lambda * 1e-3 + 0.37)).abs() < 1e-15);
        }
    }

    #[test]
    fn diagonal_state_without_efficiency_is_unchanged() {
        let l = HermitianOperator::from_real_diagonal(&[2.0, 1.0, 0.0]);
        let meas = MeasurementSetup::new(l, 0.0).unwrap();
        let rho = DensityMatrix::from_diagonal(&[0.5, 0.3, 0.2]).unwrap();
        let out = open_loop_step(&rho, &meas, StepInput { dt: 1e-3, dw: 0.1, db: 0.0 }).unwrap();
        assert!(max_abs(&(out.rho_next.matrix() - rho.matrix())) < 1e-15);
    }

    #[test]
    fn gain_law_examples() {
        let (_, ctrl) = preset(0.9);
        let pops = |worst: f64| {
            let rest = (1.0 - worst) / 4.0;
            PopulationVector::new(vec![worst, rest, rest, rest, rest]).unwrap()
        };
        assert_eq!(feedback_gain(&pops(0.85), &ctrl), 0.0);
        let ctrl95 = ControlSetup::new(ctrl.h().clone(), 2.0, 0.9, 0.95, 2, Saturation::PiecewiseLinear).unwrap();
        assert_eq!(feedback_gain(&pops(0.97), &ctrl95), 2.0);
        assert!((feedback_gain(&pops(0.925), &ctrl95) - 1.0).abs() < 1e-12);
        let smooth = ControlSetup::new(ctrl.h().clone(), 2.0, 0.9, 0.95, 2, Saturation::Smoothstep).unwrap();
        assert!((feedback_gain(&pops(0.925), &smooth) - 1.0).abs() < 1e-12);
        assert_eq!(feedback_gain(&pops(0.99), &smooth), 2.0);
        // the target population never triggers the gain
        let at_target = PopulationVector::new(vec![0.0, 0.0, 0.99, 0.01, 0.0]).unwrap();
        assert_eq!(feedback_gain(&at_target, &ctrl95), 0.0);
    }

    #[test]
    fn gain_parameters_validated() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 0.0]);
        let sat = Saturation::PiecewiseLinear;
        assert!(ControlSetup::new(h.clone(), 1.0, 0.4, 0.6, 0, sat).is_err());
        assert!(ControlSetup::new(h.clone(), 1.0, 0.8, 0.8, 0, sat).is_err());
        assert!(ControlSetup::new(h.clone(), 1.0, 0.8, 1.0, 0, sat).is_err());
        assert!(ControlSetup::new(h.clone(), -1.0, 0.8, 0.9, 0, sat).is_err());
        assert!(ControlSetup::new(h, 0.0, 0.8, 0.9, 0, sat).is_ok());
    }

    #[test]
    fn zero_gain_matches_open_loop() {
        let (meas, ctrl) = preset(0.9);
        let ctrl = ctrl.with_sigma_bar(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_state(&mut rng, 5);
        let step = StepInput { dt: 1e-3, dw: 0.02, db: -0.05 };
        let a = closed_loop_step(&rho, &meas, &ctrl, step).unwrap();
        let b = open_loop_step(&rho, &meas, step).unwrap();
        assert_eq!(a.rho_next, b.rho_next);
        assert_eq!(a.dy, b.dy);
        assert_eq!(a.dv, 0.0);
    }

    #[test]
    fn target_is_closed_loop_equilibrium() {
        let (meas, ctrl) = preset(0.9);
        let rho = DensityMatrix::basis(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = rho.clone();
        for _ in 0..1000 {
            let step = StepInput {
                dt: 1e-3,
                dw: 0.0316 * rng.sample::<f64, _>(StandardNormal),
                db: 0.0316 * rng.sample::<f64, _>(StandardNormal),
            };
            let out = closed_loop_step(&state, &meas, &ctrl, step).unwrap();
            assert_eq!(out.sigma_used, 0.0);
            state = out.rho_next;
        }
        assert_eq!(state, rho);
    }

    #[test]
    fn wrong_eigenstate_gets_full_gain() {
        let (meas, ctrl) = preset(0.9);
        let rho = DensityMatrix::basis(5, 0);
        let out = closed_loop_step(&rho, &meas, &ctrl, StepInput { dt: 1e-3, dw: 0.0, db: 0.03 }).unwrap();
        assert_eq!(out.sigma_used, 2.0);
        assert!((out.dv - 0.06).abs() < 1e-15);
        assert!(out.rho_next.matrix()[(1, 1)].re > 0.0);
    }

    #[test]
    fn markovian_baseline_terms() {
        let (meas, ctrl) = preset(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_state(&mut rng, 5);
        let step = StepInput { dt: 1e-3, dw: 0.013, db: 0.0 };
        let a = markovian_feedback_step(&rho, &meas, ctrl.h(), 0.0, 0.0, step).unwrap();
        let b = open_loop_step(&rho, &meas, step).unwrap();
        assert!(max_abs(&(a.rho_next.matrix() - b.rho_next.matrix())) < 1e-15);

        // eigenstates are not equilibria: at Pi_k the drift is
        // s^2 D_H(Pi_k) - 2 i s sqrt(eta) lambda_k [H, Pi_k]
        let s = 0.7;
        for k in 0..5 {
            let pk = DensityMatrix::basis(5, k);
            let (drift, diffusion) = markovian_feedback_terms(&pk, &meas, ctrl.h(), 0.0, s).unwrap();
            let lambda = meas.eigenvalues()[k];
            let expected = ctrl.dissipator_h(pk.matrix()) * c(s * s)
                - commutator(ctrl.h().matrix(), pk.matrix()) * (I * (2.0 * s * 0.8f64.sqrt() * lambda));
            assert!(max_abs(&(&drift - &expected)) < 1e-12);
            assert!(max_abs(&drift) > 0.1);
            assert!(max_abs(&diffusion) > 0.1);
        }
        let zero_eig = DensityMatrix::basis(5, 2);
        let (drift, _) = markovian_feedback_terms(&zero_eig, &meas, ctrl.h(), 0.0, s).unwrap();
        assert!(max_abs(&(drift - ctrl.dissipator_h(zero_eig.matrix()) * c(s * s))) < 1e-12);

        for _ in 0..20 {
            let rho = random_state(&mut rng, 5);
            let h = random_hermitian(&mut rng, 5);
            let (drift, diffusion) = markovian_feedback_terms(&rho, &meas, &h, 0.3, -1.1).unwrap();
            assert!(trace(&drift).norm() < 1e-10);
            assert!(trace(&diffusion).norm() < 1e-10);
        }
    }

    #[test]
    fn open_loop_populations_are_martingales() {
        let (meas, _) = preset(0.9);
        let dt: f64 = 1e-3;
        let trajectories = 400;
        let steps = 10_000;
        let mut finals = vec![Vec::new(); 5];
        for t in 0..trajectories {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
            let mut rho = DensityMatrix::maximally_mixed(5);
            for _ in 0..steps {
                let dw = dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
                rho = open_loop_step(&rho, &meas, StepInput { dt, dw, db: 0.0 }).unwrap().rho_next;
            }
            for (k, p) in meas.populations(&rho).values().iter().enumerate() {
                finals[k].push(*p);
            }
        }
        for samples in finals {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((mean - 0.2).abs() <= 3.0 * (var / n).sqrt(), "mean {mean}");
        }
    }

    /// Finite-difference generator oracle: for `V(rho) = tr(O rho)` the mean
    /// increment per unit time equals `tr(O (D_L + sigma^2 D_H)(rho))`.
    #[test]
    fn closed_loop_drift_matches_generator() {
        let (meas, ctrl) = preset(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let observable = random_hermitian(&mut rng, 5);
        // a state with sigma = sigma_bar
        let rho = project_to_physical(
            &(DensityMatrix::basis(5, 0).matrix() * c(0.97) + random_state(&mut rng, 5).matrix() * c(0.03)),
        )
        .unwrap();
        let sigma = feedback_gain(&meas.populations(&rho), &ctrl);
        assert_eq!(sigma, 2.0);
        let drift = dissipator_hermitian(meas.l().matrix(), &meas.l_sq, rho.matrix())
            + ctrl.dissipator_h(rho.matrix()) * c(sigma * sigma);
        let expected = trace_product(observable.matrix(), &drift).re;

        let dt: f64 = 1e-4;
        let v0 = trace_product(observable.matrix(), rho.matrix()).re;
        let samples = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let dw = dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let db = dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let out = closed_loop_step(&rho, &meas, &ctrl, StepInput { dt, dw, db }).unwrap();
            let rate = (trace_product(observable.matrix(), out.rho_next.matrix()).re - v0) / dt;
            sum += rate;
            sum_sq += rate * rate;
        }
        let n = samples as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
        assert!((mean - expected).abs() <= 3.0 * se, "mean {mean} expected {expected} se {se}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn steps_stay_physical(seed in any::<u64>(), dw in -0.2f64..0.2, db in -0.2f64..0.2) {
            let (meas, ctrl) = preset(0.6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_state(&mut rng, 5);
            let out = closed_loop_step(&rho, &meas, &ctrl, StepInput { dt: 1e-3, dw, db }).unwrap();
            prop_assert!(out.rho_next.validate().is_ok());
        }

        #[test]
        fn gain_ignores_relabeling_of_other_indices(seed in any::<u64>()) {
            let (meas, ctrl) = preset(0.6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = meas.populations(&random_state(&mut rng, 5));
            let mut swapped = p.values().to_vec();
            swapped.swap(0, 4);
            swapped.swap(1, 3);
            let q = PopulationVector::new(swapped).unwrap();
            prop_assert_eq!(feedback_gain(&p, &ctrl), feedback_gain(&q, &ctrl));
        }
    }
}
