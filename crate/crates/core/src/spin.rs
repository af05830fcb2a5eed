//! Spin-J measurement and actuator operators.
//!
//! Basis ordering is `|J>, |J-1>, ..., |-J>`: index `m` holds `|J-m>`.

use num_complex::Complex64;

use crate::dynamics::{ControlSetup, MeasurementSetup, Saturation};
use crate::error::{Error, Result};
use crate::quantum::{CMatrix, HermitianOperator};

pub const PRESET_ETA: f64 = 0.8;
pub const PRESET_TWO_J: u32 = 4;
pub const PRESET_P_GAP: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct SpinModel {
    two_j: u32,
    l: HermitianOperator,
    h: HermitianOperator,
}

impl SpinModel {
    /// Model with spin `J = two_j / 2`.
    pub fn new(two_j: u32) -> Result<Self> {
        if two_j == 0 {
            return Err(Error::InvalidParameter {
                field: "J",
                reason: "J must be positive".into(),
            });
        }
        let n = two_j as usize + 1;
        let j = f64::from(two_j) / 2.0;
        let l = HermitianOperator::from_real_diagonal(
            &(0..n).map(|m| j - m as f64).collect::<Vec<_>>(),
        );
        // H[m][m+1] = -c_m / (2i) = i c_m / 2, H[m+1][m] = c_m / (2i) = -i c_m / 2
        let mut h = CMatrix::zeros(n, n);
        for m in 0..n - 1 {
            let cm = (((m + 1) * (two_j as usize - m)) as f64).sqrt();
            h[(m, m + 1)] = Complex64::new(0.0, cm / 2.0);
            h[(m + 1, m)] = Complex64::new(0.0, -cm / 2.0);
        }
        Ok(Self {
            two_j,
            l,
            h: HermitianOperator::new(h)?,
        })
    }

    /// Accepts integer or half-integer `J > 0`.
    pub fn from_j(j: f64) -> Result<Self> {
        let twice = 2.0 * j;
        if !(j > 0.0) || (twice - twice.round()).abs() > 1e-12 || twice > f64::from(u16::MAX) {
            return Err(Error::InvalidParameter {
                field: "J",
                reason: format!("{j} is not a positive integer or half-integer"),
            });
        }
        Self::new(twice.round() as u32)
    }

    pub fn j(&self) -> f64 {
        f64::from(self.two_j) / 2.0
    }

    pub fn two_j(&self) -> u32 {
        self.two_j
    }

    pub fn dim(&self) -> usize {
        self.two_j as usize + 1
    }

    pub fn l(&self) -> &HermitianOperator {
        &self.l
    }

    pub fn h(&self) -> &HermitianOperator {
        &self.h
    }

    /// Index of the eigenvalue closest to zero (`|0>` for integer `J`).
    pub fn default_target(&self) -> usize {
        (self.two_j / 2) as usize
    }

    /// Simulation preset: `eta = 0.8`, `sigma_bar = sqrt(5 eta)`,
    /// `p_max = p_min + 0.05`, piecewise-linear saturation.
    pub fn preset(&self, p_min: f64) -> Result<(MeasurementSetup, ControlSetup)> {
        let meas = MeasurementSetup::new(self.l.clone(), PRESET_ETA)?;
        let ctrl = ControlSetup::new(
            self.h.clone(),
            (5.0 * PRESET_ETA).sqrt(),
            p_min,
            p_min + PRESET_P_GAP,
            self.default_target(),
            Saturation::PiecewiseLinear,
        )?;
        Ok((meas, ctrl))
    }
}

/// The `J = 2` preset used in all simulation campaigns.
pub fn spin_two_preset(p_min: f64) -> Result<(MeasurementSetup, ControlSetup)> {
    SpinModel::new(PRESET_TWO_J)?.preset(p_min)
}
