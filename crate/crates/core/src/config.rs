//! TOML campaign configuration.
//!
//! Only `model` and `p_min` (plus `J` for spin models) are required; the
//! remaining keys default to the spin-2 preset. Unknown keys are rejected.
//!
//! ```toml
//! model = "spin"
//! J = 2
//! p_min = 0.9
//! estimator = "population_filter"   # truth | full_observer | reduced_filter | population_filter
//! trajectories = 1000
//! t_final = 100.0
//! dt = 1e-3
//! feedback_delay = 0.0
//! seed = 0
//! fit_window = [5.0, 60.0]
//! ```

use serde::Deserialize;

use crate::dynamics::Saturation;
use crate::ensemble::{CampaignConfig, EstimatorSource, InitialState, ModelSpec};
use crate::error::{Error, Result};
use crate::spin::{SpinModel, PRESET_ETA, PRESET_P_GAP};

/// Thresholds at or above this get the slow-campaign defaults
/// (`t_final = 100`, window `[5, 60]`); below it `t_final = 50`, `[5, 25]`.
pub const SLOW_CAMPAIGN_P_MIN: f64 = 0.75;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: String,
    #[serde(rename = "J")]
    j: Option<f64>,
    p_min: f64,
    p_max: Option<f64>,
    eta: Option<f64>,
    sigma_bar: Option<f64>,
    target: Option<usize>,
    saturation: Option<Saturation>,
    estimator: Option<EstimatorSource>,
    initial_eigenspace: Option<usize>,
    trajectories: Option<usize>,
    t_final: Option<f64>,
    dt: Option<f64>,
    record_stride: Option<usize>,
    feedback_delay: Option<f64>,
    seed: Option<u64>,
    fit_window: Option<[f64; 2]>,
    l_eigenvalues: Option<Vec<f64>>,
    h_re: Option<Vec<Vec<f64>>>,
    h_im: Option<Vec<Vec<f64>>>,
}

fn field_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<CampaignConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let field = message
            .strip_prefix("unknown field `")
            .and_then(|rest| rest.split('`').next())
            .unwrap_or("document")
            .to_string();
        Error::Config { field, message }
    })?;

    let (model, default_target) = match raw.model.as_str() {
        "spin" => {
            let j = raw.j.ok_or_else(|| field_error("J", "required for model = \"spin\""))?;
            let spin = SpinModel::from_j(j).map_err(|e| field_error("J", e.to_string()))?;
            if raw.l_eigenvalues.is_some() || raw.h_re.is_some() || raw.h_im.is_some() {
                return Err(field_error("l_eigenvalues", "only valid for model = \"custom\""));
            }
            (ModelSpec::Spin { two_j: spin.two_j() }, Some(spin.default_target()))
        }
        "custom" => {
            let l = raw
                .l_eigenvalues
                .ok_or_else(|| field_error("l_eigenvalues", "required for model = \"custom\""))?;
            let n = l.len();
            let h_re = raw.h_re.ok_or_else(|| field_error("h_re", "required for model = \"custom\""))?;
            let h_im = raw.h_im.unwrap_or_else(|| vec![vec![0.0; n]; n]);
            (ModelSpec::Custom { l_diagonal: l, h_re, h_im }, None)
        }
        other => return Err(field_error("model", format!("unknown model {other:?}; expected \"spin\" or \"custom\""))),
    };

    let p_min = raw.p_min;
    if !(p_min > 0.5 && p_min < 1.0) {
        return Err(field_error("p_min", format!("{p_min} must satisfy 1/2 < p_min < 1")));
    }
    let p_max = raw.p_max.unwrap_or(p_min + PRESET_P_GAP);
    if !(p_max > p_min && p_max < 1.0) {
        return Err(field_error("p_max", format!("{p_max} must satisfy p_min < p_max < 1")));
    }
    let eta = raw.eta.unwrap_or(PRESET_ETA);
    let target = raw
        .target
        .or(default_target)
        .ok_or_else(|| field_error("target", "required for model = \"custom\""))?;

    let slow = p_min >= SLOW_CAMPAIGN_P_MIN;
    let t_final = raw.t_final.unwrap_or(if slow { 100.0 } else { 50.0 });
    let fit_window = match raw.fit_window {
        Some([a, b]) => (a, b),
        None if slow => (0.05 * t_final, 0.6 * t_final),
        None => (0.1 * t_final, 0.5 * t_final),
    };

    let base = CampaignConfig::spin_preset(p_min);
    let cfg = CampaignConfig {
        model,
        eta,
        sigma_bar: raw.sigma_bar.unwrap_or((5.0 * eta).sqrt()),
        p_min,
        p_max,
        target,
        saturation: raw.saturation.unwrap_or(base.saturation),
        estimator: raw.estimator.unwrap_or(base.estimator),
        initial_state: raw
            .initial_eigenspace
            .map_or(InitialState::MaximallyMixed, InitialState::Eigenspace),
        trajectories: raw.trajectories.unwrap_or(base.trajectories),
        t_final,
        dt: raw.dt.unwrap_or(base.dt),
        record_stride: raw.record_stride.unwrap_or(base.record_stride),
        feedback_delay: raw.feedback_delay.unwrap_or(0.0),
        base_seed: raw.seed.unwrap_or(0),
        fit_window,
    };
    cfg.validate()?;
    Ok(cfg)
}
