//! CSV emission for campaigns and certificates. Floats are written with the
//! shortest representation that parses back to the same bits.

use crate::ensemble::EnsembleResult;
use crate::error::{Error, Result};
use crate::lyapunov::CertificateReport;

pub const CAMPAIGN_HEADER: [&str; 6] = ["t", "mean_error", "q10", "q50", "q90", "n_alive"];

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Config {
        field: "csv".into(),
        message: e.to_string(),
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(";")
}

pub fn campaign_csv(result: &EnsembleResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CAMPAIGN_HEADER).map_err(csv_error)?;
    for i in 0..result.times.len() {
        w.write_record([
            fmt(result.times[i]),
            fmt(result.mean_error[i]),
            fmt(result.q10[i]),
            fmt(result.q50[i]),
            fmt(result.q90[i]),
            result.n_alive[i].to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRow {
    pub t: f64,
    pub mean_error: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub n_alive: usize,
}

pub fn parse_campaign_csv(text: &str) -> Result<Vec<CampaignRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().ne(CAMPAIGN_HEADER) {
        return Err(csv_error(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(csv_error);
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_error)?;
            Ok(CampaignRow {
                t: num(&rec[0])?,
                mean_error: num(&rec[1])?,
                q10: num(&rec[2])?,
                q50: num(&rec[3])?,
                q90: num(&rec[4])?,
                n_alive: rec[5].parse().map_err(csv_error)?,
            })
        })
        .collect()
}

/// Up to `max_traces` individual error trajectories, one column each.
pub fn traces_csv(result: &EnsembleResult, max_traces: usize) -> Result<String> {
    let n = result.error_traces.len().min(max_traces);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|k| format!("traj_{k}")));
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..result.times.len() {
        let mut row = vec![fmt(result.times[i])];
        row.extend(result.error_traces[..n].iter().map(|t| fmt(t[i])));
        w.write_record(&row).map_err(csv_error)?;
    }
    finish(w)
}

/// `key,value` summary of the fitted rate and final statistics.
pub fn summary_csv(result: &EnsembleResult, label: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["key", "value"]).map_err(csv_error)?;
    let last = result.mean_error.len() - 1;
    let finals = result.final_population_stats();
    let rows = vec![
        ("campaign", label.to_string()),
        ("nu_hat", fmt(result.rate.nu_hat)),
        ("ci_low", fmt(result.rate.ci_low)),
        ("ci_high", fmt(result.rate.ci_high)),
        ("fit_start", fmt(result.fit_window.0)),
        ("fit_end", fmt(result.fit_window.1)),
        ("trajectories", result.error_traces.len().to_string()),
        ("aborted", result.aborted.len().to_string()),
        ("t_final", fmt(result.times[last])),
        ("final_mean_error", fmt(result.mean_error[last])),
        ("final_population_mean", join(&finals.iter().map(|s| s.0).collect::<Vec<_>>())),
        ("final_population_sd", join(&finals.iter().map(|s| s.1).collect::<Vec<_>>())),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()]).map_err(csv_error)?;
    }
    finish(w)
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_error)?;
            Ok((rec[0].to_string(), rec[1].to_string()))
        })
        .collect()
}

pub fn certificate_csv(report: &CertificateReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stratum", "samples", "min_ratio", "worst_populations"])
        .map_err(csv_error)?;
    for s in &report.strata {
        w.write_record([
            s.stratum.name().to_string(),
            s.samples.to_string(),
            fmt(s.min_ratio),
            join(&s.worst_populations),
        ])
        .map_err(csv_error)?;
    }
    let total: usize = report.strata.iter().map(|s| s.samples).sum();
    w.write_record([
        "all".to_string(),
        total.to_string(),
        fmt(report.nu_hat),
        join(&report.worst_populations),
    ])
    .map_err(csv_error)?;
    finish(w)
}
