use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use qnd_core::config::parse_config;
use qnd_core::ensemble::{Campaign, CampaignConfig, EnsembleResult, Figure, FIGURE_SEED};
use qnd_core::filters::laplacian_matrix;
use qnd_core::lyapunov::{certify_decay, default_beta, solve_alpha};
use qnd_core::report::{campaign_csv, certificate_csv, summary_csv, traces_csv};

/// Individual trajectories written to `traces.csv`.
const TRACES_WRITTEN: usize = 200;
const DEFAULT_CERTIFY_SAMPLES: usize = 10_000;

#[derive(Parser)]
#[command(name = "qnd", version, about = "Noise-assisted feedback stabilization of QND eigenstates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Output directory.
    #[arg(long, env = "QND_OUT_DIR", default_value = "qnd-out")]
    out: PathBuf,
    /// Base seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Time step, overriding the configuration.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one campaign described by a TOML configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sample the Lyapunov decay certificate for a configuration.
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CERTIFY_SAMPLES)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run a reference campaign and compare its rate against the band.
    Reproduce {
        /// fig1, fig2, fig3 or fig4.
        figure: String,
        /// Override the trajectory count (smoke runs only).
        #[arg(long)]
        trajectories: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] qnd_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a CampaignConfig,
    files: BTreeMap<String, String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes artifacts and records their SHA-256 for the manifest.
struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Artifacts {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        let digest = Sha256::digest(contents.as_bytes());
        let hex = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.files.insert(name.to_string(), hex);
        Ok(())
    }

    fn finish(mut self, command: &str, config: &CampaignConfig) -> CliResult<()> {
        let files = std::mem::take(&mut self.files);
        let manifest = Manifest { command, config, files };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }
}

fn load_config(path: &Path, common: &Common) -> CliResult<CampaignConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg = parse_config(&text)?;
    apply_overrides(&mut cfg, common)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut CampaignConfig, common: &Common) -> CliResult<()> {
    if let Some(seed) = common.seed {
        cfg.base_seed = seed;
    }
    if let Some(dt) = common.dt {
        cfg.dt = dt;
    }
    if common.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(())
}

fn run_campaign(cfg: &CampaignConfig, workers: usize) -> CliResult<EnsembleResult> {
    Ok(Campaign::new(cfg.clone())?.run_with_workers(workers)?)
}

fn write_campaign(out: &Path, command: &str, cfg: &CampaignConfig, result: &EnsembleResult, label: &str) -> CliResult<()> {
    let mut art = Artifacts::new(out)?;
    art.write("campaign.csv", &campaign_csv(result)?)?;
    art.write("summary.csv", &summary_csv(result, label)?)?;
    art.write("traces.csv", &traces_csv(result, TRACES_WRITTEN)?)?;
    art.finish(command, cfg)
}

fn print_rate(label: &str, result: &EnsembleResult) {
    let r = result.rate;
    println!(
        "{label}: nu_hat = {:.4} (95% CI [{:.4}, {:.4}]) over t in [{}, {}], {} trajectories, {} aborted",
        r.nu_hat,
        r.ci_low,
        r.ci_high,
        result.fit_window.0,
        result.fit_window.1,
        result.error_traces.len(),
        result.aborted.len()
    );
}

fn cmd_run(config: &Path, common: &Common) -> CliResult<ExitCode> {
    let cfg = load_config(config, common)?;
    let result = run_campaign(&cfg, common.workers)?;
    write_campaign(&common.out, "run", &cfg, &result, "run")?;
    print_rate("run", &result);
    Ok(ExitCode::SUCCESS)
}

fn cmd_certify(config: &Path, samples: usize, common: &Common) -> CliResult<ExitCode> {
    let cfg = load_config(config, common)?;
    let campaign = Campaign::new(cfg.clone())?;
    let (meas, ctrl) = (campaign.measurement(), campaign.control());
    let delta = laplacian_matrix(ctrl.h(), meas.decomposition())?;
    let weights = solve_alpha(&delta, ctrl.target(), &default_beta(delta.dim(), ctrl.target()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let report = pool.install(|| certify_decay(meas, ctrl, &weights, samples, cfg.base_seed))?;

    let mut art = Artifacts::new(&common.out)?;
    art.write("certificate.csv", &certificate_csv(&report)?)?;
    let alpha = weights.alpha();
    let mut text = String::from("row,") + &(0..alpha.ncols()).map(|k| format!("alpha_{k}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for (r, s) in weights.rows().iter().enumerate() {
        let row: Vec<String> = (0..alpha.ncols()).map(|k| format!("{}", alpha[(r, k)])).collect();
        text += &format!("{s},{}\n", row.join(","));
    }
    art.write("alpha.csv", &text)?;
    art.finish("certify", &cfg)?;

    println!(
        "certify: nu_hat = {:.6e}, c_lower = {:.6}, c_upper = {:.6}, {}",
        report.nu_hat,
        report.c_lower,
        report.c_upper,
        if report.certified { "certified" } else { "NOT certified" }
    );
    Ok(if report.certified { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_reproduce(figure: &str, trajectories: Option<usize>, common: &Common) -> CliResult<ExitCode> {
    let fig = Figure::parse(figure)
        .ok_or_else(|| CliError::Usage(format!("unknown figure {figure:?}; expected fig1..fig4")))?;
    let mut cfg = fig.config(FIGURE_SEED);
    if let Some(n) = trajectories {
        cfg.trajectories = n;
    }
    apply_overrides(&mut cfg, common)?;
    let result = run_campaign(&cfg, common.workers)?;
    write_campaign(&common.out, &format!("reproduce {}", fig.name()), &cfg, &result, fig.name())?;
    print_rate(fig.name(), &result);
    let (lo, hi) = fig.band();
    let pass = fig.accepts(&result);
    print!("{}: target {} band [{lo}, {hi}]", fig.name(), fig.reference_rate());
    if let Some(bound) = fig.final_error_bound() {
        print!(", final mean error {:.4} (must be < {bound})", result.mean_error.last().copied().unwrap_or(f64::NAN));
    }
    println!(" -> {}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, common } => cmd_run(config, common),
        Command::Certify { config, samples, common } => cmd_certify(config, *samples, common),
        Command::Reproduce {
            figure,
            trajectories,
            common,
        } => cmd_reproduce(figure, *trajectories, common),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
