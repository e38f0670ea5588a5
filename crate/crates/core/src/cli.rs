//! Command-line front end: `train`, `score`, `select` and `simulate`.
//!
//! Errors are reported on stderr as two lines, `error: <category>` followed
//! by a human-readable message, and mapped to exit codes 1 (io), 2 (config),
//! 3 (numeric) and 4 (convergence).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::ga::GaConfig;
use crate::model::{train, PpfaModel};
use crate::monitoring::Statistic;
use crate::select::{scoreboard_csv, select, InjectionSpec, SelectionGrid};
use crate::statespace::{simulate, simulate_with_switch, ModelParams};

#[derive(Debug, Parser)]
#[command(name = "ppfa", version, about = "Latent dynamic process monitoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on normal data and write the model file.
    Train(CommonArgs),
    /// Score data with a trained model and write the monitoring report.
    Score(CommonArgs),
    /// Choose (r, s) by hold-out validation and write the scoreboard.
    Select(CommonArgs),
    /// Generate synthetic data and a sidecar file of fault windows.
    Simulate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file (written by train, read by score).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output file: report, scoreboard, simulated data or training trace.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed of the command's config section.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `monitor.alpha`.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EmSection {
    pub r: usize,
    pub s: usize,
    pub max_iterations: usize,
    pub loglik_rel_tol: f64,
    pub seed: u64,
    pub freeze_dynamics: bool,
    /// Fail with a convergence error when EM stops at `max_iterations`.
    pub require_convergence: bool,
}

impl Default for EmSection {
    fn default() -> Self {
        let d = EmConfig::default();
        EmSection {
            r: d.r,
            s: d.s,
            max_iterations: d.max_iterations,
            loglik_rel_tol: d.loglik_rel_tol,
            seed: d.seed,
            freeze_dynamics: d.freeze_dynamics,
            require_convergence: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GaSection {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub mutation_scale: f64,
    pub lambda_penalty: f64,
    pub elitism_count: usize,
    pub search_min: f64,
    pub search_max: f64,
}

impl Default for GaSection {
    fn default() -> Self {
        let d = GaConfig::default();
        GaSection {
            population_size: d.population_size,
            generations: d.generations,
            crossover_rate: d.crossover_rate,
            mutation_rate: d.mutation_rate,
            mutation_scale: d.mutation_scale,
            lambda_penalty: d.lambda_penalty,
            elitism_count: d.elitism_count,
            search_min: d.search_box.0,
            search_max: d.search_box.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorSection {
    pub alpha: f64,
}

impl Default for MonitorSection {
    fn default() -> Self {
        MonitorSection { alpha: 0.99 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SelectSection {
    pub r_candidates: Vec<usize>,
    pub s_candidates: Vec<usize>,
    pub magnitudes: Vec<f64>,
    pub channels: usize,
    pub onset_fraction: f64,
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for SelectSection {
    fn default() -> Self {
        let g = SelectionGrid::default();
        SelectSection {
            r_candidates: g.r_candidates,
            s_candidates: g.s_candidates,
            magnitudes: g.injection.magnitudes,
            channels: g.injection.channels,
            onset_fraction: g.injection.onset_fraction,
            split_fraction: g.split_fraction,
            seed: g.seed,
        }
    }
}

/// Step fault on `channels` over rows `start..end` (end exclusive), sized
/// in units of each channel's model-implied standard deviation.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub start: usize,
    pub end: usize,
    pub channels: Vec<usize>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub s: usize,
    /// Measurement noise variance of the random model.
    pub noise_var: f64,
    pub seed: u64,
    /// Explicit AR coefficients, `s` rows of `r` values.
    pub beta: Option<Vec<Vec<f64>>>,
    /// Explicit emission matrix, `m` rows of `r` values.
    pub h: Option<Vec<Vec<f64>>>,
    /// Explicit measurement noise variances.
    pub sigma: Option<Vec<f64>>,
    /// Row at which the AR coefficients change to `beta_after`.
    pub switch_at: Option<usize>,
    pub beta_after: Option<Vec<Vec<f64>>>,
    pub faults: Vec<FaultSpec>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            n: 1000,
            m: 6,
            r: 2,
            s: 2,
            noise_var: 0.25,
            seed: 0,
            beta: None,
            h: None,
            sigma: None,
            switch_at: None,
            beta_after: None,
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub em: EmSection,
    pub ga: GaSection,
    pub monitor: MonitorSection,
    pub select: SelectSection,
    pub simulate: SimulateSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().trim().to_string()))?;
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner().to_string();
            Error::config(key, inner)
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => Self::parse(&read_text(p)?),
        }
    }

    pub fn em_config(&self) -> EmConfig {
        let g = &self.ga;
        EmConfig {
            r: self.em.r,
            s: self.em.s,
            max_iterations: self.em.max_iterations,
            loglik_rel_tol: self.em.loglik_rel_tol,
            seed: self.em.seed,
            freeze_dynamics: self.em.freeze_dynamics,
            ga: GaConfig {
                population_size: g.population_size,
                generations: g.generations,
                crossover_rate: g.crossover_rate,
                mutation_rate: g.mutation_rate,
                mutation_scale: g.mutation_scale,
                lambda_penalty: g.lambda_penalty,
                elitism_count: g.elitism_count,
                seed: 0,
                search_box: (g.search_min, g.search_max),
            },
        }
    }

    pub fn grid(&self) -> SelectionGrid {
        let s = &self.select;
        SelectionGrid {
            r_candidates: s.r_candidates.clone(),
            s_candidates: s.s_candidates.clone(),
            injection: InjectionSpec {
                magnitudes: s.magnitudes.clone(),
                channels: s.channels,
                onset_fraction: s.onset_fraction,
            },
            split_fraction: s.split_fraction,
            seed: s.seed,
        }
    }

    pub fn validate_alpha(&self) -> Result<()> {
        let a = self.monitor.alpha;
        if !(a > 0.5 && a < 1.0) {
            return Err(Error::config("monitor.alpha", format!("must lie in (0.5, 1), got {a}")));
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a numeric CSV with a header row. Rows and columns in errors are
/// 1-based, counting the header as row 1.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let where_ = path.display();
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{where_}: cannot read header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse(format!("{where_}: missing header row")));
    }
    let m = header.len();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse(format!("{where_}: row {row}: {e}")))?;
        if record.len() != m {
            return Err(Error::Parse(format!(
                "{where_}: row {row} has {} fields, header has {m}",
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let col = j + 1;
            if cell.is_empty() {
                return Err(Error::Parse(format!(
                    "{where_}: row {row}, column {col} ({}): missing value",
                    header[j]
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Parse(format!(
                    "{where_}: row {row}, column {col} ({}): `{cell}` is not a number",
                    header[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "{where_}: row {row}, column {col} ({}): non-finite value",
                    header[j]
                )));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Parse(format!("{where_}: no data rows")));
    }
    let n = values.len() / m;
    Ok((header, DMatrix::from_row_slice(n, m, &values)))
}

pub fn csv_text(header: &[String], data: &DMatrix<f64>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in data.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::config(flag, "required for this command"))
}

fn apply_overrides(cfg: &mut RunConfig, args: &CommonArgs, seed_target: &mut u64) {
    if let Some(seed) = args.seed {
        *seed_target = seed;
    }
    if let Some(alpha) = args.alpha {
        cfg.monitor.alpha = alpha;
    }
}

/// Runs a parsed command, returning the text printed on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Select(a) => cmd_select(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn cmd_train(args: &CommonArgs) -> Result<String> {
    let data = require(&args.data, "--data")?;
    let model_out = require(&args.model, "--model")?;
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let mut seed = cfg.em.seed;
    apply_overrides(&mut cfg, args, &mut seed);
    cfg.em.seed = seed;
    cfg.validate_alpha()?;
    let em = cfg.em_config();
    em.validate()?;

    let (_, raw) = read_csv(data)?;
    let (model, trace) = train(&raw, &em, cfg.monitor.alpha)?;
    if let Some(out) = &args.out {
        write_text(out, &trace.to_csv())?;
    }
    if cfg.em.require_convergence && !trace.converged {
        return Err(Error::Convergence(format!(
            "EM did not reach relative tolerance {} within {} iterations",
            em.loglik_rel_tol, em.max_iterations
        )));
    }
    model.save(model_out)?;

    let l = &model.limits;
    let mut msg = String::new();
    let _ = writeln!(msg, "iterations {}", trace.len());
    let _ = writeln!(msg, "converged {}", trace.converged);
    let _ = writeln!(msg, "loglik {}", trace.best_log_likelihood);
    let _ = writeln!(msg, "psi_T2 {}", l.psi_t2);
    let _ = writeln!(msg, "psi_SPE {}", l.psi_spe);
    let _ = writeln!(msg, "psi_DI {}", l.psi_di);
    let warnings: usize = trace.iterations.iter().map(|r| r.warnings.len()).sum();
    if warnings > 0 {
        let _ = writeln!(msg, "warnings {warnings}");
    }
    Ok(msg)
}

fn cmd_score(args: &CommonArgs) -> Result<String> {
    let data = require(&args.data, "--data")?;
    let model_path = require(&args.model, "--model")?;
    let out = require(&args.out, "--out")?;
    let model = PpfaModel::load(model_path)?;
    let (header, raw) = read_csv(data)?;
    if header.len() != model.m() {
        return Err(Error::config(
            "data",
            format!("data has {} columns, model expects {}", header.len(), model.m()),
        ));
    }
    let report = model.score(&raw)?;
    write_text(out, &report.to_csv())?;
    let counts = report.alarm_counts();
    let mut msg = String::new();
    let _ = writeln!(msg, "samples {}", report.len());
    let _ = writeln!(msg, "alarms_T2 {}", counts[0]);
    let _ = writeln!(msg, "alarms_SPE {}", counts[1]);
    let _ = writeln!(msg, "alarms_DI {}", counts[2]);
    let rate = report.alarm_rate(Statistic::Spe, 0..report.len());
    let _ = writeln!(msg, "rate_SPE {rate}");
    Ok(msg)
}

fn cmd_select(args: &CommonArgs) -> Result<String> {
    let data = require(&args.data, "--data")?;
    let out = require(&args.out, "--out")?;
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let mut seed = cfg.select.seed;
    apply_overrides(&mut cfg, args, &mut seed);
    cfg.select.seed = seed;
    cfg.validate_alpha()?;
    let grid = cfg.grid();
    grid.validate()?;
    let em = cfg.em_config();
    em.validate()?;

    let (_, raw) = read_csv(data)?;
    let sel = select(&raw, &grid, &em, cfg.monitor.alpha)?;
    write_text(out, &scoreboard_csv(&sel.scoreboard))?;
    let mut msg = String::new();
    for skip in &sel.skipped {
        let _ = writeln!(msg, "skipped r={} s={}: {}", skip.r, skip.s, skip.reason);
    }
    let _ = writeln!(msg, "selected r={} s={}", sel.r, sel.s);
    Ok(msg)
}

fn table(rows: &[Vec<f64>], n_rows: usize, n_cols: usize, key: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::config(key, format!("must be {n_rows} rows of {n_cols} values")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n_rows, n_cols, &flat))
}

/// Builds the model of a simulate section: explicit tables where given,
/// otherwise a random stable model from the section seed.
pub fn simulation_model(sim: &SimulateSection) -> Result<ModelParams> {
    if sim.n == 0 {
        return Err(Error::config("simulate.n", "must be at least 1"));
    }
    for (key, v) in [("simulate.m", sim.m), ("simulate.r", sim.r), ("simulate.s", sim.s)] {
        if v == 0 {
            return Err(Error::config(key, "must be at least 1"));
        }
    }
    if sim.r > sim.m {
        return Err(Error::config("simulate.r", "must not exceed simulate.m"));
    }
    if !(sim.noise_var > 0.0) {
        return Err(Error::config("simulate.noise_var", "must be positive"));
    }
    let random = ModelParams::random_stable(sim.m, sim.r, sim.s, sim.noise_var, sim.seed)?;
    let beta = match &sim.beta {
        Some(b) => table(b, sim.s, sim.r, "simulate.beta")?,
        None => random.beta.clone(),
    };
    let h = match &sim.h {
        Some(h) => table(h, sim.m, sim.r, "simulate.h")?,
        None => random.h.clone(),
    };
    let sigma = match &sim.sigma {
        Some(v) if v.len() == sim.m && v.iter().all(|x| *x > 0.0) => DVector::from_vec(v.clone()),
        Some(_) => {
            return Err(Error::config("simulate.sigma", format!("must be {} positive values", sim.m)))
        }
        None => random.sigma.clone(),
    };
    ModelParams::with_unit_variance(beta, h, sigma)
}

fn cmd_simulate(args: &CommonArgs) -> Result<String> {
    let out = require(&args.out, "--out")?;
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let mut seed = cfg.simulate.seed;
    apply_overrides(&mut cfg, args, &mut seed);
    cfg.simulate.seed = seed;
    let sim = &cfg.simulate;
    let params = simulation_model(sim)?;

    for (i, f) in sim.faults.iter().enumerate() {
        let key = format!("simulate.faults[{i}]");
        if f.start >= f.end || f.end > sim.n {
            return Err(Error::config(key, format!("window must satisfy start < end <= n = {}", sim.n)));
        }
        if f.channels.is_empty() || f.channels.iter().any(|&c| c >= sim.m) {
            return Err(Error::config(key, format!("channels must be nonempty and below m = {}", sim.m)));
        }
        if !f.magnitude.is_finite() {
            return Err(Error::config(key, "magnitude must be finite"));
        }
    }

    let simulation = match (sim.switch_at, &sim.beta_after) {
        (None, None) => simulate(&params, sim.n, seed)?,
        (Some(at), Some(b)) => {
            let after_beta = table(b, sim.s, sim.r, "simulate.beta_after")?;
            let after = ModelParams::with_unit_variance(after_beta, params.h.clone(), params.sigma.clone())?;
            simulate_with_switch(&params, &after, at, sim.n, seed)?
        }
        (Some(_), None) => return Err(Error::config("simulate.beta_after", "required with switch_at")),
        (None, Some(_)) => return Err(Error::config("simulate.switch_at", "required with beta_after")),
    };

    // model-implied channel variance: |h_p|^2 + sigma_p (unit-variance latents)
    let channel_sd: Vec<f64> = (0..sim.m)
        .map(|p| (params.h.row(p).norm_squared() + params.sigma[p]).sqrt())
        .collect();
    let mut data = simulation.observations;
    for f in &sim.faults {
        for &c in &f.channels {
            let offset = f.magnitude * channel_sd[c];
            for k in f.start..f.end {
                data[(k, c)] += offset;
            }
        }
    }

    let header: Vec<String> = (1..=sim.m).map(|p| format!("x{p}")).collect();
    write_text(out, &csv_text(&header, &data))?;
    let sidecar = sidecar_path(out);
    let mut side = String::from("kind,start,end,channels,magnitude\n");
    for f in &sim.faults {
        let chans: Vec<String> = f.channels.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(side, "step,{},{},{},{}", f.start, f.end, chans.join(";"), f.magnitude);
    }
    if let Some(at) = sim.switch_at {
        let _ = writeln!(side, "dynamics,{},{},,0", at, sim.n);
    }
    write_text(&sidecar, &side)?;
    Ok(format!(
        "rows {}\ncolumns {}\nfaults {}\n",
        sim.n,
        sim.m,
        sidecar.display()
    ))
}

/// `<out>.faults.csv` next to the simulated data.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".faults.csv");
    PathBuf::from(name)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprintln!("error: config");
                eprint!("{e}");
                return 2;
            }
            print!("{e}");
            return 0;
        }
    };
    match run(cli) {
        Ok(msg) => {
            print!("{msg}");
            0
        }
        Err(e) => {
            let category = e.category();
            eprintln!("error: {}", category.as_str());
            eprintln!("{e}");
            category.exit_code()
        }
    }
}
