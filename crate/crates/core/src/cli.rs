//! Command-line front end and the CSV result format.
//!
//! Every output file starts with `#` comment lines carrying the exact
//! configuration that produced it (as TOML), followed by a mandatory header
//! row and comma-separated records. Undefined metrics are written as `NA`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::engine::{Objective, Runner, SweepGrid, SweepSpec, TrialConfig, TuneResult};
use crate::error::{ConfigError, Result};
use crate::metrics::{Estimate, MetricSummary, MetricsAccumulator};
use crate::protocol::{EstimatorMode, Protocol};

/// Column order of every result CSV.
pub const RESULT_COLUMNS: [&str; 17] = [
    "protocol",
    "K",
    "B",
    "P_a",
    "P_b",
    "delta",
    "varpi",
    "n_trials",
    "avg_attempts",
    "avg_attempts_ci95",
    "failed_prob",
    "failed_prob_ci95",
    "norm_accepted",
    "norm_accepted_ci95",
    "avg_sum_rate_bpcu",
    "sum_rate_ci95",
    "status",
];

pub const LONG_COLUMNS: [&str; 11] =
    ["protocol", "K", "B", "P_a", "P_b", "delta", "varpi", "metric", "value", "ci95", "status"];

const CONFIG_MARKER: &str = "# config:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    UndefinedMetric,
    ConfigError,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::UndefinedMetric => "undefined_metric",
            Status::ConfigError => "config_error",
        }
    }
}

/// One CSV record: a (protocol, K, B, delta) cell with all four metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: Protocol,
    pub users: usize,
    pub subarrays: usize,
    pub p_a: f64,
    pub p_b: f64,
    pub delta: f64,
    pub varpi: f64,
    pub n_trials: usize,
    pub avg_attempts: Option<Estimate>,
    pub failed_prob: Option<Estimate>,
    pub norm_accepted: Option<Estimate>,
    pub sum_rate: Option<Estimate>,
    pub status: Status,
}

impl ResultRow {
    pub fn from_result(cfg: &TrialConfig, res: Result<MetricsAccumulator>) -> Self {
        let summary = res.ok().map(|acc| acc.summary(cfg.sum_rate_averaging));
        Self::from_summary(cfg, summary)
    }

    /// `None` marks a configuration error.
    pub fn from_summary(cfg: &TrialConfig, summary: Option<MetricSummary>) -> Self {
        let status = match &summary {
            None => Status::ConfigError,
            Some(s) if s.is_complete() => Status::Ok,
            Some(_) => Status::UndefinedMetric,
        };
        let s = summary.unwrap_or(MetricSummary {
            trials: 0,
            avg_attempts: None,
            failed_prob: None,
            norm_accepted: None,
            sum_rate: None,
        });
        Self {
            protocol: cfg.protocol,
            users: cfg.users,
            subarrays: cfg.subarrays,
            p_a: cfg.p_a,
            p_b: cfg.p_b,
            delta: cfg.delta,
            varpi: cfg.varpi,
            n_trials: cfg.n_trials,
            avg_attempts: s.avg_attempts,
            failed_prob: s.failed_prob,
            norm_accepted: s.norm_accepted,
            sum_rate: s.sum_rate,
            status,
        }
    }

    fn keys(&self) -> [String; 7] {
        [
            self.protocol.to_string(),
            self.users.to_string(),
            self.subarrays.to_string(),
            num(self.p_a),
            num(self.p_b),
            num(self.delta),
            num(self.varpi),
        ]
    }

    fn metrics(&self) -> [(&'static str, Option<Estimate>); 4] {
        [
            ("avg_attempts", self.avg_attempts),
            ("failed_prob", self.failed_prob),
            ("norm_accepted", self.norm_accepted),
            ("avg_sum_rate_bpcu", self.sum_rate),
        ]
    }

    pub fn to_csv_record(&self) -> String {
        let mut fields: Vec<String> = self.keys().to_vec();
        fields.push(self.n_trials.to_string());
        for (_, m) in self.metrics() {
            fields.push(opt(m.map(|e| e.mean)));
            fields.push(opt(m.map(|e| e.ci95)));
        }
        fields.push(self.status.as_str().to_string());
        fields.join(",")
    }

    pub fn to_long_records(&self) -> Vec<String> {
        let keys = self.keys().join(",");
        self.metrics()
            .iter()
            .map(|(name, m)| {
                format!(
                    "{keys},{name},{},{},{}",
                    opt(m.map(|e| e.mean)),
                    opt(m.map(|e| e.ci95)),
                    self.status.as_str()
                )
            })
            .collect()
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "NA".to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), num)
}

/// Comment block embedding `config_toml`, one `# ` line per TOML line.
pub fn config_header(command: &str, config_toml: &str) -> String {
    let mut s = format!("# xlra {command}\n{CONFIG_MARKER}\n");
    for line in config_toml.lines() {
        let _ = writeln!(s, "# {line}");
    }
    s
}

/// Recovers the TOML embedded by [`config_header`] from a result file.
pub fn config_from_header(text: &str) -> Option<String> {
    let mut lines = text.lines().skip_while(|l| *l != CONFIG_MARKER);
    lines.next()?;
    let mut toml = String::new();
    for line in lines.take_while(|l| l.starts_with('#')) {
        toml.push_str(line.strip_prefix("# ").unwrap_or(line.trim_start_matches('#')));
        toml.push('\n');
    }
    Some(toml)
}

/// Full results file: config comments, header, one record per row.
pub fn results_csv(command: &str, config_toml: &str, rows: &[ResultRow]) -> String {
    let mut s = config_header(command, config_toml);
    s.push_str(&RESULT_COLUMNS.join(","));
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_record());
        s.push('\n');
    }
    s
}

/// Companion long-format table (one metric per record) for plotting tools.
pub fn long_csv(command: &str, config_toml: &str, rows: &[ResultRow]) -> String {
    let mut s = config_header(command, config_toml);
    s.push_str(&LONG_COLUMNS.join(","));
    s.push('\n');
    for r in rows {
        for rec in r.to_long_records() {
            s.push_str(&rec);
            s.push('\n');
        }
    }
    s
}

pub fn tune_csv(command: &str, config_toml: &str, res: &TuneResult) -> String {
    let mut s = config_header(command, config_toml);
    let _ = writeln!(s, "# objective: {}", objective_name(res.objective));
    s.push_str("delta,objective,ci95\n");
    for p in &res.table {
        let _ = writeln!(
            s,
            "{},{},{}",
            num(p.delta),
            opt(p.value.map(|e| e.mean)),
            opt(p.value.map(|e| e.ci95))
        );
    }
    let _ = writeln!(s, "delta_star={}", opt(res.delta_star));
    s
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::SumRate => "sum-rate",
        Objective::Attempts => "attempts",
    }
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config serializes to TOML")
}

pub fn parse_config(text: &str) -> Result<TrialConfig> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn parse_sweep_spec(text: &str) -> Result<SweepSpec> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

#[derive(Debug, Parser)]
#[command(name = "xlra", version, about = "Random-access Monte Carlo simulator for crowded XL-MIMO cells")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a single (protocol, K, B, delta) cell and print one result row.
    Run {
        /// TOML configuration file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of cells described by a TOML spec file.
    Sweep {
        spec: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output CSV; a `.long.csv` companion is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive search over the bias scale delta.
    TuneDelta {
        /// TOML spec with a `grid.delta` list. Optional when `--deltas` is given.
        spec: Option<PathBuf>,
        /// Grid as `start:stop:step` (inclusive).
        #[arg(long, allow_hyphen_values = true)]
        deltas: Option<String>,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::SumRate)]
        objective: ObjectiveArg,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one trial's scenario (positions, gains, visibility).
    DumpScenario {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[arg(long, value_enum, default_value_t = DumpFormat::Csv)]
        format: DumpFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    SumRate,
    Attempts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DumpFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    SucreXl,
    NvrXl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Genie,
    Noisy,
}

/// Flags that override configuration-file values.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long = "K")]
    pub users: Option<usize>,
    #[arg(long = "B")]
    pub subarrays: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub pa: Option<f64>,
    #[arg(long)]
    pub pna: Option<f64>,
    #[arg(long)]
    pub pb: Option<f64>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub varpi: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub literal_eq3: bool,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Permit subarrays smaller than 50 elements.
    #[arg(long)]
    pub allow_small_subarrays: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut TrialConfig) {
        if let Some(p) = self.protocol {
            cfg.protocol = match p {
                ProtocolArg::SucreXl => Protocol::SucreXl,
                ProtocolArg::NvrXl => Protocol::NvrXl,
            };
        }
        if let Some(e) = self.estimator {
            cfg.estimator = match e {
                EstimatorArg::Genie => EstimatorMode::Genie,
                EstimatorArg::Noisy => EstimatorMode::Noisy,
            };
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        set!(
            users => users,
            subarrays => subarrays,
            delta => delta,
            pa => p_a,
            pna => p_na,
            pb => p_b,
            tau => tau,
            varpi => varpi,
            sigma2 => sigma2,
            trials => n_trials,
            blocks => n_blocks,
            warmup => warmup_blocks,
            seed => seed,
            noise_scale => noise_scale,
        );
        if self.literal_eq3 {
            cfg.literal_eq3 = true;
        }
        if self.allow_small_subarrays {
            cfg.allow_small_subarrays = true;
        }
    }
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| ConfigError::Parse(format!("bad range `{s}`: {e}")))?;
    let [start, stop, step] = parts[..] else {
        return Err(ConfigError::Parse(format!("range `{s}` must be start:stop:step")));
    };
    if !(step > 0.0) || stop < start {
        return Err(ConfigError::Parse(format!("range `{s}` is empty or has a non-positive step")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

fn read(path: &Path) -> std::result::Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn emit(path: Option<&Path>, text: &str, out: &mut dyn Write) -> std::result::Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(p.display().to_string(), e)),
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::Io("stdout".into(), e)),
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> std::result::Result<TrialConfig, CliError> {
    let mut cfg = match path {
        Some(p) => parse_config(&read(p)?)?,
        None => TrialConfig::default(),
    };
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn long_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.long.csv"))
}

/// Entry point shared by the binary and tests. Returns the process exit code.
pub fn run_cli<I, T>(args: I, runner: &Runner, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return if code == 0 { 0 } else { 2 };
        }
    };
    match dispatch(cli.command, runner, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command, runner: &Runner, out: &mut dyn Write) -> std::result::Result<i32, CliError> {
    match cmd {
        Command::Run { config, overrides, out: path } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            cfg.validate()?;
            let acc = runner.run_cell(&cfg)?;
            let row = ResultRow::from_result(&cfg, Ok(acc));
            emit(path.as_deref(), &results_csv("run", &to_toml(&cfg), &[row]), out)?;
            Ok(0)
        }
        Command::Sweep { spec, overrides, out: path } => {
            let mut spec = parse_sweep_spec(&read(&spec)?)?;
            overrides.apply(&mut spec.base);
            let rows = runner.run_sweep(&spec)?;
            let toml = to_toml(&spec);
            emit(path.as_deref(), &results_csv("sweep", &toml, &rows), out)?;
            if let Some(p) = &path {
                emit(Some(&long_path(p)), &long_csv("sweep", &toml, &rows), out)?;
            }
            Ok(0)
        }
        Command::TuneDelta { spec, deltas, objective, overrides, out: path } => {
            let mut spec = match &spec {
                Some(p) => parse_sweep_spec(&read(p)?)?,
                None => SweepSpec { base: TrialConfig::default(), grid: SweepGrid::default() },
            };
            if let Some(r) = &deltas {
                spec.grid.delta = Some(parse_range(r)?);
            }
            overrides.apply(&mut spec.base);
            let grid = spec
                .grid
                .delta
                .clone()
                .ok_or_else(|| ConfigError::Invalid("tune-delta needs a delta grid".into()))?;
            let objective = match objective {
                ObjectiveArg::SumRate => Objective::SumRate,
                ObjectiveArg::Attempts => Objective::Attempts,
            };
            let res = runner.tune_delta(&spec.base, &grid, objective)?;
            emit(path.as_deref(), &tune_csv("tune-delta", &to_toml(&spec), &res), out)?;
            Ok(0)
        }
        Command::DumpScenario { config, overrides, trial, format, out: path } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            cfg.validate()?;
            let sc = crate::engine::draw_scenario(&cfg, trial)?;
            let text = match format {
                DumpFormat::Json => serde_json::to_string_pretty(&sc).expect("scenario serializes") + "\n",
                DumpFormat::Csv => {
                    let mut s = config_header("dump-scenario", &to_toml(&cfg));
                    let _ = writeln!(s, "# trial: {trial}");
                    s.push_str("user,x,y,z,subarray,beta,visible\n");
                    for (k, q) in sc.positions.iter().enumerate() {
                        for b in 0..sc.partition.count() {
                            let _ = writeln!(
                                s,
                                "{k},{},{},{},{b},{:e},{}",
                                q.x,
                                q.y,
                                q.z,
                                sc.fading.beta(k, b),
                                u8::from(sc.visibility.is_visible(k, b))
                            );
                        }
                    }
                    s
                }
            };
            emit(path.as_deref(), &text, out)?;
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        let g = parse_range("-500:0:25").unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!((g[0], g[20]), (-500.0, 0.0));
        assert_eq!(parse_range("-300:-300:1").unwrap(), vec![-300.0]);
        assert!(parse_range("0:-1:1").is_err());
        assert!(parse_range("0:1").is_err());
    }

    #[test]
    fn undefined_metrics_print_na() {
        let cfg = TrialConfig::default();
        let row = ResultRow::from_summary(
            &cfg,
            Some(MetricSummary {
                trials: 3,
                avg_attempts: None,
                failed_prob: Some(Estimate { mean: 0.5, ci95: 0.25 }),
                norm_accepted: None,
                sum_rate: Some(Estimate { mean: 0.0, ci95: 0.0 }),
            }),
        );
        assert_eq!(row.status, Status::UndefinedMetric);
        assert_eq!(row.to_csv_record(), "nvr-xl,3000,10,0.01,0.5,-300,0.1,500,NA,NA,0.5,0.25,NA,NA,0,0,undefined_metric");
        assert_eq!(ResultRow::from_summary(&cfg, None).status, Status::ConfigError);
    }

    #[test]
    fn config_round_trips_through_header() {
        let cfg = TrialConfig { users: 1234, delta: -275.5, decode_threshold: Some(0.5), ..Default::default() };
        let text = results_csv("run", &to_toml(&cfg), &[]);
        let back = parse_config(&config_from_header(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(parse_config("K = 10\nbogus = 1\n").is_err());
        assert_eq!(parse_config("K = 10\nB = 5\n").unwrap().subarrays, 5);
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = parse_config("K = 10\ndelta = -100.0\n").unwrap();
        Overrides { users: Some(20), pb: Some(1.0), literal_eq3: true, ..Default::default() }.apply(&mut cfg);
        assert_eq!((cfg.users, cfg.delta, cfg.p_b, cfg.literal_eq3), (20, -100.0, 1.0, true));
    }
}
