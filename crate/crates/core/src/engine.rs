//! Monte Carlo orchestration: trials, sweeps and the bias-scale search.
//!
//! Each trial redraws the whole scenario from a sub-seed derived from the
//! master seed and the trial index, then runs `n_blocks` RA blocks under a
//! stationary load: accepted and dropped users start a fresh episode right
//! away, so the population stays at `K`. Seeds do not depend on the protocol
//! or the bias scale, so cells that differ only in those see common random
//! numbers.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::ResultRow;
use crate::error::{check_probability, ConfigError, Result};
use crate::metrics::{
    sum_rate_nvr, sum_rate_sucre, EpisodeEnd, Estimate, MetricsAccumulator, SumRateAveraging,
    TrialTallies,
};
use crate::protocol::{
    run_ra_block, visible_sums, BlockContext, BlockRngs, DecisionConfig, EstimatorMode, Lifecycle, PilotPool,
    Protocol, RaUserState, SicConfig,
};
use crate::scenario::{
    CellLayout, ChannelParams, Scenario, ScenarioConfig, SubarrayPartition, UraGeometry,
};

/// Environment variable capping the worker count.
pub const WORKERS_ENV: &str = "XLRA_WORKERS";

/// Random stream identifiers within one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Scenario = 0,
    Access = 1,
    Estimator = 2,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for one stream of one trial. For a fixed master seed and stream
/// the map from trial index to sub-seed is a bijection.
pub fn derive_seed(master: u64, trial: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ trial) ^ stream as u64)
}

pub fn trial_rng(master: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, trial, stream))
}

/// Everything one Monte Carlo cell needs. Defaults follow the reference
/// parameter table (100 x 5 URA, 200 x 100 m cell, `P_a = 0.01`,
/// `P_na = 0.5`, `tau = 10`, `varpi = 0.1`, `sigma2 = rho = 1 W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub protocol: Protocol,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "B")]
    pub subarrays: usize,
    pub p_a: f64,
    pub p_na: f64,
    pub p_b: f64,
    pub tau: usize,
    pub delta: f64,
    pub estimator: EstimatorMode,
    pub noise_scale: f64,
    pub varpi: f64,
    pub sigma2: f64,
    pub literal_eq3: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decode_threshold: Option<f64>,
    pub allow_small_subarrays: bool,
    pub n_blocks: usize,
    pub warmup_blocks: usize,
    pub n_trials: usize,
    pub seed: u64,
    pub sum_rate_averaging: SumRateAveraging,
    pub geometry: UraGeometry,
    pub cell: CellLayout,
    pub channel: ChannelParams,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::NvrXl,
            users: 3000,
            subarrays: 10,
            p_a: 0.01,
            p_na: 0.5,
            p_b: 0.5,
            tau: 10,
            delta: -300.0,
            estimator: EstimatorMode::Genie,
            noise_scale: 1.0,
            varpi: 0.1,
            sigma2: 1.0,
            literal_eq3: false,
            decode_threshold: None,
            allow_small_subarrays: false,
            n_blocks: 100,
            warmup_blocks: 0,
            n_trials: 500,
            seed: 1,
            sum_rate_averaging: SumRateAveraging::PerBlockThenTrials,
            geometry: UraGeometry::default(),
            cell: CellLayout::default(),
            channel: ChannelParams::default(),
        }
    }
}

impl TrialConfig {
    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            geometry: self.geometry.clone(),
            cell: self.cell.clone(),
            channel: self.channel.clone(),
            users: self.users,
            subarrays: self.subarrays,
            p_b: self.p_b,
            allow_small_subarrays: self.allow_small_subarrays,
        }
    }

    pub fn decision(&self) -> DecisionConfig {
        DecisionConfig { delta: self.delta, estimator: self.estimator, noise_scale: self.noise_scale }
    }

    pub fn sic(&self) -> SicConfig {
        SicConfig {
            varpi: self.varpi,
            sigma2: self.sigma2,
            literal_eq3: self.literal_eq3,
            decode_threshold: self.decode_threshold,
        }
    }

    pub fn validate(&self) -> Result<SubarrayPartition> {
        check_probability("P_a", self.p_a)?;
        check_probability("P_na", self.p_na)?;
        check_probability("varpi", self.varpi)?;
        PilotPool::new(self.tau)?;
        if self.n_blocks == 0 {
            return Err(ConfigError::Invalid("n_blocks must be at least 1".into()));
        }
        if self.warmup_blocks >= self.n_blocks {
            return Err(ConfigError::Invalid(format!(
                "warmup_blocks ({}) must be below n_blocks ({})",
                self.warmup_blocks, self.n_blocks
            )));
        }
        if self.n_trials == 0 {
            return Err(ConfigError::Invalid("n_trials must be at least 1".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(ConfigError::Invalid(format!("sigma2 must be positive (got {})", self.sigma2)));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(ConfigError::Invalid("noise_scale must be non-negative".into()));
        }
        if !self.delta.is_finite() {
            return Err(ConfigError::Invalid("delta must be finite".into()));
        }
        self.scenario_config().validate()
    }
}

/// Runs the blocks of one trial on an already drawn scenario.
pub fn run_blocks(cfg: &TrialConfig, scenario: &Scenario, trial_index: u64) -> TrialTallies {
    let mut access = trial_rng(cfg.seed, trial_index, Stream::Access);
    let mut estimator = trial_rng(cfg.seed, trial_index, Stream::Estimator);
    let pool = PilotPool::new(cfg.tau).expect("validated");
    let sums = visible_sums(&scenario.fading, &scenario.visibility);
    let ctx = BlockContext {
        fading: &scenario.fading,
        visibility: &scenario.visibility,
        visible_sum: &sums,
        tau: cfg.tau,
        subarray_size: scenario.partition.size(),
        sigma2: cfg.sigma2,
    };
    let decision = cfg.decision();
    let sic = cfg.sic();

    let mut states = RaUserState::population(scenario.users());
    // Whether the user's current episode started after warm-up.
    let mut counted = vec![false; scenario.users()];
    let mut tallies = TrialTallies::default();

    for block in 0..cfg.n_blocks {
        let recording = block >= cfg.warmup_blocks;
        let report = run_ra_block(
            cfg.protocol,
            &mut states,
            pool,
            cfg.p_a,
            cfg.p_na,
            &ctx,
            &decision,
            &sic,
            BlockRngs { access: &mut access, estimator: &mut estimator },
        );

        if recording {
            let sum_rate = match cfg.protocol {
                Protocol::NvrXl => sum_rate_nvr(&report.outcomes),
                Protocol::SucreXl => {
                    sum_rate_sucre(&report.outcomes, &scenario.fading, &scenario.visibility, cfg.sigma2)
                }
            };
            tallies.record_block(report.attempting, report.admitted(), sum_rate);
        }

        for u in report.outcomes.iter().flat_map(|o| &o.contenders).copied() {
            let st = &mut states[u];
            if st.attempts == 1 {
                counted[u] = recording;
                if recording {
                    tallies.start_episode();
                }
            }
            let end = match st.lifecycle {
                Lifecycle::Accepted => EpisodeEnd::Accepted { attempts: st.attempts },
                Lifecycle::Dropped => EpisodeEnd::Dropped,
                _ => continue,
            };
            if counted[u] {
                tallies.end_episode(end);
            }
            counted[u] = false;
            st.reset();
        }
    }
    tallies.unresolved = states
        .iter()
        .zip(&counted)
        .filter(|(s, c)| **c && s.lifecycle == Lifecycle::Backlogged)
        .count() as u64;
    tallies
}

/// One trial: scenario from the trial's own stream, then all blocks.
pub fn run_trial(cfg: &TrialConfig, trial_index: u64) -> Result<TrialTallies> {
    cfg.validate()?;
    let scenario = draw_scenario(cfg, trial_index)?;
    Ok(run_blocks(cfg, &scenario, trial_index))
}

pub fn draw_scenario(cfg: &TrialConfig, trial_index: u64) -> Result<Scenario> {
    Scenario::generate(&cfg.scenario_config(), &mut trial_rng(cfg.seed, trial_index, Stream::Scenario))
}

/// Worker pool for trial-level parallelism.
#[derive(Debug)]
pub struct Runner {
    pool: rayon::ThreadPool,
}

impl Runner {
    pub fn new(workers: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("failed to build worker pool");
        Self { pool }
    }

    /// Uses `XLRA_WORKERS` when set, hardware parallelism otherwise.
    pub fn from_env() -> Self {
        let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
        let workers = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(hw);
        Self::new(workers)
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Runs every trial of one cell and reduces in trial order.
    pub fn run_cell(&self, cfg: &TrialConfig) -> Result<MetricsAccumulator> {
        self.run_group(std::slice::from_ref(cfg)).pop().expect("one config")
    }

    /// Runs several cells that share a scenario (same scenario config, seed
    /// and trial count). Each trial's scenario is drawn once and reused for
    /// every cell, which is exactly what common random numbers require.
    pub fn run_group(&self, cfgs: &[TrialConfig]) -> Vec<Result<MetricsAccumulator>> {
        let valid: Vec<Option<ConfigError>> = cfgs.iter().map(|c| c.validate().err()).collect();
        let live: Vec<usize> = (0..cfgs.len()).filter(|&i| valid[i].is_none()).collect();
        for &i in &live {
            assert!(
                shares_scenario(&cfgs[live[0]], &cfgs[i]),
                "run_group requires cells with a common scenario"
            );
        }

        let mut results: Vec<Result<MetricsAccumulator>> = valid
            .into_iter()
            .map(|e| match e {
                Some(err) => Err(err),
                None => Ok(MetricsAccumulator::default()),
            })
            .collect();
        if live.is_empty() {
            return results;
        }

        let base = &cfgs[live[0]];
        let per_trial: Vec<Result<Vec<TrialTallies>>> = self.pool.install(|| {
            (0..base.n_trials as u64)
                .into_par_iter()
                .map(|trial| {
                    let scenario = draw_scenario(base, trial)?;
                    Ok(live.iter().map(|&i| run_blocks(&cfgs[i], &scenario, trial)).collect())
                })
                .collect()
        });

        for trial in per_trial {
            match trial {
                Ok(tallies) => {
                    for (&i, t) in live.iter().zip(&tallies) {
                        if let Ok(acc) = &mut results[i] {
                            acc.push(t);
                        }
                    }
                }
                Err(err) => {
                    for &i in &live {
                        results[i] = Err(err.clone());
                    }
                    break;
                }
            }
        }
        results
    }

    /// Runs every cell of the grid and returns one row per cell in grid order.
    pub fn run_sweep(&self, spec: &SweepSpec) -> Result<Vec<ResultRow>> {
        let cells = spec.cells()?;
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, c) in cells.iter().enumerate() {
            groups.entry(scenario_key(c)).or_default().push(i);
        }
        let mut rows: Vec<Option<ResultRow>> = vec![None; cells.len()];
        for idx in groups.values() {
            let group: Vec<TrialConfig> = idx.iter().map(|&i| cells[i].clone()).collect();
            for (&i, res) in idx.iter().zip(self.run_group(&group)) {
                rows[i] = Some(ResultRow::from_result(&cells[i], res));
            }
        }
        Ok(rows.into_iter().map(|r| r.expect("every cell ran")).collect())
    }

    /// Exhaustive search over bias scales with common random numbers.
    pub fn tune_delta(&self, base: &TrialConfig, grid: &[f64], objective: Objective) -> Result<TuneResult> {
        if grid.is_empty() {
            return Err(ConfigError::Invalid("delta grid is empty".into()));
        }
        base.validate()?;
        let cells: Vec<TrialConfig> =
            grid.iter().map(|&delta| TrialConfig { delta, ..base.clone() }).collect();
        let mut table = Vec::with_capacity(grid.len());
        for (cfg, res) in cells.iter().zip(self.run_group(&cells)) {
            let summary = res?.summary(cfg.sum_rate_averaging);
            let value = match objective {
                Objective::SumRate => summary.sum_rate,
                Objective::Attempts => summary.avg_attempts,
            };
            table.push(TunePoint { delta: cfg.delta, value });
        }
        let delta_star = select_best(&table, objective);
        Ok(TuneResult { objective, delta_star, table })
    }
}

/// Key identifying cells whose trials can share scenarios.
fn scenario_key(c: &TrialConfig) -> String {
    let sc = serde_json::to_string(&c.scenario_config()).expect("serializable");
    format!("{sc}|{}|{}", c.seed, c.n_trials)
}

fn shares_scenario(a: &TrialConfig, b: &TrialConfig) -> bool {
    a.scenario_config() == b.scenario_config() && a.seed == b.seed && a.n_trials == b.n_trials
}

/// Declarative experiment grid over a shared base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub base: TrialConfig,
    pub grid: SweepGrid,
}

/// Grid axes; an omitted axis uses the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub protocol: Option<Vec<Protocol>>,
    #[serde(rename = "K")]
    pub users: Option<Vec<usize>>,
    #[serde(rename = "B")]
    pub subarrays: Option<Vec<usize>>,
    pub delta: Option<Vec<f64>>,
}

impl SweepSpec {
    /// Cartesian product in (protocol, K, B, delta) order, last axis fastest.
    pub fn cells(&self) -> Result<Vec<TrialConfig>> {
        fn axis<T: Clone>(name: &str, axis: &Option<Vec<T>>, base: T) -> Result<Vec<T>> {
            match axis {
                Some(v) if v.is_empty() => Err(ConfigError::Invalid(format!("grid axis `{name}` is empty"))),
                Some(v) => Ok(v.clone()),
                None => Ok(vec![base]),
            }
        }
        let protocols = axis("protocol", &self.grid.protocol, self.base.protocol)?;
        let users = axis("K", &self.grid.users, self.base.users)?;
        let subarrays = axis("B", &self.grid.subarrays, self.base.subarrays)?;
        let deltas = axis("delta", &self.grid.delta, self.base.delta)?;

        let mut cells = Vec::new();
        for &protocol in &protocols {
            for &k in &users {
                for &b in &subarrays {
                    for &delta in &deltas {
                        cells.push(TrialConfig {
                            protocol,
                            users: k,
                            subarrays: b,
                            delta,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Maximize the mean sum rate.
    #[default]
    SumRate,
    /// Minimize the mean number of access attempts.
    Attempts,
}

impl std::str::FromStr for Objective {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum-rate" | "sum_rate" => Ok(Self::SumRate),
            "attempts" => Ok(Self::Attempts),
            other => Err(ConfigError::Invalid(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub delta: f64,
    pub value: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub objective: Objective,
    pub delta_star: Option<f64>,
    pub table: Vec<TunePoint>,
}

/// Best grid point; exact ties go to the smaller `|delta|`, then to the
/// earlier grid entry.
pub fn select_best(table: &[TunePoint], objective: Objective) -> Option<f64> {
    let better = |a: f64, b: f64| match objective {
        Objective::SumRate => a > b,
        Objective::Attempts => a < b,
    };
    let mut best: Option<(f64, f64)> = None;
    for p in table {
        let Some(v) = p.value.map(|e| e.mean) else { continue };
        best = match best {
            None => Some((p.delta, v)),
            Some((d, bv)) if better(v, bv) || (v == bv && p.delta.abs() < d.abs()) => Some((p.delta, v)),
            keep => keep,
        };
    }
    best.map(|(d, _)| d)
}
