//! Performance metrics: average access attempts, failed-access probability,
//! normalized accepted users, and sum rate, with cross-trial means and 95%
//! normal-approximation confidence intervals.

use serde::{Deserialize, Serialize};

use crate::protocol::{ContentionOutcome, MAX_ATTEMPTS};
use crate::scenario::{FadingMap, VisibilityMap};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Streaming mean/variance (Welford), mergeable across workers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += d * w;
        self.m2 += other.m2 + d * d * self.n as f64 * w;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    /// Unbiased sample variance; zero for a single sample.
    pub fn variance(&self) -> Option<f64> {
        match self.n {
            0 => None,
            1 => Some(0.0),
            n => Some(self.m2 / (n - 1) as f64),
        }
    }

    /// Half-width of the 95% confidence interval of the mean.
    pub fn ci95(&self) -> Option<f64> {
        self.variance().map(|v| Z95 * (v / self.n as f64).sqrt())
    }

    pub fn estimate(&self) -> Option<Estimate> {
        Some(Estimate { mean: self.mean()?, ci95: self.ci95()? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
}

impl Estimate {
    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }

    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }
}

/// How block sum-rate samples are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SumRateAveraging {
    /// Mean over blocks within a trial, then mean over trials.
    #[default]
    PerBlockThenTrials,
    /// Every block of every trial is one sample.
    Pooled,
}

/// How an access episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeEnd {
    Accepted { attempts: u32 },
    Dropped,
}

/// Counts collected over one trial.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialTallies {
    /// `accepted_at[a]` = episodes accepted on attempt `a` (index 0 unused).
    pub accepted_at: [u64; MAX_ATTEMPTS as usize + 1],
    pub dropped: u64,
    /// Episodes with at least one attempt, including ones still running.
    pub attempted: u64,
    /// Episodes still backlogged when the trial ended.
    pub unresolved: u64,
    /// Per-block accepted/attempting ratios for blocks with attempts.
    pub block_acceptance: RunningStats,
    /// Per-block sum rates (bpcu), one sample per block.
    pub block_sum_rate: RunningStats,
}

impl TrialTallies {
    pub fn start_episode(&mut self) {
        self.attempted += 1;
    }

    pub fn end_episode(&mut self, end: EpisodeEnd) {
        match end {
            EpisodeEnd::Accepted { attempts } => {
                assert!(
                    (1..=MAX_ATTEMPTS).contains(&attempts),
                    "accepted after {attempts} attempts"
                );
                self.accepted_at[attempts as usize] += 1;
            }
            EpisodeEnd::Dropped => self.dropped += 1,
        }
    }

    pub fn record_block(&mut self, attempting: usize, accepted: usize, sum_rate: f64) {
        assert!(accepted <= attempting, "accepted {accepted} > attempting {attempting}");
        assert!(sum_rate >= 0.0, "negative sum rate {sum_rate}");
        if attempting > 0 {
            self.block_acceptance.push(accepted as f64 / attempting as f64);
        }
        self.block_sum_rate.push(sum_rate);
    }

    pub fn accepted(&self) -> u64 {
        self.accepted_at.iter().sum()
    }

    pub fn completed(&self) -> u64 {
        self.accepted() + self.dropped
    }
}

/// Mean attempts over completed episodes; a dropped user counts as
/// [`MAX_ATTEMPTS`]. `None` when no episode completed.
pub fn avg_access_attempts(t: &TrialTallies) -> Option<f64> {
    let completed = t.completed();
    if completed == 0 {
        return None;
    }
    let accepted: u64 = t.accepted_at.iter().enumerate().map(|(a, n)| a as u64 * n).sum();
    Some((accepted + MAX_ATTEMPTS as u64 * t.dropped) as f64 / completed as f64)
}

/// Dropped episodes over episodes with at least one attempt.
pub fn failed_access_probability(t: &TrialTallies) -> Option<f64> {
    (t.attempted > 0).then(|| t.dropped as f64 / t.attempted as f64)
}

/// Per-block accepted/attempting ratio, averaged over blocks with attempts.
pub fn normalized_accepted(t: &TrialTallies) -> Option<f64> {
    t.block_acceptance.mean()
}

/// NVR-XL sum rate: `log2(1 + SINR)` summed over every admitted user and
/// every SA it sees.
pub fn sum_rate_nvr(outcomes: &[ContentionOutcome]) -> f64 {
    outcomes
        .iter()
        .flat_map(|o| &o.admitted)
        .flat_map(|a| &a.sinr)
        .map(|&(_, g)| (1.0 + g).log2())
        .sum()
}

/// SUCRe-XL sum rate: each admitted user contributes
/// `log2(1 + rho*beta/sigma2)` on each SA it sees.
pub fn sum_rate_sucre(
    outcomes: &[ContentionOutcome],
    fading: &FadingMap,
    vis: &VisibilityMap,
    sigma2: f64,
) -> f64 {
    outcomes
        .iter()
        .flat_map(|o| &o.admitted)
        .map(|a| {
            vis.visible_set(a.user)
                .map(|b| (1.0 + fading.received(a.user, b) / sigma2).log2())
                .sum::<f64>()
        })
        .sum()
}

/// Cross-trial estimators for all four metrics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    pub trials: u64,
    pub avg_attempts: RunningStats,
    pub failed_prob: RunningStats,
    pub norm_accepted: RunningStats,
    pub sum_rate: RunningStats,
    pub sum_rate_pooled: RunningStats,
}

impl MetricsAccumulator {
    /// Folds in one trial. Metrics undefined for the trial are skipped.
    pub fn push(&mut self, t: &TrialTallies) {
        self.trials += 1;
        if let Some(v) = avg_access_attempts(t) {
            self.avg_attempts.push(v);
        }
        if let Some(v) = failed_access_probability(t) {
            self.failed_prob.push(v);
        }
        if let Some(v) = normalized_accepted(t) {
            self.norm_accepted.push(v);
        }
        if let Some(v) = t.block_sum_rate.mean() {
            self.sum_rate.push(v);
        }
        self.sum_rate_pooled.merge(&t.block_sum_rate);
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.trials += other.trials;
        self.avg_attempts.merge(&other.avg_attempts);
        self.failed_prob.merge(&other.failed_prob);
        self.norm_accepted.merge(&other.norm_accepted);
        self.sum_rate.merge(&other.sum_rate);
        self.sum_rate_pooled.merge(&other.sum_rate_pooled);
    }

    pub fn summary(&self, averaging: SumRateAveraging) -> MetricSummary {
        MetricSummary {
            trials: self.trials,
            avg_attempts: self.avg_attempts.estimate(),
            failed_prob: self.failed_prob.estimate(),
            norm_accepted: self.norm_accepted.estimate(),
            sum_rate: match averaging {
                SumRateAveraging::PerBlockThenTrials => self.sum_rate.estimate(),
                SumRateAveraging::Pooled => self.sum_rate_pooled.estimate(),
            },
        }
    }
}

/// Point estimates with CI half-widths; `None` marks an undefined metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub trials: u64,
    pub avg_attempts: Option<Estimate>,
    pub failed_prob: Option<Estimate>,
    pub norm_accepted: Option<Estimate>,
    pub sum_rate: Option<Estimate>,
}

impl MetricSummary {
    pub fn is_complete(&self) -> bool {
        self.avg_attempts.is_some()
            && self.failed_prob.is_some()
            && self.norm_accepted.is_some()
            && self.sum_rate.is_some()
    }
}
