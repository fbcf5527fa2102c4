//! Per-RA-block state machines for SUCRe-XL and NVR-XL.
//!
//! One RA block runs four steps:
//!
//! 1. inactive users attempt with probability `P_a`, backlogged users with
//!    `P_na`; each attempting user picks one of `tau` orthogonal pilots;
//! 2. the BS answers with precoded downlink pilots, modeled here as handing
//!    every contender an estimate of the total gain on its pilot;
//! 3. each contender compares its own gain against half that estimate plus a
//!    bias term and either retransmits or withdraws; the retransmitters are
//!    then resolved per subarray;
//! 4. resolved users receive a dedicated pilot, everyone else is backlogged
//!    (or dropped after [`MAX_ATTEMPTS`] failures).
//!
//! Pilot indices are zero-based throughout.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Result};
use crate::scenario::{visible_gain_sum, FadingMap, VisibilityMap};

/// Attempts after which an unresolved user gives up and its packet is lost.
pub const MAX_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    SucreXl,
    NvrXl,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::SucreXl, Protocol::NvrXl];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::SucreXl => "sucre-xl",
            Protocol::NvrXl => "nvr-xl",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Protocol {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sucre-xl" | "sucre_xl" | "sucrexl" => Ok(Protocol::SucreXl),
            "nvr-xl" | "nvr_xl" | "nvrxl" => Ok(Protocol::NvrXl),
            other => Err(ConfigError::Invalid(format!("unknown protocol `{other}`"))),
        }
    }
}

/// The orthogonal RA pilot set. Only the count is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PilotPool {
    tau: usize,
}

impl PilotPool {
    pub fn new(tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(ConfigError::Invalid("tau_RA must be at least 1".into()));
        }
        Ok(Self { tau })
    }

    /// Number of pilots, which is also the pilot length.
    pub fn len(&self) -> usize {
        self.tau
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Squared norm of every pilot.
    pub fn norm_squared(&self) -> f64 {
        self.tau as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lifecycle {
    Inactive,
    Contending,
    Backlogged,
    Accepted,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaUserState {
    pub id: usize,
    pub lifecycle: Lifecycle,
    /// RA attempts made in the current access episode.
    pub attempts: u32,
    pub chosen_pilot: Option<usize>,
}

impl RaUserState {
    pub fn new(id: usize) -> Self {
        Self { id, lifecycle: Lifecycle::Inactive, attempts: 0, chosen_pilot: None }
    }

    pub fn population(k: usize) -> Vec<Self> {
        (0..k).map(Self::new).collect()
    }

    /// Starts a fresh episode.
    pub fn reset(&mut self) {
        self.lifecycle = Lifecycle::Inactive;
        self.attempts = 0;
        self.chosen_pilot = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// Exact total contending gain.
    #[default]
    Genie,
    /// Exact total plus Gaussian error that shrinks with array size.
    Noisy,
}

impl std::str::FromStr for EstimatorMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genie" => Ok(Self::Genie),
            "noisy" => Ok(Self::Noisy),
            other => Err(ConfigError::Invalid(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub delta: f64,
    pub estimator: EstimatorMode,
    pub noise_scale: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self { delta: -300.0, estimator: EstimatorMode::Genie, noise_scale: 1.0 }
    }
}

/// Per-SA resolution parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SicConfig {
    /// Residual interference after one SIC step.
    pub varpi: f64,
    /// Noise power, watts.
    pub sigma2: f64,
    /// Use the multiplicative strong-user denominator exactly as typeset.
    pub literal_eq3: bool,
    /// Optional decode check: an admitted user whose best per-SA SINR falls
    /// below this value is rejected. Disabled by default.
    pub decode_threshold: Option<f64>,
}

impl Default for SicConfig {
    fn default() -> Self {
        Self { varpi: 0.1, sigma2: 1.0, literal_eq3: false, decode_threshold: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    /// Three or more retransmitters share a subarray (NVR-XL).
    ThreePlusOverlap,
    /// Visibility regions overlap with another retransmitter (SUCRe-XL), or
    /// the user sees no subarray at all.
    OverlapUnresolvable,
    DecodeFail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmittedUser {
    pub user: usize,
    /// `(subarray, SINR)` for every SA visible to the user.
    pub sinr: Vec<(usize, f64)>,
}

/// Resolution record for one pilot in one RA block.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContentionOutcome {
    pub pilot: usize,
    pub contenders: Vec<usize>,
    pub retransmitters: Vec<usize>,
    pub admitted: Vec<AdmittedUser>,
    pub failed: Vec<(usize, FailureReason)>,
}

impl ContentionOutcome {
    pub fn admitted_ids(&self) -> Vec<usize> {
        self.admitted.iter().map(|a| a.user).collect()
    }

    /// Contenders that chose to stay silent in step 3.
    pub fn withdrawn(&self) -> Vec<usize> {
        self.contenders.iter().copied().filter(|u| !self.retransmitters.contains(u)).collect()
    }

    pub fn with_contenders(mut self, contenders: &[usize]) -> Self {
        self.contenders = contenders.to_vec();
        self
    }
}

/// Step I: every inactive user attempts with probability `p_a`, every
/// backlogged user with `p_na`; attempting users pick a pilot uniformly.
///
/// Two uniforms are consumed per user per call whatever the user's state,
/// so runs that diverge in state stay aligned on the random stream.
pub fn step1_select_pilots<R: Rng + ?Sized>(
    states: &mut [RaUserState],
    pool: PilotPool,
    p_a: f64,
    p_na: f64,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut per_pilot = vec![Vec::new(); pool.len()];
    for st in states.iter_mut() {
        let coin: f64 = rng.random();
        let pilot = rng.random_range(0..pool.len());
        let p = match st.lifecycle {
            Lifecycle::Inactive => p_a,
            Lifecycle::Backlogged => p_na,
            _ => continue,
        };
        if coin < p {
            st.lifecycle = Lifecycle::Contending;
            st.chosen_pilot = Some(pilot);
            per_pilot[pilot].push(st.id);
        }
    }
    per_pilot
}

/// Gains and constants shared by every decision in one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockContext<'a> {
    pub fading: &'a FadingMap,
    pub visibility: &'a VisibilityMap,
    /// `sum_{b in V_k} beta_k^(b)` per user, see [`visible_sums`].
    pub visible_sum: &'a [f64],
    pub tau: usize,
    pub subarray_size: usize,
    pub sigma2: f64,
}

impl BlockContext<'_> {
    /// Same value as [`crate::scenario::effective_uplink_gain`], from the cached sums.
    pub fn uplink_gain(&self, k: usize) -> f64 {
        self.fading.rho(k) * self.tau as f64 * self.visible_sum[k]
    }
}

/// Per-user visible gain sums; computed once per scenario.
pub fn visible_sums(fading: &FadingMap, vis: &VisibilityMap) -> Vec<f64> {
    (0..fading.users()).map(|k| visible_gain_sum(k, fading, vis)).collect()
}

/// Step II: user `k`'s estimate of the total gain on its pilot.
pub fn estimate_alpha<R: Rng + ?Sized>(
    k: usize,
    contenders: &[usize],
    ctx: &BlockContext<'_>,
    cfg: &DecisionConfig,
    rng: &mut R,
) -> f64 {
    debug_assert!(contenders.contains(&k));
    let alpha: f64 = contenders.iter().map(|&i| ctx.uplink_gain(i)).sum();
    perturb_alpha(alpha, k, ctx, cfg, rng)
}

fn perturb_alpha<R: Rng + ?Sized>(
    alpha: f64,
    k: usize,
    ctx: &BlockContext<'_>,
    cfg: &DecisionConfig,
    rng: &mut R,
) -> f64 {
    match cfg.estimator {
        EstimatorMode::Genie => alpha,
        EstimatorMode::Noisy => {
            let seen = ctx.visibility.visible_count(k).max(1);
            let std = cfg.noise_scale * ctx.sigma2 / ((ctx.subarray_size * seen) as f64).sqrt();
            let eta: f64 = StandardNormal.sample(rng);
            (alpha + std * eta).max(0.0)
        }
    }
}

/// Bias added to the retransmission threshold:
/// `delta / (sqrt(M_b) * sum_{b in V_k} beta_k^(b))`.
pub fn bias_term(delta: f64, subarray_size: usize, sum_beta_visible: f64) -> f64 {
    assert!(subarray_size > 0, "M_b must be positive");
    assert!(sum_beta_visible > 0.0, "bias is undefined without a visible subarray");
    delta / ((subarray_size as f64).sqrt() * sum_beta_visible)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Retransmit,
    Withdraw,
}

/// Step III rule: retransmit iff `lhs > alpha_hat / 2 + epsilon`.
pub fn decide_retransmit(lhs: f64, alpha_hat: f64, epsilon: f64) -> Decision {
    if lhs > alpha_hat / 2.0 + epsilon {
        Decision::Retransmit
    } else {
        Decision::Withdraw
    }
}

/// Runs step III's decision for every contender on one pilot and returns the
/// retransmitters in contender order. Users with no visible SA withdraw.
pub fn decide_pilot<R: Rng + ?Sized>(
    contenders: &[usize],
    ctx: &BlockContext<'_>,
    cfg: &DecisionConfig,
    rng: &mut R,
) -> Vec<usize> {
    let alpha: f64 = contenders.iter().map(|&i| ctx.uplink_gain(i)).sum();
    contenders
        .iter()
        .copied()
        .filter(|&k| {
            let sum_beta = ctx.visible_sum[k];
            if sum_beta <= 0.0 {
                return false;
            }
            let lhs = ctx.uplink_gain(k);
            let alpha_hat = perturb_alpha(alpha, k, ctx, cfg, rng);
            let eps = bias_term(cfg.delta, ctx.subarray_size, sum_beta);
            decide_retransmit(lhs, alpha_hat, eps) == Decision::Retransmit
        })
        .collect()
}

/// SUCRe-XL resolution: a retransmitter is admitted only if its visibility
/// region is non-empty and disjoint from every other retransmitter's.
pub fn resolve_sucre_xl(pilot: usize, retransmitters: &[usize], vis: &VisibilityMap) -> ContentionOutcome {
    let mut out = ContentionOutcome {
        pilot,
        contenders: retransmitters.to_vec(),
        retransmitters: retransmitters.to_vec(),
        ..Default::default()
    };
    let occupancy = occupancy(retransmitters, vis);
    for &u in retransmitters {
        let row = vis.row(u);
        let alone = row.iter().zip(&occupancy).all(|(seen, n)| !seen || *n == 1);
        if vis.visible_count(u) > 0 && alone {
            out.admitted.push(AdmittedUser { user: u, sinr: Vec::new() });
        } else {
            out.failed.push((u, FailureReason::OverlapUnresolvable));
        }
    }
    out
}

/// Per-SA SINRs for two users sharing a pilot on one SA, strong user first.
///
/// The strong user is decoded treating the weak one as interference; the
/// weak user is decoded after cancellation with residual factor `varpi`.
/// With `literal` set, the strong user's denominator is the product
/// `rho2*beta2*sigma2` instead of the sum.
pub fn sic_sinr(
    rho1: f64,
    beta1: f64,
    rho2: f64,
    beta2: f64,
    varpi: f64,
    sigma2: f64,
    literal: bool,
) -> (f64, f64) {
    let p1 = rho1 * beta1;
    let p2 = rho2 * beta2;
    assert!(p1 >= p2, "SIC order violated: strong user power {p1} < weak user power {p2}");
    assert!(sigma2 > 0.0, "noise power must be positive");
    assert!((0.0..=1.0).contains(&varpi), "varpi must lie in [0, 1]");
    let g1 = if literal { p1 / (p2 * sigma2) } else { p1 / (p2 + sigma2) };
    let g2 = p2 / (varpi * p1 + sigma2);
    (g1, g2)
}

/// NVR-XL resolution.
///
/// Any subarray seen by three or more retransmitters fails every user it
/// touches. Everyone else (with a non-empty VR) is admitted. SINRs are
/// computed per visible SA: alone in the SA gives `rho*beta/sigma2`, two
/// users in the SA go through one SIC step ordered by received power
/// (lower id first on ties).
pub fn resolve_nvr_xl(
    pilot: usize,
    retransmitters: &[usize],
    vis: &VisibilityMap,
    fading: &FadingMap,
    sic: &SicConfig,
) -> ContentionOutcome {
    let mut out = ContentionOutcome {
        pilot,
        contenders: retransmitters.to_vec(),
        retransmitters: retransmitters.to_vec(),
        ..Default::default()
    };
    let b_count = vis.subarrays();
    let mut sharing: Vec<Vec<usize>> = vec![Vec::new(); b_count];
    for &u in retransmitters {
        for b in vis.visible_set(u) {
            sharing[b].push(u);
        }
    }

    for &u in retransmitters {
        if vis.visible_count(u) == 0 {
            out.failed.push((u, FailureReason::OverlapUnresolvable));
            continue;
        }
        if vis.visible_set(u).any(|b| sharing[b].len() >= 3) {
            out.failed.push((u, FailureReason::ThreePlusOverlap));
            continue;
        }
        let sinr: Vec<(usize, f64)> = vis
            .visible_set(u)
            .map(|b| (b, sa_sinr(u, &sharing[b], b, fading, sic)))
            .collect();
        let decodable = match sic.decode_threshold {
            Some(th) => sinr.iter().any(|&(_, g)| g >= th),
            None => true,
        };
        if decodable {
            out.admitted.push(AdmittedUser { user: u, sinr });
        } else {
            out.failed.push((u, FailureReason::DecodeFail));
        }
    }
    out
}

fn sa_sinr(u: usize, sharing: &[usize], b: usize, fading: &FadingMap, sic: &SicConfig) -> f64 {
    match *sharing {
        [_] => fading.received(u, b) / sic.sigma2,
        [a, c] => {
            let (pa, pc) = (fading.received(a, b), fading.received(c, b));
            let a_first = pa > pc || (pa == pc && a < c);
            let (strong, weak) = if a_first { (a, c) } else { (c, a) };
            let (g1, g2) = sic_sinr(
                fading.rho(strong),
                fading.beta(strong, b),
                fading.rho(weak),
                fading.beta(weak, b),
                sic.varpi,
                sic.sigma2,
                sic.literal_eq3,
            );
            if u == strong {
                g1
            } else {
                g2
            }
        }
        _ => unreachable!("SINR requested for a subarray with {} users", sharing.len()),
    }
}

fn occupancy(users: &[usize], vis: &VisibilityMap) -> Vec<usize> {
    let mut n = vec![0usize; vis.subarrays()];
    for &u in users {
        for b in vis.visible_set(u) {
            n[b] += 1;
        }
    }
    n
}

/// Step IV: admitted users are accepted, every other contender is backlogged
/// with one more attempt on record, or dropped once it reaches
/// [`MAX_ATTEMPTS`].
pub fn step4_admit(outcomes: &[ContentionOutcome], states: &mut [RaUserState]) {
    for out in outcomes {
        for a in &out.admitted {
            let st = &mut states[a.user];
            st.attempts += 1;
            st.lifecycle = Lifecycle::Accepted;
            st.chosen_pilot = None;
        }
        for &u in &out.contenders {
            let st = &mut states[u];
            if st.lifecycle != Lifecycle::Contending {
                continue;
            }
            st.attempts += 1;
            st.chosen_pilot = None;
            st.lifecycle =
                if st.attempts >= MAX_ATTEMPTS { Lifecycle::Dropped } else { Lifecycle::Backlogged };
        }
    }
}

/// Result of running steps I-IV once.
#[derive(Debug, Clone, Default)]
pub struct BlockReport {
    pub outcomes: Vec<ContentionOutcome>,
    /// Number of users that transmitted a pilot in step I.
    pub attempting: usize,
}

impl BlockReport {
    pub fn admitted(&self) -> usize {
        self.outcomes.iter().map(|o| o.admitted.len()).sum()
    }
}

/// All random streams one block consumes.
pub struct BlockRngs<'a, R: Rng + ?Sized, N: Rng + ?Sized> {
    pub access: &'a mut R,
    pub estimator: &'a mut N,
}

/// One full RA block.
#[allow(clippy::too_many_arguments)]
pub fn run_ra_block<R: Rng + ?Sized, N: Rng + ?Sized>(
    protocol: Protocol,
    states: &mut [RaUserState],
    pool: PilotPool,
    p_a: f64,
    p_na: f64,
    ctx: &BlockContext<'_>,
    decision: &DecisionConfig,
    sic: &SicConfig,
    rngs: BlockRngs<'_, R, N>,
) -> BlockReport {
    let per_pilot = step1_select_pilots(states, pool, p_a, p_na, rngs.access);
    let attempting = per_pilot.iter().map(Vec::len).sum();
    let outcomes: Vec<ContentionOutcome> = per_pilot
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(t, contenders)| {
            let retx = decide_pilot(contenders, ctx, decision, rngs.estimator);
            let out = match protocol {
                Protocol::SucreXl => resolve_sucre_xl(t, &retx, ctx.visibility),
                Protocol::NvrXl => resolve_nvr_xl(t, &retx, ctx.visibility, ctx.fading, sic),
            };
            out.with_contenders(contenders)
        })
        .collect();
    step4_admit(&outcomes, states);
    BlockReport { outcomes, attempting }
}
