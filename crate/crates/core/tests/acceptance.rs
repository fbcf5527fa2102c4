//! Acceptance suite. One test per criterion; each prints a single
//! `[acceptance] C<n> ... PASS|FAIL` line before asserting.
//!
//! Monte Carlo criteria run at 500 trials x 100 RA blocks with the default
//! parameters (`P_b = 0.5`, `delta = -300` unless the criterion sweeps it).

mod common;

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xlra::cli::{run_cli, ResultRow};
use xlra::engine::{draw_scenario, trial_rng, Runner, Stream, SweepSpec, TrialConfig};
use xlra::engine::SweepGrid;
use xlra::metrics::{sum_rate_nvr, sum_rate_sucre, Estimate};
use xlra::protocol::{
    bias_term, resolve_nvr_xl, resolve_sucre_xl, sic_sinr, step1_select_pilots, AdmittedUser,
    ContentionOutcome, PilotPool, RaUserState, SicConfig,
};
use xlra::scenario::{large_scale_fading, FadingMap, VisibilityMap};
use xlra::Protocol;

use common::{for_each_map, Instance};

const TRIALS: usize = 500;

/// Written straight to the process stderr so the line shows up even when the
/// test harness captures output.
fn report(id: &str, what: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let line = format!("[acceptance] {id} {what}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if b == 0.0 {
        a == 0.0
    } else {
        ((a - b) / b).abs() <= tol
    }
}

fn base() -> TrialConfig {
    TrialConfig { n_trials: TRIALS, ..TrialConfig::default() }
}

fn est(e: Option<Estimate>) -> Estimate {
    e.expect("metric defined")
}

/// Load grid shared by criteria 2-4: both protocols, K in 2000..5000, B = 10.
fn dominance_grid() -> &'static Vec<ResultRow> {
    static ROWS: OnceLock<Vec<ResultRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let spec = SweepSpec {
            base: TrialConfig { subarrays: 10, ..base() },
            grid: SweepGrid {
                protocol: Some(vec![Protocol::SucreXl, Protocol::NvrXl]),
                users: Some(vec![2000, 3000, 4000, 5000]),
                ..Default::default()
            },
        };
        Runner::from_env().run_sweep(&spec).expect("sweep runs")
    })
}

fn pairs(rows: &[ResultRow]) -> Vec<(&ResultRow, &ResultRow)> {
    let (sucre, nvr): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.protocol == Protocol::SucreXl);
    sucre.into_iter().zip(nvr).inspect(|(s, n)| assert_eq!(s.users, n.users)).collect()
}

#[test]
fn c1_delta_star_band() {
    let runner = Runner::from_env();
    let trials = TRIALS.to_string();
    let args = [
        "xlra", "tune-delta", "--deltas", "-500:0:25", "--B", "10", "--K", "3000", "--trials", &trials,
    ];
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli(args, &runner, &mut out, &mut err);
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
    let text = String::from_utf8(out).unwrap();
    let star: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("delta_star="))
        .expect("delta_star line")
        .parse()
        .expect("numeric delta_star");
    let pass = (-400.0..=-200.0).contains(&star);
    report("C1", "delta* band", pass, &format!("delta*={star}, want [-400, -200]"));
    if !pass {
        println!("{text}");
    }
    assert!(pass, "delta* = {star} outside [-400, -200]");
}

#[test]
fn c2_attempt_dominance() {
    let mut strict = 0;
    let mut all_le = true;
    let mut detail = Vec::new();
    for (s, n) in pairs(dominance_grid()) {
        let (s, n, k) = (est(s.avg_attempts), est(n.avg_attempts), n.users);
        all_le &= n.mean <= s.mean;
        if n.upper() < s.lower() {
            strict += 1;
        }
        detail.push(format!("K={k}: nvr {:.4}±{:.4} vs sucre {:.4}±{:.4}", n.mean, n.ci95, s.mean, s.ci95));
    }
    let pass = all_le && strict >= 3;
    report("C2", "attempt-count dominance", pass, &format!("{}; strict={strict}/4", detail.join("; ")));
    assert!(pass);
}

#[test]
fn c3_failed_access_dominance() {
    let mut pass = true;
    let mut detail = Vec::new();
    for (s, n) in pairs(dominance_grid()) {
        let (s, n) = (est(s.failed_prob), est(n.failed_prob));
        pass &= n.mean <= s.mean;
        detail.push(format!("{:.4} <= {:.4}", n.mean, s.mean));
    }
    report("C3", "failed-access dominance", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c4_accepted_dominance() {
    let mut pass = true;
    let mut detail = Vec::new();
    for (s, n) in pairs(dominance_grid()) {
        let (s, n) = (est(s.norm_accepted), est(n.norm_accepted));
        pass &= n.mean >= s.mean;
        detail.push(format!("{:.5} >= {:.5}", n.mean, s.mean));
    }
    report("C4", "accepted-UE dominance", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c5_sum_rate_growth_in_b() {
    let spec = SweepSpec {
        base: TrialConfig { users: 3000, ..base() },
        grid: SweepGrid {
            protocol: Some(vec![Protocol::SucreXl, Protocol::NvrXl]),
            subarrays: Some(vec![1, 2, 5, 10]),
            ..Default::default()
        },
    };
    let rows = Runner::from_env().run_sweep(&spec).unwrap();
    let rate = |p: Protocol, b: usize| {
        est(rows.iter().find(|r| r.protocol == p && r.subarrays == b).unwrap().sum_rate)
    };
    let nvr: Vec<Estimate> = [1, 2, 5, 10].iter().map(|&b| rate(Protocol::NvrXl, b)).collect();
    let steps_ok = nvr.windows(2).all(|w| w[1].mean >= w[0].mean || w[1].overlaps(&w[0]));
    let ends_ok = nvr[3].mean > nvr[0].mean;
    let sucre10 = rate(Protocol::SucreXl, 10);
    let beats = nvr[3].lower() > sucre10.upper();
    let pass = steps_ok && ends_ok && beats;
    let curve: Vec<String> = nvr.iter().map(|e| format!("{:.3e}±{:.1e}", e.mean, e.ci95)).collect();
    report(
        "C5",
        "sum-rate growth in B",
        pass,
        &format!("nvr B=1,2,5,10: {}; sucre B=10: {:.3e}±{:.1e}", curve.join(", "), sucre10.mean, sucre10.ci95),
    );
    assert!(pass);
}

#[test]
fn c6_protocol_oracle_equivalence() {
    let sic = SicConfig::default();
    let mut checked = 0u64;
    let mut mismatches = 0u64;

    let mut check = |inst: &Instance, tau: usize| {
        let vis = inst.visibility();
        let fading = FadingMap::from_rows(
            (0..inst.masks.len()).map(|u| vec![1e-7 * (u + 1) as f64; inst.subarrays]).collect(),
            vec![1.0; inst.masks.len()],
        );
        let mut sucre = Vec::new();
        let mut nvr = Vec::new();
        for t in 0..tau {
            let retx = inst.retransmitters(t);
            sucre.extend(resolve_sucre_xl(t, &retx, &vis).admitted_ids());
            nvr.extend(resolve_nvr_xl(t, &retx, &vis, &fading, &sic).admitted_ids());
        }
        sucre.sort_unstable();
        nvr.sort_unstable();
        checked += 1;
        if sucre != inst.sucre_admitted() || nvr != inst.nvr_admitted() {
            mismatches += 1;
        }
    };

    // One pilot, everyone retransmits: every subset pattern of a larger
    // population is one of these smaller instances.
    for k in 1..=6 {
        for b in 1..=3 {
            for_each_map(k, b, |masks| {
                let inst = Instance {
                    subarrays: b,
                    masks: masks.to_vec(),
                    pilots: vec![0; k],
                    retransmit: vec![true; k],
                };
                check(&inst, 1);
            });
        }
    }
    // Two pilots: all pilot assignments and retransmission patterns.
    for k in 1..=4 {
        for b in 1..=3 {
            for_each_map(k, b, |masks| {
                for assign in 0u32..(1 << k) {
                    for retx in 0u32..(1 << k) {
                        let inst = Instance {
                            subarrays: b,
                            masks: masks.to_vec(),
                            pilots: (0..k).map(|u| (assign >> u & 1) as usize).collect(),
                            retransmit: (0..k).map(|u| retx >> u & 1 == 1).collect(),
                        };
                        check(&inst, 2);
                    }
                }
            });
        }
    }
    let pass = mismatches == 0;
    report("C6", "protocol oracle equivalence", pass, &format!("{checked} instances, {mismatches} mismatches"));
    assert!(pass);
}

#[test]
fn c7_formula_suite() {
    let tol = 1e-9;
    let mut results: Vec<(&str, bool)> = Vec::new();

    let f1 = large_scale_fading(1.0, 0.0, 3.8, -34.53);
    results.push(("eq1 r=1", rel_close(f1, 10f64.powf(-3.453), tol) && rel_close(f1, 3.524e-4, 1e-3)));
    let f10 = large_scale_fading(10.0, 0.0, 3.8, -34.53);
    results.push(("eq1 r=10", rel_close(f10, 10f64.powf(-7.253), tol) && rel_close(f10, 5.584e-8, 1e-3)));
    results.push(("eq1 +10dB", rel_close(large_scale_fading(1.0, 10.0, 3.8, -34.53), 10.0 * f1, tol)));

    results.push(("eq2 delta=0", bias_term(0.0, 50, 1e-6) == 0.0));
    let eps = bias_term(-300.0, 50, 1e-6);
    results.push(("eq2 delta=-300", rel_close(eps, -300.0 / (50f64.sqrt() * 1e-6), tol) && rel_close(eps, -4.2426e7, 1e-4)));

    let (g1, g2) = sic_sinr(1.0, 2e-7, 1.0, 1e-7, 0.1, 1.0, false);
    results.push(("eq3 gamma1", rel_close(g1, 2e-7 / (1e-7 + 1.0), tol)));
    results.push(("eq3 gamma2", rel_close(g2, 1e-7 / (0.1 * 2e-7 + 1.0), tol)));
    let (d1, d2) = sic_sinr(1.0, 2e-7, 1.0, 0.0, 0.7, 1.0, false);
    results.push(("eq3 beta2=0", d1 == 2e-7 && d2 == 0.0));
    let (_, p2) = sic_sinr(1.0, 2e-7, 1.0, 1e-7, 0.0, 1.0, false);
    results.push(("eq3 varpi=0", p2 == 1e-7));

    let pair = ContentionOutcome {
        admitted: vec![
            AdmittedUser { user: 0, sinr: vec![(0, g1)] },
            AdmittedUser { user: 1, sinr: vec![(0, g2)] },
        ],
        ..Default::default()
    };
    let r4 = sum_rate_nvr(&[pair]);
    let oracle4 = (g1.ln_1p() + g2.ln_1p()) / std::f64::consts::LN_2;
    results.push(("eq4 pair", rel_close(r4, oracle4, tol) && rel_close(r4, 4.33e-7, 1e-3)));
    let unit = ContentionOutcome {
        admitted: vec![AdmittedUser { user: 0, sinr: vec![(0, 1.0)] }],
        ..Default::default()
    };
    results.push(("eq4 unit", sum_rate_nvr(&[unit.clone()]) == 1.0));

    let fading = FadingMap::from_rows(vec![vec![1.0, 1.0, 0.5]], vec![1.0]);
    let vis = VisibilityMap::from_rows(vec![vec![true, true, false]], 0.5);
    results.push(("eq5 two SAs", sum_rate_sucre(&[unit], &fading, &vis, 1.0) == 2.0));
    results.push(("eq5 none", sum_rate_sucre(&[], &fading, &vis, 1.0) == 0.0));

    let failed: Vec<&str> = results.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let pass = failed.is_empty();
    report("C7", "formula unit suite", pass, &format!("{} checks, failed: {failed:?}", results.len()));
    assert!(pass);
}

#[test]
fn c8_determinism_and_parallel_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.toml");
    std::fs::write(
        &spec_path,
        "[base]\nn_trials = 24\nn_blocks = 40\nseed = 11\n\n[grid]\nprotocol = [\"sucre-xl\", \"nvr-xl\"]\nK = [500, 1500]\nB = [5, 10]\n",
    )
    .unwrap();
    let run = |workers: usize| {
        let mut out = Vec::new();
        let code = run_cli(
            ["xlra", "sweep", spec_path.to_str().unwrap()],
            &Runner::new(workers),
            &mut out,
            &mut std::io::sink(),
        );
        assert_eq!(code, 0);
        out
    };
    let reference = run(1);
    let same: Vec<bool> = [1, 4, 8].iter().map(|&w| run(w) == reference).collect();
    let pass = same.iter().all(|&s| s);
    report("C8", "determinism & parallel invariance", pass, &format!("workers 1/4/8 identical: {same:?}"));
    assert!(pass);
}

#[test]
fn c9_statistical_model_checks() {
    let mut ok = true;
    let mut detail = Vec::new();

    let k = 5000usize;
    for p_b in [0.5, 0.2] {
        let cfg = TrialConfig { users: k, subarrays: 10, p_b, ..TrialConfig::default() };
        let sc = draw_scenario(&cfg, 0).unwrap();
        let sigma = (p_b * (1.0 - p_b) / k as f64).sqrt();
        let worst = (0..10)
            .map(|b| {
                let frac = (0..k).filter(|&u| sc.visibility.is_visible(u, b)).count() as f64 / k as f64;
                (frac - p_b).abs() / sigma
            })
            .fold(0.0, f64::max);
        ok &= worst <= 3.0;
        detail.push(format!("P_b={p_b}: worst marginal {worst:.2} sigma"));
    }

    let (p_a, tau, trials) = (0.01, 10usize, 500usize);
    let pool = PilotPool::new(tau).unwrap();
    let mut total = 0usize;
    for t in 0..trials as u64 {
        let mut states = RaUserState::population(k);
        let sets = step1_select_pilots(&mut states, pool, p_a, 0.5, &mut trial_rng(5, t, Stream::Access));
        total += sets.iter().map(Vec::len).sum::<usize>();
    }
    let samples = (trials * tau) as f64;
    let mean = total as f64 / samples;
    let p = p_a / tau as f64;
    let expect = k as f64 * p;
    let se = (k as f64 * p * (1.0 - p) / samples).sqrt();
    ok &= (mean - expect).abs() <= 3.0 * se;
    detail.push(format!("E|S_t| = {mean:.4} vs {expect} (3se = {:.4})", 3.0 * se));

    // An independent stream family gives the same answer.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut states = RaUserState::population(k);
    let n: usize = step1_select_pilots(&mut states, pool, p_a, 0.5, &mut rng).iter().map(Vec::len).sum();
    ok &= (n as f64 - k as f64 * p_a).abs() <= 3.0 * (k as f64 * p_a * (1.0 - p_a)).sqrt();

    report("C9", "statistical model checks", ok, &detail.join("; "));
    assert!(ok);
}
