//! Acceptance suite.
//!
//! Runs every release criterion end to end, prints one `PASS`/`FAIL` line per
//! criterion, and exits nonzero if any criterion fails. Thresholds live in
//! [`tol`] so they can be audited in one place; none of them are tuned to the
//! observed results.
//!
//! The suite needs no language model. The two training experiments dominate
//! the runtime; each fans its seeds out over the rayon pool.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use coalition_cli::commands::read_seed_table;
use coalition_core::stats::DEFAULT_RESAMPLES;
use coalition_core::{
    bootstrap_ci, brute_force_min_ncut, cut_statistics, discretize, estimate_mi_matrix, fiedler_partition,
    mi_discrete, paired_t_test, planted_block, planted_split, plugin_entropy, BinStrategy, HiddenStateDataset,
    MiEstimationConfig, MiMatrix, SampleKind,
};
use coalition_sim::policy::{log_softmax, Mlp, HIDDEN_DIM, N_ACTIONS};
use coalition_sim::{
    run_hierarchical, run_negative_control, run_seeds, run_swap, HierarchyConfig, PolicyAgent, Step, WindowSpec,
};

/// Acceptance thresholds.
mod tol {
    use std::time::Duration;

    pub const PLANTED_BUDGET: Duration = Duration::from_secs(1);

    pub const NCUT_MATRICES: usize = 500;
    pub const NCUT_MAX_N: usize = 8;
    /// Slack for comparing two Ncut values computed along different paths.
    pub const NCUT_SLACK: f64 = 1e-12;
    pub const NOISY_SEEDS: u64 = 100;
    pub const NOISY_MIN_MATCH: f64 = 0.90;
    pub const NOISY_NOISE: f64 = 0.05;
    pub const NCUT_BUDGET: Duration = Duration::from_secs(10);

    pub const SELF_INFO: f64 = 1e-12;
    pub const GAUSSIAN_SEEDS: u64 = 20;
    pub const MI_BUDGET: Duration = Duration::from_secs(5);

    pub const EXPERIMENT_SEEDS: [u64; 5] = [42, 123, 789, 2024, 7];
    pub const COORDINATION: f64 = 0.95;
    pub const MIN_SUB_PAIR_SEEDS: usize = 4;
    pub const MIN_LEVEL1_SEEDS: usize = 3;

    pub const MIN_CROSSED_SEEDS: usize = 5;
    pub const MIN_RECOVERED_SEEDS: usize = 4;
    pub const REWARD_REL: f64 = 0.05;

    pub const AGREEMENT: f64 = 0.95;
    pub const R_INDEPENDENT: (f64, f64) = (0.9, 1.1);
    pub const R_GAP: f64 = 0.2;
    pub const NEURAL_ARI_MAX: f64 = 0.5;

    pub const T_STAT: (f64, f64) = (3.97, 0.01);
    pub const P_VALUE: (f64, f64) = (0.017, 0.005);
    pub const CI: [(f64, f64); 2] = [(0.938, 0.01), (0.949, 0.01)];

    pub const GRAD_CONFIGS: usize = 20;
    pub const GRAD_REL: f64 = 1e-3;
    pub const GRAD_EPS: f64 = 1e-5;
}

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { name, pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.3}s", d.as_secs_f64())
}

fn planted_recovery() -> Verdict {
    let start = Instant::now();
    let mut total = 0;
    let mut misses = Vec::new();
    for m in 2..=6 {
        for a in [0.5, 1.0] {
            for b in [0.0, a / 4.0, a / 2.0 - 0.05] {
                total += 1;
                let s = fiedler_partition(&planted_block(m, a, b).unwrap()).unwrap();
                if !s.partition.same_split(&planted_split(m)) {
                    misses.push(format!("m={m} a={a} b={b}"));
                }
            }
        }
    }
    let took = start.elapsed();
    verdict(
        "planted-partition recovery",
        misses.is_empty() && took < tol::PLANTED_BUDGET,
        format!("{}/{total} exact, {} (misses: {misses:?})", total - misses.len(), secs(took)),
    )
}

fn ncut(m: &MiMatrix, p: &coalition_core::Partition) -> f64 {
    cut_statistics(m, p).unwrap().ncut
}

fn ncut_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut violations = 0;
    for _ in 0..tol::NCUT_MATRICES {
        let n = rng.random_range(2..=tol::NCUT_MAX_N);
        let m = MiMatrix::from_fn(n, |_, _| rng.random::<f64>()).unwrap();
        let spectral = fiedler_partition(&m).unwrap().partition;
        let optimum = brute_force_min_ncut(&m).unwrap();
        if ncut(&m, &spectral) < ncut(&m, &optimum) - tol::NCUT_SLACK {
            violations += 1;
        }
    }

    let mut matches = 0;
    for seed in 0..tol::NOISY_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = planted_block(4, 1.0, 0.2).unwrap();
        let m = MiMatrix::from_fn(8, |i, j| {
            (clean.get(i, j) + rng.random_range(-tol::NOISY_NOISE..=tol::NOISY_NOISE)).max(0.0)
        })
        .unwrap();
        let spectral = fiedler_partition(&m).unwrap().partition;
        let optimum = brute_force_min_ncut(&m).unwrap();
        if spectral.same_split(&optimum) {
            matches += 1;
        }
    }
    let rate = matches as f64 / tol::NOISY_SEEDS as f64;
    let took = start.elapsed();
    verdict(
        "ncut oracle bound",
        violations == 0 && rate >= tol::NOISY_MIN_MATCH && took < tol::NCUT_BUDGET,
        format!(
            "{violations} bound violations in {} random matrices; noisy planted optimum match {:.0}%; {}",
            tol::NCUT_MATRICES,
            rate * 100.0,
            secs(took)
        ),
    )
}

fn gaussian_pair(rng: &mut ChaCha8Rng, rho: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let c = (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            let z: f64 = StandardNormal.sample(rng);
            (x, rho * x + c * z)
        })
        .unzip()
}

fn mi_sanity() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let mut self_err: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(1..12);
        let x: Vec<usize> = (0..rng.random_range(2..400)).map(|_| rng.random_range(0..k)).collect();
        self_err = self_err.max((mi_discrete(&x, &x).unwrap() - plugin_entropy(&x)).abs());
    }

    let rhos = [0.0, 0.3, 0.6, 0.9];
    let mut monotone = 0;
    for seed in 0..tol::GAUSSIAN_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mis: Vec<f64> = rhos
            .iter()
            .enumerate()
            .map(|(k, &rho)| {
                let signed = if k % 2 == 0 { rho } else { -rho };
                let (x, y) = gaussian_pair(&mut rng, signed, 2000);
                let bx = discretize(&x, 8, BinStrategy::Uniform).unwrap();
                let by = discretize(&y, 8, BinStrategy::Uniform).unwrap();
                mi_discrete(&bx, &by).unwrap()
            })
            .collect();
        if mis.windows(2).all(|w| w[1] > w[0]) {
            monotone += 1;
        }
    }

    let mut matrix_ok = true;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..8);
        let states = (0..n)
            .map(|_| Array2::from_shape_fn((150, 16), |_| StandardNormal.sample(&mut rng)))
            .map(|a: Array2<f64>| a.mapv(|v| v as f32))
            .collect();
        let ids = (0..n).map(|i| format!("a{i}")).collect();
        let ds = HiddenStateDataset::new(ids, states, SampleKind::Episode).unwrap();
        for strategy in [BinStrategy::Uniform, BinStrategy::Quantile] {
            let cfg = MiEstimationConfig { n_bins: 8, strategy, n_pairs: 8, rng_seed: seed };
            let m = estimate_mi_matrix(&ds, &cfg).unwrap();
            let v = m.values();
            matrix_ok &= (0..n).all(|i| v[[i, i]] == 0.0 && (0..n).all(|j| v[[i, j]] == v[[j, i]]));
        }
    }
    let took = start.elapsed();
    verdict(
        "MI estimator sanity",
        self_err <= tol::SELF_INFO
            && monotone == tol::GAUSSIAN_SEEDS as usize
            && matrix_ok
            && took < tol::MI_BUDGET,
        format!(
            "self-information error {self_err:.1e}; monotone in |rho| {monotone}/{}; symmetric zero-diagonal {matrix_ok}; {}",
            tol::GAUSSIAN_SEEDS,
            secs(took)
        ),
    )
}

fn hierarchical() -> Verdict {
    let start = Instant::now();
    let cfg = HierarchyConfig::default();
    let runs = run_seeds(&tol::EXPERIMENT_SEEDS, |s| run_hierarchical(s, &cfg)).unwrap();
    let mut per_seed = Vec::new();
    let (mut converged, mut sub_pairs, mut level1) = (0, 0, 0);
    for run in &runs {
        let g = run.record.metrics["group_coord_at_5000"];
        let s = run.record.metrics["sub_pair_coord_at_5000"];
        converged += usize::from(g > tol::COORDINATION && s > tol::COORDINATION);
        sub_pairs += usize::from(run.recovery.all_sub_pairs());
        level1 += usize::from(run.recovery.level1_clean);
        per_seed.push(format!(
            "{}: coord {g:.3}/{s:.3} sub-pairs {}/{} level1 {}",
            run.seed, run.recovery.sub_pairs_recovered, run.recovery.n_sub_pairs, run.recovery.level1_clean
        ));
    }
    let n = runs.len();
    verdict(
        "hierarchical experiment",
        converged == n && sub_pairs >= tol::MIN_SUB_PAIR_SEEDS && level1 >= tol::MIN_LEVEL1_SEEDS,
        format!(
            "converged by 5000 in {converged}/{n}; sub-pairs 6/6 in {sub_pairs}/{n}; level-1 clean in {level1}/{n}; {} [{}]",
            secs(start.elapsed()),
            per_seed.join("; ")
        ),
    )
}

fn dynamic_swap() -> Verdict {
    let start = Instant::now();
    let cfg = HierarchyConfig::swap_default();
    let runs = run_seeds(&tol::EXPERIMENT_SEEDS, |s| run_swap(s, &cfg, WindowSpec::default())).unwrap();
    let (mut crossed, mut recovered) = (0, 0);
    let (mut pre, mut post) = (0.0, 0.0);
    let mut per_seed = Vec::new();
    for run in &runs {
        let m = &run.record.metrics;
        crossed += usize::from(m["agent2_crossed"] == 1.0 && m["agent4_crossed"] == 1.0);
        recovered += usize::from(run.recovery.full());
        pre += m["pre_swap_reward"];
        post += m["final_reward"];
        per_seed.push(format!(
            "{}: crossed {}/{} recovered {} reward {:+.1}%",
            run.seed,
            m["agent2_crossed"],
            m["agent4_crossed"],
            run.recovery.full(),
            100.0 * m["reward_rel_change"]
        ));
    }
    let n = runs.len();
    let rel = (post - pre) / pre;
    verdict(
        "dynamic swap",
        crossed >= tol::MIN_CROSSED_SEEDS && recovered >= tol::MIN_RECOVERED_SEEDS && rel.abs() <= tol::REWARD_REL,
        format!(
            "curves crossed in {crossed}/{n}; new structure recovered in {recovered}/{n}; final vs pre-swap reward {:+.2}%; {} [{}]",
            100.0 * rel,
            secs(start.elapsed()),
            per_seed.join("; ")
        ),
    )
}

fn negative_control() -> Verdict {
    let start = Instant::now();
    let runs = run_seeds(&tol::EXPERIMENT_SEEDS, run_negative_control).unwrap();
    let mut failures = Vec::new();
    let mut per_seed = Vec::new();
    for run in &runs {
        let r_ind = run.spectral_independent.ratio_r.unwrap_or(f64::NAN);
        let r_sh = run.spectral_shared.ratio_r.unwrap_or(f64::NAN);
        let checks = [
            ("agreement", run.within_agreement >= tol::AGREEMENT),
            ("R range", (tol::R_INDEPENDENT.0..=tol::R_INDEPENDENT.1).contains(&r_ind)),
            ("isolation", !run.isolates_group_independent),
            ("R gap", r_sh - r_ind >= tol::R_GAP),
            ("k-means ARI", run.baselines.kmeans_ari == 1.0),
            ("spectral ARI", run.baselines.spectral_ari == 1.0),
            ("neural ARI", run.neural_spectral_ari < tol::NEURAL_ARI_MAX),
        ];
        for (what, ok) in checks {
            if !ok {
                failures.push(format!("{} {what}", run.seed));
            }
        }
        per_seed.push(format!(
            "{}: agree {:.3} R {r_ind:.3}/{r_sh:.3} gap {:.3} ARI {:.2}/{:.2}/{:.3}",
            run.seed,
            run.within_agreement,
            r_sh - r_ind,
            run.baselines.kmeans_ari,
            run.baselines.spectral_ari,
            run.neural_spectral_ari
        ));
    }
    verdict(
        "negative control",
        failures.is_empty(),
        format!("failed checks: {failures:?}; {} [{}]", secs(start.elapsed()), per_seed.join("; ")),
    )
}

fn within(v: f64, (target, slack): (f64, f64)) -> bool {
    (v - target).abs() <= slack
}

fn statistics_fixture() -> Verdict {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/separation_by_seed.csv");
    let (_, records) = read_seed_table(&path).unwrap();
    let column = |k: &str| records.iter().map(|r| r.metrics[k]).collect::<Vec<f64>>();
    let (modular, integrated) = (column("modular"), column("integrated"));
    let t = paired_t_test(&modular, &integrated).unwrap();
    let ci = bootstrap_ci(&modular, DEFAULT_RESAMPLES, 0.95, 0).unwrap();
    verdict(
        "statistics kit",
        within(t.t, tol::T_STAT) && within(t.p, tol::P_VALUE) && within(ci.lo, tol::CI[0]) && within(ci.hi, tol::CI[1]),
        format!("t = {:.4}, p = {:.4}, CI [{:.4}, {:.4}]", t.t, t.p, ci.lo, ci.hi),
    )
}

fn episode_loss(net: &Mlp, steps: &[(Vec<f64>, usize)], rewards: &[f64], baseline: f64) -> f64 {
    steps
        .iter()
        .zip(rewards)
        .map(|((x, a), r)| {
            let (logits, _) = net.trace(x).unwrap();
            -(r - baseline) * log_softmax(&logits)[*a]
        })
        .sum()
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..tol::GRAD_CONFIGS {
        let input_dim = rng.random_range(4..=24);
        let net = Mlp::init(input_dim, HIDDEN_DIM, N_ACTIONS, &mut rng);
        let agent = PolicyAgent::from_net(net.clone(), 3e-4, ChaCha8Rng::seed_from_u64(0));
        let n_steps = rng.random_range(1..=4);
        let raw: Vec<(Vec<f64>, usize)> = (0..n_steps)
            .map(|_| {
                let x = (0..input_dim).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect();
                (x, rng.random_range(0..N_ACTIONS))
            })
            .collect();
        let rewards: Vec<f64> = (0..n_steps).map(|_| rng.random_range(-1.0..2.0)).collect();
        let baseline = rng.random_range(-0.5..1.0);
        let steps: Vec<Step> =
            raw.iter().map(|(x, a)| Step { trace: net.trace(x).unwrap().1, action: *a }).collect();
        let grad = agent.reinforce_gradient(&steps, &rewards, baseline);
        for i in 0..grad.len() {
            let mut plus = net.clone();
            plus.params_mut()[i] += tol::GRAD_EPS;
            let mut minus = net.clone();
            minus.params_mut()[i] -= tol::GRAD_EPS;
            let fd = (episode_loss(&plus, &raw, &rewards, baseline) - episode_loss(&minus, &raw, &rewards, baseline))
                / (2.0 * tol::GRAD_EPS);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    verdict(
        "REINFORCE gradient check",
        worst < tol::GRAD_REL,
        format!("max relative error {worst:.2e} over {} configurations", tol::GRAD_CONFIGS),
    )
}

fn main() {
    let criteria: [fn() -> Verdict; 8] = [
        planted_recovery,
        ncut_oracle,
        mi_sanity,
        statistics_fixture,
        gradient_check,
        negative_control,
        hierarchical,
        dynamic_swap,
    ];
    let mut failed = 0;
    for c in criteria {
        let v = c();
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
