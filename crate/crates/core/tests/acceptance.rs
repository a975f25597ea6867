//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion names as arguments to run a subset.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rnhedge::dlv::{calls_from_dlv, dlv_from_calls, static_arbitrage_report, ArbKind, CallGrid, DlvSurface};
use rnhedge::hedge::{check_corollary_dh2, check_prop_dh1, DhWorld, PortfolioPayoff};
use rnhedge::market::{CostSpec, PathSet};
use rnhedge::measure::{binomial_oracle, entropy_utility, train_statarb, StatArbConfig};
use rnhedge::pipeline::{Check, ExperimentConfig, Pipeline, BAND_CSV, METRICS_CSV, WEIGHTS_HIST_CSV};
use rnhedge::policy::{evaluate, loss_and_grad, Arch, Batch, Dataset, FeatureSpec, PolicyNet, Projection, TrainConfig};
use rnhedge::rng;
use rnhedge::simulators::{binomial_tree, bs_call_price, simulate_bs, simulate_bs_with_options, BinomialParams, BsParams};

type Verdict = (bool, String);

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_config(name: &str) -> (Vec<Check>, tempfile::TempDir) {
    let cfg = ExperimentConfig::from_file(&configs().join(name)).expect("shipped config parses");
    let dir = tempfile::tempdir().unwrap();
    let out = Pipeline::new(cfg, Some(dir.path())).unwrap().run().expect("pipeline runs");
    (out.checks, dir)
}

fn describe(checks: &[Check], names: &[&str]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in names {
        match checks.iter().find(|c| c.name == *n) {
            Some(c) => {
                pass &= c.pass;
                parts.push(format!("{}={:.4e}{}", c.name, c.value, if c.pass { "" } else { "(!)" }));
            }
            None => {
                pass = false;
                parts.push(format!("{n} missing"));
            }
        }
    }
    (pass, parts.join(" "))
}

/// (u, d, p, gamma, lambda); none admits classical arbitrage.
const SWEEP: [(f64, f64, f64, f64, f64); 20] = [
    (0.1, -0.1, 0.6, 0.0, 1.0),
    (0.1, -0.1, 0.6, 0.01, 1.0),
    (0.1, -0.1, 0.6, 0.03, 1.0),
    (0.2, -0.1, 0.5, 0.0, 1.0),
    (0.2, -0.1, 0.5, 0.02, 2.0),
    (0.05, -0.05, 0.45, 0.0, 1.0),
    (0.05, -0.05, 0.45, 0.002, 1.0),
    (0.05, -0.05, 0.45, 0.01, 1.0),
    (0.1, -0.2, 0.7, 0.0, 0.5),
    (0.1, -0.2, 0.7, 0.005, 0.5),
    (0.15, -0.1, 0.4, 0.0, 1.0),
    (0.15, -0.1, 0.45, 0.0, 3.0),
    (0.3, -0.2, 0.5, 0.01, 1.0),
    (0.3, -0.2, 0.5, 0.06, 1.0),
    (0.08, -0.12, 0.65, 0.0, 2.0),
    (0.08, -0.12, 0.65, 0.004, 2.0),
    (0.1, -0.1, 0.55, 0.0, 5.0),
    (0.1, -0.1, 0.55, 0.005, 5.0),
    (0.12, -0.08, 0.35, 0.0, 1.0),
    (0.12, -0.08, 0.35, 0.02, 1.0),
];

fn binomial_sweep() -> Verdict {
    let t0 = Instant::now();
    let (mut worst_a, mut worst_g, mut worst_band) = (0.0f64, 0.0f64, 0.0f64);
    let mut n_band = 0;
    for (k, &(u, d, p, gamma, lambda)) in SWEEP.iter().enumerate() {
        let params = BinomialParams { u, d, p, gamma };
        let oracle = binomial_oracle(&params, lambda).unwrap();
        assert!(!oracle.classical_arbitrage);
        let tree = binomial_tree(&params).unwrap();
        let cfg = StatArbConfig {
            arch: Arch::Feedforward { hidden: vec![4] },
            train: TrainConfig {
                learning_rate: 0.05,
                lr_final: Some(1e-5),
                batch_size: 2,
                epochs: 3000,
                seed: k as u64,
                risk_aversion: lambda,
                ..TrainConfig::default()
            },
            ..StatArbConfig::default()
        };
        let cost = CostSpec::uniform(1, 1, gamma);
        let res = train_statarb(&Dataset::new(&tree), None, &cost, &cfg, |_, _| Ok(())).unwrap();
        let a = res.net.forward(&tree).unwrap().data[0];
        let g = entropy_utility(&res.train_gains, lambda, tree.probs.as_deref()).max(0.0);
        worst_a = worst_a.max((a - oracle.a_star).abs());
        worst_g = worst_g.max((g - oracle.g).abs());
        if (u * p + d * (1.0 - p)).abs() <= gamma {
            n_band += 1;
            worst_band = worst_band.max(a.abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_a <= 1e-3 && worst_g <= 1e-4 && worst_band <= 1e-3 && secs <= 120.0;
    (
        pass,
        format!(
            "20 points: max |a-a*| {worst_a:.2e} (<=1e-3), max |g-g*| {worst_g:.2e} (<=1e-4), {n_band} in-band max |a| {worst_band:.2e}, {secs:.1}s (<=120s)"
        ),
    )
}

fn bs_memm() -> Verdict {
    let t0 = Instant::now();
    let (checks, _dir) = run_config("bs_memm.cfg");
    let (pass, s) = describe(
        &checks,
        &["density_mse_ratio", "density_mse_trend", "rel_entropy", "option_prices_in_se"],
    );
    let secs = t0.elapsed().as_secs_f64();
    (pass && secs <= 1800.0, format!("{s}, {secs:.0}s"))
}

fn implied_vs_realized() -> Verdict {
    let (checks, _dir) = run_config("bs_options.cfg");
    describe(
        &checks,
        &[
            "variance_gap_closure",
            "low_weight_paths_below_median_vol",
            "high_weight_paths_above_median_vol",
        ],
    )
}

fn var_flattening() -> Verdict {
    let (checks, _dir) = run_config("var.cfg");
    describe(&checks, &["band_test", "retrain_g"])
}

fn random_surface(r: &mut rng::Stream) -> DlvSurface {
    let m = 2 + rng::index(r, 5);
    let n = 3 + rng::index(r, 10);
    let mut tau = 0.0;
    let maturities: Vec<f64> = (0..m)
        .map(|_| {
            tau += 0.02 + 0.3 * rng::uniform(r);
            tau
        })
        .collect();
    let mut k = 0.5 + 0.3 * rng::uniform(r);
    let strikes: Vec<f64> = (0..n)
        .map(|_| {
            let v = k;
            k += 0.02 + 0.1 * rng::uniform(r);
            v
        })
        .collect();
    let values = (0..m * n).map(|_| 0.05 + 0.5 * rng::uniform(r)).collect();
    DlvSurface::new(maturities, strikes, values).unwrap()
}

fn bs_grid(maturities: &[f64], strikes: &[f64], sigma: f64) -> CallGrid {
    let prices = maturities
        .iter()
        .flat_map(|&t| strikes.iter().map(move |&k| k * bs_call_price(1.0 / k, sigma, t)))
        .collect();
    CallGrid::new(maturities.to_vec(), strikes.to_vec(), prices).unwrap()
}

fn dlv_codec() -> Verdict {
    let mut r = rng::stream(2024, 0);
    let mut worst_rt: f64 = 0.0;
    for _ in 0..50 {
        let calls = calls_from_dlv(&random_surface(&mut r)).unwrap();
        assert!(static_arbitrage_report(&calls).is_empty());
        let back = calls_from_dlv(&dlv_from_calls(&calls)).unwrap();
        for (a, b) in calls.prices.iter().zip(&back.prices) {
            worst_rt = worst_rt.max((a - b).abs());
        }
    }

    // fine grid: daily maturities, 1% strikes
    let maturities: Vec<f64> = (1..=60).map(|d| d as f64 / 252.0).collect();
    let strikes: Vec<f64> = (50..=150).map(|k| k as f64 / 100.0).collect();
    let flat = DlvSurface::flat(maturities.clone(), strikes.clone(), 0.15).unwrap();
    let calls = calls_from_dlv(&flat).unwrap();
    let atm = strikes.iter().position(|k| (k - 1.0).abs() < 1e-12).unwrap();
    let mut worst_atm: f64 = 0.0;
    for (j, &t) in maturities.iter().enumerate().skip(19) {
        let err = (calls.price(j, atm) - bs_call_price(1.0, 0.15, t)).abs();
        worst_atm = worst_atm.max(err);
    }

    // injected violations on a BS grid, one at a time
    let mats = [20.0 / 252.0, 40.0 / 252.0, 60.0 / 252.0];
    let ks: Vec<f64> = (0..7).map(|i| 0.85 + 0.05 * i as f64).collect();
    let clean = bs_grid(&mats, &ks, 0.15);
    let mut exact = 0;
    let mut injected = 0;
    for i in 1..6 {
        let mut g = clean.clone();
        g.prices[2 * 7 + i] += 0.01;
        injected += 1;
        let rep = static_arbitrage_report(&g);
        if rep.len() == 1 && (rep[0].maturity_index, rep[0].strike_index, rep[0].kind) == (2, i, ArbKind::Butterfly) {
            exact += 1;
        }
    }
    for j in 1..3 {
        let mut g = clean.clone();
        g.prices[j * 7 + 3] = g.prices[(j - 1) * 7 + 3] - 1e-5;
        injected += 1;
        let rep = static_arbitrage_report(&g);
        if rep.len() == 1 && (rep[0].maturity_index, rep[0].strike_index, rep[0].kind) == (j, 3, ArbKind::Calendar) {
            exact += 1;
        }
    }
    let pass = worst_rt <= 1e-10 && worst_atm <= 1e-3 && exact == injected;
    (
        pass,
        format!(
            "round trip max err {worst_rt:.2e} (<=1e-10), flat ATM max err {:.2} bp (<=10), {exact}/{injected} injected violations flagged at their cell",
            worst_atm * 1e4
        ),
    )
}

fn gradient_fd() -> Verdict {
    let ps = simulate_bs_with_options(&BsParams {
        mu: 0.05,
        sigma_realized: 0.15,
        sigma_implied: Some(0.2),
        n_steps: 4,
        dt: 1.0 / 252.0,
        n_paths: 16,
        seed: 3,
        option_tenor_steps: None,
    })
    .unwrap();
    let idx: Vec<usize> = (0..ps.n_paths).collect();
    let w = vec![1.0 / ps.n_paths as f64; ps.n_paths];
    let batch = || Batch { paths: &ps, idx: &idx, weights: &w, offset: None };
    let cost = CostSpec::uniform(4, 3, 0.002);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    let mut r = rng::stream(77, 0);
    let mut tries = 0;
    while points < 100 && tries < 1000 {
        tries += 1;
        let arch = if points % 2 == 0 {
            Arch::Feedforward { hidden: vec![5, 4] }
        } else {
            Arch::Recurrent { hidden: vec![4] }
        };
        let mut net = PolicyNet::new(arch, &ps, FeatureSpec { mids: true, state: false }, Projection::None, 1).unwrap();
        for v in &mut net.params {
            *v = 0.5 * rng::normal(&mut r);
        }
        // stay away from the cost kink at zero trades
        let a = net.forward(&ps).unwrap();
        if a.data.iter().any(|x| x.abs() < 1e-3) {
            continue;
        }
        points += 1;
        let lambda = 0.5 + 2.0 * rng::uniform(&mut r);
        let out = loss_and_grad(&net, batch(), &cost, lambda).unwrap();
        for k in 0..net.params.len() {
            let h = 1e-5 * net.params[k].abs().max(1e-2);
            let mut plus = net.clone();
            plus.params[k] += h;
            let mut minus = net.clone();
            minus.params[k] -= h;
            let fd = (evaluate(&plus, batch(), &cost, lambda).unwrap().0
                - evaluate(&minus, batch(), &cost, lambda).unwrap().0)
                / (2.0 * h);
            let an = out.grad[k];
            worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-3));
        }
    }
    (points == 100 && worst <= 1e-5, format!("{points} points, max relative error {worst:.2e} (<=1e-5)"))
}

fn utility_axioms() -> Verdict {
    let mut r = rng::stream(99, 0);
    let mut chain_ok = 0;
    let mut worst_cash: f64 = 0.0;
    for _ in 0..1000 {
        let n = 2 + rng::index(&mut r, 60);
        let scale = 0.01 + 2.0 * rng::uniform(&mut r);
        let x: Vec<f64> = (0..n).map(|_| scale * rng::normal(&mut r)).collect();
        let lam = 0.01 + 5.0 * rng::uniform(&mut r);
        let lam2 = lam * (1.5 + 5.0 * rng::uniform(&mut r));
        let u = [
            entropy_utility(&x, 0.0, None),
            entropy_utility(&x, lam, None),
            entropy_utility(&x, lam2, None),
            entropy_utility(&x, f64::INFINITY, None),
        ];
        if u.windows(2).all(|w| w[0] >= w[1]) {
            chain_ok += 1;
        }
        let c = 10.0 * rng::normal(&mut r);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        for l in [0.0, lam, lam2, f64::INFINITY] {
            let d = entropy_utility(&shifted, l, None) - entropy_utility(&x, l, None) - c;
            worst_cash = worst_cash.max(d.abs());
        }
    }
    (
        chain_ok == 1000 && worst_cash <= 1e-12,
        format!("ordering chain held on {chain_ok}/1000, max cash-invariance error {worst_cash:.2e} (<=1e-12)"),
    )
}

fn dh_world(n: usize, seed: u64) -> PathSet {
    simulate_bs(&BsParams {
        mu: 0.05,
        sigma_realized: 0.15,
        sigma_implied: None,
        n_steps: 30,
        dt: 1.0 / 252.0,
        n_paths: n,
        seed,
        option_tenor_steps: None,
    })
    .unwrap()
}

fn deep_hedging() -> Verdict {
    let (train, eval) = (dh_world(20_000, 41), dh_world(20_000, 42));
    let payoff = PortfolioPayoff::atm_call(-1.0);
    let world = DhWorld { train: &train, eval: &eval, payoff: &payoff };
    let cfg = StatArbConfig {
        arch: Arch::Feedforward { hidden: vec![32, 32] },
        train: TrainConfig {
            learning_rate: 1e-2,
            lr_final: Some(1e-4),
            batch_size: 256,
            epochs: 8,
            seed: 6,
            risk_aversion: 1.0,
            ..TrainConfig::default()
        },
        ..StatArbConfig::default()
    };
    let zero = CostSpec::zero(30, 1);
    let prop = CostSpec::uniform(30, 1, 0.001);
    let eq = check_prop_dh1(&world, &zero, &cfg).unwrap();
    let ineq = check_prop_dh1(&world, &prop, &cfg).unwrap();
    let cor = check_corollary_dh2(&world, &zero, &cfg).unwrap();
    (
        eq.pass && ineq.pass && cor.pass,
        format!(
            "zero cost: g*(Z) {:.3e} vs g(Z)-g {:.3e} (se {:.1e}){}; 10bp: g*(Z) {:.3e} <= {:.3e} + 3 se{}; dh2: {:.3e} vs {:.3e} (se {:.1e}){}",
            eq.g_star_z,
            eq.g_z - eq.g_0,
            eq.se,
            if eq.pass { "" } else { "(!)" },
            ineq.g_star_z,
            ineq.g_z - ineq.g_0,
            if ineq.pass { "" } else { "(!)" },
            cor.u_composed,
            cor.u_direct,
            cor.se,
            if cor.pass { "" } else { "(!)" },
        ),
    )
}

const DETERMINISM_CFG: &str = r#"
seed = 11
[world]
type = "bs"
mu = 0.05
sigma = 0.15
n_steps = 30
n_train = 5000
n_val = 5000
[policy]
arch = { type = "feedforward", hidden = [16, 16] }
[train]
learning_rate = 1e-3
epochs = 2
eval_every = 10
[verify]
gamma = 0.0
"#;

fn determinism() -> Verdict {
    let files = [METRICS_CSV, BAND_CSV, WEIGHTS_HIST_CSV];
    let run = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml(DETERMINISM_CFG).unwrap();
        rnhedge::with_threads(threads, || Pipeline::new(cfg, Some(dir.path())).unwrap().run().unwrap()).unwrap();
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
        bytes
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    let same_rerun = a == b;
    let same_threads = a == c;
    (
        same_rerun && same_threads && !a[0].is_empty(),
        format!("rerun identical: {same_rerun}, 1 vs 4 threads identical: {same_threads}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("binomial_oracle_sweep", binomial_sweep),
        ("bs_memm_reproduction", bs_memm),
        ("implied_vs_realized_reweighting", implied_vs_realized),
        ("var_drift_flattening", var_flattening),
        ("dlv_codec", dlv_codec),
        ("gradient_correctness", gradient_fd),
        ("utility_axioms", utility_axioms),
        ("deep_hedging_consistency", deep_hedging),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let (pass, detail) = f();
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name} [{:.0}s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
