//! Acceptance suite: one PASS/FAIL line per criterion with its measurements
//! and wall time. Exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use safescout::classifier::classify_estimates;
use safescout::dp_oracle::{greedy_gap, stage_costs, HorizonSpec};
use safescout::environment::NINE_CELL_TRUE_P;
use safescout::ldp::{chernoff_objective, chernoff_theta_star, rate_function};
use safescout::learner::Termination;
use safescout::markov::{
    build_joint, build_reduced, joint_index, joint_state, retrieve_staying_policy, sample_index,
    simulate_joint, stationary, verify_lift, PolicyTable, SquareMatrix,
};
use safescout::oracle::{substream, StreamPurpose};
use safescout_cli::config::{resolve_environment, ExperimentConfig};
use safescout_cli::experiment::run_experiment;

const SEED: u64 = 42;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let elapsed = t.elapsed();
    let in_time = elapsed <= budget;
    let pass = o.pass && in_time;
    println!(
        "{} criterion {id} {name}: {} [{:.3} s / budget {:.3} s]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    pass
}

// 1 ------------------------------------------------------------------------

const TABLE1_FINAL: [f64; 9] = [0.91, 0.85, 0.625, 0.80, 0.525, 0.7625, 0.575, 0.7375, 0.475];

fn table1_classification() -> Outcome {
    let res = classify_estimates(&TABLE1_FINAL).expect("nine cells");
    let safe: Vec<usize> = res.safe_set.iter().map(|k| k + 1).collect();
    let ok_t = (res.c_threshold - 0.1936).abs() <= 5e-4;
    let ok_s = safe == [1, 2, 4, 6, 8];
    Outcome {
        pass: ok_t && ok_s,
        detail: format!(
            "c_T = {:.6} (target 0.1936 +- 5e-4), safe set {safe:?}",
            res.c_threshold
        ),
    }
}

// 2 and 6 -----------------------------------------------------------------

fn preset_batch() -> safescout_cli::experiment::Experiment {
    let (cfg, base) = ExperimentConfig::load(None).expect("preset");
    let env = resolve_environment(&cfg.environment, &base).expect("preset env");
    run_experiment(&cfg, &env, SEED, 50, None).expect("batch runs")
}

fn desk_scale_experiment() -> Outcome {
    let exp = preset_batch();
    let agg = &exp.report.aggregate;
    let all_empty = agg.terminated_empty == 50;
    let pass = all_empty && agg.within_tolerance >= 0.9 && agg.exact_safe_set_rate >= 0.8;
    Outcome {
        pass,
        detail: format!(
            "{}/50 active_set_empty; |p_hat - p| <= 0.08 in {:.3} of pairs (need >= 0.90); \
             exact safe set in {:.2} of runs (need >= 0.80); error q50 {:.4} q90 {:.4}",
            agg.terminated_empty,
            agg.within_tolerance,
            agg.exact_safe_set_rate,
            agg.error_quantiles.q50,
            agg.error_quantiles.q90
        ),
    }
}

fn unsafe_visits_finite() -> Outcome {
    let exp = preset_batch();
    let reference = classify_estimates(&NINE_CELL_TRUE_P).expect("nine cells");
    let mut bad = Vec::new();
    let mut max_visits = 0;
    for (s, log) in exp.report.runs.iter().zip(&exp.logs) {
        let n = log.iterations();
        // The log holds exactly the steps 1..=n; nothing can follow termination.
        let contiguous = log
            .steps
            .iter()
            .enumerate()
            .all(|(i, st)| st.iteration == i as u64 + 1);
        let unsafe_count = log
            .steps
            .iter()
            .filter(|st| !reference.safe_set.contains(&st.cell))
            .count() as u64;
        let after = log
            .steps
            .iter()
            .filter(|st| st.iteration > n && !reference.safe_set.contains(&st.cell))
            .count();
        max_visits = max_visits.max(unsafe_count);
        let ok = s.termination == Termination::ActiveSetEmpty
            && contiguous
            && after == 0
            && unsafe_count == s.unsafe_visits
            && unsafe_count <= n
            && s.last_unsafe_visit.is_none_or(|t| t <= n);
        if !ok {
            bad.push(s.replication);
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: format!(
            "50 runs, max unsafe-cell visits {max_visits}, runs violating the bound: {bad:?}"
        ),
    }
}

// 3 ------------------------------------------------------------------------

/// `ln P(Bin(n, p) >= k)` by log-sum-exp over the exact pmf.
fn log_binomial_tail(n: u64, p: f64, k: u64) -> f64 {
    let ln_fact: Vec<f64> = (0..=n)
        .scan(0.0, |acc, i| {
            if i > 0 {
                *acc += (i as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    let terms: Vec<f64> = (k..=n)
        .map(|j| {
            ln_fact[n as usize] - ln_fact[j as usize] - ln_fact[(n - j) as usize]
                + j as f64 * p.ln()
                + (n - j) as f64 * (1.0 - p).ln()
        })
        .collect();
    let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
}

fn rate_function_suite() -> Outcome {
    let grid: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
    let zero_err = grid
        .iter()
        .map(|&e| rate_function(e, e).unwrap().abs())
        .fold(0.0, f64::max);
    let sym_err = grid
        .iter()
        .map(|&p| (rate_function(0.5, p).unwrap() - rate_function(0.5, 1.0 - p).unwrap()).abs())
        .fold(0.0, f64::max);

    // theta* against a two-level grid search of the Chernoff objective.
    let axis: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
    let pairs: Vec<(f64, f64)> = axis
        .iter()
        .flat_map(|&e| axis.iter().map(move |&p| (e, p)))
        .collect();
    let theta_err = pairs
        .par_iter()
        .map(|&(e, p)| {
            let argmax = |lo: f64, hi: f64, step: f64| {
                let n = ((hi - lo) / step).round() as usize;
                (0..=n)
                    .map(|i| lo + i as f64 * step)
                    .max_by(|a, b| {
                        chernoff_objective(*a, e, p).total_cmp(&chernoff_objective(*b, e, p))
                    })
                    .unwrap()
            };
            let coarse = argmax(-15.0, 15.0, 1e-2);
            let fine = argmax(coarse - 1e-2, coarse + 1e-2, 1e-5);
            (fine - chernoff_theta_star(e, p).unwrap()).abs()
        })
        .reduce(|| 0.0, f64::max);

    // Empirical Chernoff bound at (p, eps) = (0.5, 0.75), n = 200.
    let (p, eps, n, trials) = (0.5, 0.75, 200u64, 100_000u64);
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(SEED, t, StreamPurpose::Diagnostic);
            let s = (0..n).filter(|_| rng.gen_bool(p)).count() as f64;
            u64::from(s >= n as f64 * eps)
        })
        .sum();
    let bound = -rate_function(eps, p).unwrap() + 0.05;
    let empirical = if hits == 0 {
        f64::NEG_INFINITY
    } else {
        (hits as f64 / trials as f64).ln() / n as f64
    };
    let exact = log_binomial_tail(n, p, (n as f64 * eps).ceil() as u64) / n as f64;

    let pass = zero_err <= 1e-12
        && sym_err <= 1e-12
        && theta_err <= 1e-3
        && empirical <= bound
        && exact <= bound;
    Outcome {
        pass,
        detail: format!(
            "max|I(e,e)| {zero_err:.1e}, max symmetry error {sym_err:.1e}, max|theta* - argmax| {theta_err:.1e}; \
             {hits}/{trials} exceedances, empirical (1/n)ln P {empirical:.4} and exact {exact:.4} vs bound {bound:.4}"
        ),
    }
}

// 4 ------------------------------------------------------------------------

fn random_stochastic<R: Rng>(m: usize, rng: &mut R) -> SquareMatrix<f64> {
    let rows = (0..m)
        .map(|_| {
            let r: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|x| x / s).collect()
        })
        .collect();
    SquareMatrix::from_rows(rows).unwrap()
}

struct MarkovCase {
    residual: f64,
    lift: f64,
    tv: f64,
}

fn markov_case(i: u64) -> MarkovCase {
    let mut rng = substream(SEED, i, StreamPurpose::Auxiliary);
    let m = rng.gen_range(1..=6);
    let policy = PolicyTable::new(
        random_stochastic(m, &mut rng),
        random_stochastic(m, &mut rng),
    )
    .unwrap();
    let p: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..0.95)).collect();
    let joint = build_joint(&policy, &p).unwrap();
    let reduced = build_reduced(&policy, &p).unwrap();
    let pj = stationary(&joint.matrix, 1e-12).unwrap();
    let pr = stationary(&reduced.matrix, 1e-12).unwrap();
    let residual = joint
        .matrix
        .stationary_residual(&pj)
        .max(reduced.matrix.stationary_residual(&pr));
    let lift = verify_lift(&policy, &p, 1e-10).unwrap().max_deviation;

    let start = joint_state(m, sample_index(&pj, &mut rng));
    let traj = simulate_joint(&policy, &p, start, 1_000_000, &mut rng);
    let mut occ = vec![0.0; 2 * m];
    for &(k, y) in &traj {
        occ[joint_index(m, k, y)] += 1.0;
    }
    let tv = occ
        .iter()
        .zip(&pj)
        .map(|(o, q)| (o / traj.len() as f64 - q).abs())
        .sum::<f64>()
        / 2.0;
    MarkovCase { residual, lift, tv }
}

fn markov_suite() -> Outcome {
    let cases: Vec<MarkovCase> = (0..100).into_par_iter().map(markov_case).collect();
    let residual = cases.iter().map(|c| c.residual).fold(0.0, f64::max);
    let lift = cases.iter().map(|c| c.lift).fold(0.0, f64::max);
    let tv = cases.iter().map(|c| c.tv).fold(0.0, f64::max);

    let identity_err = (1..100)
        .map(|i| {
            let p = i as f64 / 100.0;
            let s = retrieve_staying_policy(p).unwrap();
            (p * s.after_one + (1.0 - p) * s.after_zero - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let s9 = retrieve_staying_policy(0.9_f64).unwrap();
    let flags = !s9.valid && (s9.after_one - 1.0976).abs() < 1e-4;

    let pass = residual <= 1e-10 && lift <= 1e-10 && tv <= 0.01 && identity_err <= 1e-15 && flags;
    Outcome {
        pass,
        detail: format!(
            "100 chains: max residual {residual:.1e}, max lift deviation {lift:.1e}, max TV {tv:.4}; \
             staying identity error {identity_err:.1e}, p = 0.9 gives a = {:.4} valid = {}",
            s9.after_one, s9.valid
        ),
    }
}

// 5 ------------------------------------------------------------------------

fn dp_suite() -> Outcome {
    let mut identity_ok = true;
    for n in 1..=10usize {
        for code in 0..(1u32 << n) {
            let y: Vec<bool> = (0..n).map(|i| code >> i & 1 == 1).collect();
            let s = y.iter().filter(|&&b| b).count() as i64;
            identity_ok &= stage_costs(&y).unwrap().iter().sum::<i64>() == n as i64 * s - s * s;
        }
    }
    let mut rng = substream(SEED, 0, StreamPurpose::Auxiliary);
    let instances: Vec<HorizonSpec<f64>> = (0..20)
        .map(|_| HorizonSpec::uniform_start(rng.gen_range(1..=5), vec![rng.gen(), rng.gen()]))
        .collect();
    let mut violations = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for (i, spec) in instances.iter().enumerate() {
        let rep = greedy_gap(spec, 10_000, SEED + i as u64).unwrap();
        let slack = rep.optimal_cost - (rep.greedy_mean_cost + 3.0 * rep.greedy_std_error);
        worst = worst.max(slack);
        if slack > 0.0 {
            violations.push(i);
        }
    }
    Outcome {
        pass: identity_ok && violations.is_empty(),
        detail: format!(
            "stage-cost identity over all sequences N <= 10: {identity_ok}; 20 instances, \
             max(optimum - greedy mean - 3 se) = {worst:.2e}, violations {violations:?}"
        ),
    }
}

// 7 ------------------------------------------------------------------------

fn run_cli(args: &[&str], dir: &Path) -> (Vec<u8>, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_safescout"))
        .args(args)
        .current_dir(dir)
        .env_remove("SAFESCOUT_SEED")
        .output()
        .expect("binary runs");
    (out.stdout, out.status.code().unwrap_or(-1))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Outcome {
    let inputs = tempfile::tempdir().unwrap();
    let w = |name: &str, body: &str| std::fs::write(inputs.path().join(name), body).unwrap();
    let rows: String = TABLE1_FINAL
        .iter()
        .enumerate()
        .map(|(k, p)| format!("{},{},{}\n", k + 1, p * (1.0 - p), p))
        .collect();
    w("table1.csv", &format!("cell,c,p\n{rows}"));
    w("policy.csv", "cell,y,to_1,to_2,to_3\n1,1,0.2,0.5,0.3\n1,0,0.6,0.2,0.2\n2,1,0.1,0.1,0.8\n2,0,0.3,0.3,0.4\n3,1,0.5,0.25,0.25\n3,0,0.2,0.7,0.1\n");
    w("p.csv", "cell,p\n1,0.9\n2,0.4\n3,0.65\n");
    w("dp.toml", "horizon = 6\np = [0.9, 0.6]\nruns = 5000\n");
    let abs = |n: &str| inputs.path().join(n).display().to_string();
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "simulate",
            vec![
                "simulate".into(),
                "--replications".into(),
                "5".into(),
                "--seed".into(),
                "7".into(),
                "--out".into(),
                "o".into(),
            ],
        ),
        (
            "classify",
            vec![
                "classify".into(),
                abs("table1.csv"),
                "--out".into(),
                "o/classify.json".into(),
            ],
        ),
        (
            "rate-curve",
            vec![
                "rate-curve".into(),
                "--points".into(),
                "99".into(),
                "--out".into(),
                "o/curve.csv".into(),
            ],
        ),
        (
            "stationary",
            vec![
                "stationary".into(),
                abs("policy.csv"),
                abs("p.csv"),
                "--out".into(),
                "o/stationary.json".into(),
            ],
        ),
        (
            "dp-compare",
            vec![
                "dp-compare".into(),
                "--config".into(),
                abs("dp.toml"),
                "--seed".into(),
                "3".into(),
                "--out".into(),
                "o/dp.json".into(),
            ],
        ),
    ];
    let mut differing = Vec::new();
    for (name, args) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (sa, ca) = run_cli(&args, a.path());
        let (sb, cb) = run_cli(&args, b.path());
        let fa = snapshot(a.path());
        if ca != 0 || cb != 0 || sa != sb || fa != snapshot(b.path()) || fa.is_empty() {
            differing.push(*name);
        }
    }
    Outcome {
        pass: differing.is_empty(),
        detail: format!(
            "5 subcommands run twice with fixed seeds; differing or failing: {differing:?}"
        ),
    }
}

fn main() {
    let results = [
        check(
            1,
            "table 1 classification",
            Duration::from_millis(10),
            table1_classification,
        ),
        check(
            2,
            "nine-cell experiment, 50 replications",
            Duration::from_secs(30),
            desk_scale_experiment,
        ),
        check(
            3,
            "rate-function suite",
            Duration::from_secs(10),
            rate_function_suite,
        ),
        check(4, "markov suite", Duration::from_secs(30), markov_suite),
        check(5, "dp/relaxation suite", Duration::from_secs(60), dp_suite),
        check(
            6,
            "finite unsafe-cell visits",
            Duration::from_secs(30),
            unsafe_visits_finite,
        ),
        check(7, "cli determinism", Duration::from_secs(60), determinism),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
