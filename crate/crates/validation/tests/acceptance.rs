//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the
//! process exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use pmvar::bounds::{minimize_sigma, r_alpw22, r_dpdk15, r_s_numeric};
use pmvar::diagnostics::{estimate_var_w, recommend_particles, Stability, DEFAULT_TARGET_VAR};
use pmvar::harness::experiments::beta_success_probs;
use pmvar::harness::{run_experiment, ExperimentConfig, ExperimentId};
use pmvar::kernels::{acceptance_prob, grid_transition_matrix};
use pmvar::rng::{chain_rng, sub_seed};
use pmvar::{
    ChainState, KernelKind, KernelSpec, LogVariance, NoiseModel, ProposalKernel, TargetModel,
};
use rand::Rng;

const SEED: u64 = 1;

type WProposal<'a> = &'a dyn Fn(usize, usize) -> f64;
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// --- independent oracles ---------------------------------------------------

/// erf by its Maclaurin series; accurate to rounding for |x| ≤ 2.
fn erf_series(x: f64) -> f64 {
    let (mut term, mut sum) = (x, x);
    for n in 1..200 {
        term *= -x * x / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn r_s_oracle(sigma: f64) -> f64 {
    let phi = 0.5 * (1.0 + erf_series(sigma / 2.0));
    2.0 * (sigma * sigma).exp() * phi
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn variance(xs: &[f64]) -> f64 {
    let (_, se) = mean_se(xs);
    se * se * xs.len() as f64
}

fn sigma_grid() -> Vec<f64> {
    (0..=36).map(|i| 0.2 + 0.05 * i as f64).collect()
}

fn read_rows(path: &Path) -> Vec<HashMap<String, String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    rd.records()
        .map(|r| {
            header
                .iter()
                .cloned()
                .zip(r.unwrap().iter().map(String::from))
                .collect()
        })
        .collect()
}

fn num(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("pmvar-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

// --- criteria ----------------------------------------------------------------

fn sigma_opt_table() -> Outcome {
    let expected = [
        (1.0, 0.83),
        (0.5, 0.88),
        (0.2, 0.91),
        (0.05, 0.92),
        (0.0, 0.93),
    ];
    let mut pass = true;
    let mut got = Vec::new();
    for (eps, want) in expected {
        let s = minimize_sigma(eps, 1e-8).unwrap();
        pass &= (s - want).abs() <= 0.01;
        got.push(format!("{s:.4}"));
    }
    outcome(pass, format!("sigma_opt = ({})", got.join(", ")))
}

fn closed_form_vs_quadrature() -> Outcome {
    let mut rng = chain_rng(SEED, 0);
    let mut worst: f64 = 0.0;
    for i in 1..=8 {
        let sigma = 0.25 * i as f64;
        let r = r_s_numeric(&NoiseModel::lognormal(sigma).unwrap(), 0, &mut rng).unwrap();
        let exact = r_s_oracle(sigma);
        worst = worst.max((r.value - exact).abs() / exact);
    }
    outcome(worst < 1e-6, format!("max relative gap {worst:.2e}"))
}

fn dpdk15_band() -> Outcome {
    let mut outside = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in sigma_grid() {
        let ratio = r_dpdk15(s, 1e-9).unwrap().value / r_s_oracle(s);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        if !(0.98..=1.02).contains(&ratio) {
            outside.push(format!("{s:.2}"));
        }
    }
    let detail = format!(
        "ratio range [{lo:.4}, {hi:.4}]; outside [0.98, 1.02] at sigma = {{{}}}",
        outside.join(", ")
    );
    outcome(outside.is_empty(), detail)
}

fn alpw22_dominance() -> Outcome {
    let mut worst = f64::INFINITY;
    for s in sigma_grid() {
        worst = worst.min(r_alpw22(s).unwrap().value / r_s_oracle(s));
    }
    outcome(worst >= 6.0, format!("min R_ALPW22 / R_S = {worst:.3}"))
}

fn pareto_log_variance() -> Outcome {
    let noise = NoiseModel::shifted_pareto(2.0).unwrap();
    let LogVariance::Value(v) = noise.log_noise_variance().unwrap() else {
        return outcome(false, "log variance not finite");
    };
    let mut rng = chain_rng(sub_seed(SEED, "acceptance/pareto-pairs"), 0);
    let logs: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let w1 = noise.sample(&[], &mut rng).unwrap();
            let w2 = noise.sample(&[], &mut rng).unwrap();
            (0.5 * (w1 + w2)).ln()
        })
        .collect();
    let pair = variance(&logs);
    let pass = (v - 2.29).abs() <= 0.01 && (pair - 1.14).abs() <= 0.02;
    outcome(
        pass,
        format!("Var(log W) = {v:.4}, Var(log mean of 2) = {pair:.4}"),
    )
}

fn tuning_estimator() -> Outcome {
    let sigma = 0.9_f64.sqrt();
    let noise = NoiseModel::lognormal(sigma).unwrap();
    let mut rng = chain_rng(sub_seed(SEED, "acceptance/tuning"), 0);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| 4.2 * noise.sample(&[], &mut rng).unwrap())
        .collect();
    let r = estimate_var_w(&draws).unwrap();
    let exact = 0.9_f64.exp() - 1.0;
    let close = (r.var_w_hat - exact).abs() <= 3.0 * r.var_w_se;

    let pareto = NoiseModel::shifted_pareto(1.5).unwrap();
    let refusal = recommend_particles(
        |_, theta: &[f64], rng: &mut _| pareto.sample(theta, rng),
        &[0.0],
        1000,
        DEFAULT_TARGET_VAR,
        &mut rng,
    )
    .unwrap();
    let refused =
        refusal.recommended_n.is_none() && refusal.stability == Stability::HeavyTailSuspect;
    outcome(
        close && refused,
        format!(
            "Var(W) = {:.4} ± {:.4} (exact {exact:.4}); pareto(1.5): n = {:?}, {:?}",
            r.var_w_hat, r.var_w_se, refusal.recommended_n, refusal.stability
        ),
    )
}

/// Transition matrix built directly from the acceptance formulas.
fn oracle_matrix(
    kind: KernelKind,
    pi: &[f64],
    w: &[f64],
    wq: &dyn Fn(usize, usize) -> f64,
) -> Vec<Vec<f64>> {
    let (nt, nw) = (pi.len(), w.len());
    let q = |i: usize, j: usize| -> f64 {
        if i.abs_diff(j) == 1 || (i == j && (i == 0 || i == nt - 1)) {
            0.5
        } else {
            0.0
        }
    };
    let mut m = vec![vec![0.0; nt * nw]; nt * nw];
    for i in 0..nt {
        for k in 0..nw {
            let a = i * nw + k;
            for j in 0..nt {
                for l in 0..nw {
                    let b = j * nw + l;
                    if a == b || q(i, j) == 0.0 {
                        continue;
                    }
                    let r = pi[j] * q(j, i) / (pi[i] * q(i, j));
                    let acc = match kind {
                        KernelKind::Handicapped => (w[l] / w[k]).min(1.0) * r.min(1.0),
                        _ => (r * w[l] / w[k]).min(1.0),
                    };
                    m[a][b] = q(i, j) * wq(k, l) * acc;
                }
            }
            m[a][a] = 1.0 - m[a].iter().sum::<f64>();
        }
    }
    m
}

fn kernel_oracle() -> Outcome {
    let pi = [0.1, 0.25, 0.3, 0.2, 0.15];
    let w = [0.2, 0.7, 1.4, 3.1];
    let qw = [0.3, 0.3, 0.25, 0.15];
    let rho = 0.6;
    // q̃(k) K(k, l) is symmetric
    let exch = move |k: usize, l: usize| rho * f64::from(u8::from(k == l)) + (1.0 - rho) * qw[l];
    let indep = move |_: usize, l: usize| qw[l];
    let target = TargetModel::grid(pi.to_vec()).unwrap();
    let proposal = ProposalKernel::DiscreteRW;

    let mut worst_db: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let cases: [(KernelKind, WProposal); 3] = [
        (KernelKind::Pmmh, &indep),
        (KernelKind::Handicapped, &indep),
        (KernelKind::CorrelatedPm, &exch),
    ];
    for (kind, wq) in cases {
        let m =
            grid_transition_matrix(&KernelSpec::plain(kind), &target, &proposal, &w, wq).unwrap();
        let oracle = oracle_matrix(kind, &pi, &w, wq);
        let mu: Vec<f64> = (0..pi.len() * w.len())
            .map(|a| pi[a / w.len()] * w[a % w.len()] * qw[a % w.len()])
            .collect();
        for a in 0..mu.len() {
            for b in 0..mu.len() {
                worst_db = worst_db.max((mu[a] * m[a][b] - mu[b] * m[b][a]).abs());
                worst_gap = worst_gap.max((m[a][b] - oracle[a][b]).abs());
            }
        }
    }

    let mut rng = chain_rng(sub_seed(SEED, "acceptance/fuzz"), 0);
    let mut violations = 0;
    for _ in 0..100_000 {
        let w0 = (rng.random::<f64>() * 20.0 - 10.0).exp();
        let w1 = (rng.random::<f64>() * 20.0 - 10.0).exp();
        let log_r = rng.random::<f64>() * 20.0 - 10.0;
        let (s0, s1) = (
            ChainState::new(vec![0.0], w0),
            ChainState::new(vec![0.0], w1),
        );
        let pm = acceptance_prob(&KernelSpec::plain(KernelKind::Pmmh), &s0, &s1, log_r).unwrap();
        let hc =
            acceptance_prob(&KernelSpec::plain(KernelKind::Handicapped), &s0, &s1, log_r).unwrap();
        if hc > pm {
            violations += 1;
        }
    }
    let pass = worst_db <= 1e-12 && worst_gap <= 1e-12 && violations == 0;
    outcome(
        pass,
        format!("max balance defect {worst_db:.1e}, max gap to formula {worst_gap:.1e}, handicapped > pmmh in {violations} of 1e5"),
    )
}

fn moment_bracket() -> Outcome {
    let probs = vec![0.2, 0.35, 0.5, 0.65, 0.8];
    let binomial_m2: f64 = probs.iter().map(|p| 1.0 + (1.0 - p) / (8.0 * p)).product();
    let a = 2.5_f64;
    let cases = [
        ("point-mass", NoiseModel::PointMass, 1.0),
        (
            "lognormal(1)",
            NoiseModel::lognormal(1.0).unwrap(),
            1.0_f64.exp(),
        ),
        (
            "pareto(2.5)",
            NoiseModel::shifted_pareto(a).unwrap(),
            a / (a - 2.0) - 2.0 * a / (a - 1.0) + 1.0,
        ),
        (
            "binomprod(n=8)",
            NoiseModel::binomial_product(8, probs, None).unwrap(),
            binomial_m2,
        ),
    ];
    let mut rng = chain_rng(sub_seed(SEED, "acceptance/bracket"), 0);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, noise, m2) in cases {
        let r = r_s_numeric(&noise, 1_000_000, &mut rng).unwrap();
        let slack = 3.0 * r.error_estimate;
        pass &= r.value >= m2 - slack && r.value <= 2.0 * m2 + slack;
        parts.push(format!(
            "{name}: {m2:.3} <= {:.3} <= {:.3}",
            r.value,
            2.0 * m2
        ));
    }
    outcome(pass, parts.join("; "))
}

fn toy_clt_ordering() -> Outcome {
    let dir = scratch("toy-clt");
    let cfg = ExperimentConfig::new(ExperimentId::ToyClt, SEED, &dir);
    run_experiment(&cfg).unwrap();
    let rows = read_rows(&dir.join("toy_clt.csv"));
    let col = |k: &str| rows.iter().map(|r| num(r, k)).collect::<Vec<_>>();
    let (sigma, pm, hc, hc_se, mh) = (
        col("sigma"),
        col("ess_pm"),
        col("ess_handicapped"),
        col("ess_handicapped_se"),
        col("ess_mh"),
    );
    let decreasing = |v: &[f64]| v.windows(2).all(|p| p[1] < p[0]);
    let dominated = hc.iter().zip(&pm).all(|(h, p)| h <= p);
    let mut above_theory = true;
    for i in 0..sigma.len() {
        if sigma[i] <= 1.0 + 1e-9 {
            above_theory &= hc[i] + 3.0 * hc_se[i] >= mh[i] / (2.0 * r_s_oracle(sigma[i]));
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    outcome(
        decreasing(&pm) && decreasing(&hc) && dominated && above_theory,
        format!(
            "pm decreasing {}, handicapped decreasing {}, handicapped <= pm {dominated}, handicapped >= mh/(2 R_S) for sigma <= 1 {above_theory}",
            decreasing(&pm),
            decreasing(&hc)
        ),
    )
}

fn correlated_rescue() -> Outcome {
    let dir = scratch("heavy-tail");
    let mut cfg = ExperimentConfig::new(ExperimentId::HeavyTail, SEED, &dir);
    cfg.heavy_shapes = vec![1.5];
    cfg.heavy_chains = 20;
    cfg.heavy_replicates = 3;
    run_experiment(&cfg).unwrap();
    let rows = read_rows(&dir.join("heavy_tail.csv"));
    let _ = std::fs::remove_dir_all(&dir);
    let final_iter = rows.iter().map(|r| num(r, "iteration")).fold(0.0, f64::max);
    let value = |scenario: &str, rep: usize, iter: f64| -> f64 {
        rows.iter()
            .find(|r| {
                r["scenario"] == scenario
                    && num(r, "replicate") as usize == rep
                    && num(r, "iteration") == iter
            })
            .map(|r| num(r, "asymp_var"))
            .unwrap()
    };
    let mut below = 0;
    let mut growing = 0;
    let mut growth = Vec::new();
    for rep in 0..3 {
        let pm_final = value("pmmh-a1.5", rep, final_iter);
        if value("corr-pm-a1.5", rep, final_iter) < pm_final {
            below += 1;
        }
        let g = pm_final / value("pmmh-a1.5", rep, 1e4);
        growth.push(format!("{g:.2}"));
        if g > 2.0 {
            growing += 1;
        }
    }
    outcome(
        below == 3 && growing >= 2,
        format!(
            "corr-pm below pmmh in {below}/3 replicates; pmmh growth 1e4 -> {final_iter:.0}: [{}] (need > 2 in 2 of 3)",
            growth.join(", ")
        ),
    )
}

fn correlated_pareto_marginal() -> Outcome {
    let a = 1.5_f64;
    let noise = NoiseModel::correlated_pareto(a).unwrap();
    let mut rng = chain_rng(sub_seed(SEED, "acceptance/corr-pareto"), 0);
    let mut ws: Vec<f64> = (0..100_000)
        .map(|_| {
            let mut w = noise.sample(&[], &mut rng).unwrap();
            for _ in 0..10 {
                w = noise.sample_correlated(w, &mut rng).unwrap();
            }
            w
        })
        .collect();
    ws.sort_by(f64::total_cmp);
    let n = ws.len() as f64;
    let ks = ws
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let f = 1.0 - (1.0 + w).powf(-a);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);

    // c = E[(exp(Z²/(2a)) - 1)^{2/3}] by a fine midpoint rule
    let h = 1e-4;
    let c: f64 = (0..200_000)
        .map(|i| {
            let z = -10.0 + (i as f64 + 0.5) * h;
            (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
                * (z * z / (2.0 * a)).exp_m1().powf(2.0 / 3.0)
                * h
        })
        .sum();
    let mut moments_ok = true;
    let mut parts = Vec::new();
    for w in [0.5, 2.0, 10.0, 100.0] {
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                noise
                    .sample_correlated(w, &mut rng)
                    .unwrap()
                    .powf(2.0 / 3.0)
            })
            .collect();
        let (m, se) = mean_se(&xs);
        let bound = c * w.powf(1.0 / 3.0);
        moments_ok &= m + 3.0 * se >= bound;
        parts.push(format!("w={w}: {m:.3} >= {bound:.3}"));
    }
    outcome(
        ks < 0.01 && moments_ok,
        format!("KS = {ks:.4}; c = {c:.4}; {}", parts.join(", ")),
    )
}

fn binomial_oracle() -> Outcome {
    let probs = beta_success_probs(SEED, 30, (5.0, 45.0)).unwrap();
    let mut rng = chain_rng(sub_seed(SEED, "acceptance/binomial-tune"), 0);
    let report = recommend_particles(
        |n, theta: &[f64], rng: &mut _| {
            NoiseModel::binomial_product(n, probs.clone(), None)?.sample(theta, rng)
        },
        &[0.0],
        10_000,
        DEFAULT_TARGET_VAR,
        &mut rng,
    )
    .unwrap();
    let Some(n) = report.recommended_n else {
        return outcome(false, format!("no recommendation ({:?})", report.stability));
    };
    let var = |n: u64| {
        probs
            .iter()
            .map(|p| 1.0 + (1.0 - p) / (n as f64 * p))
            .product::<f64>()
            - 1.0
    };
    outcome(
        var(n) <= 1.5,
        format!(
            "n = {n}, exact Var(W) = {:.4} (n - 1: {:.4})",
            var(n),
            var(n - 1)
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        (
            "sigma_opt table",
            sigma_opt_table,
            Some(Duration::from_secs(5)),
        ),
        (
            "closed form vs quadrature",
            closed_form_vs_quadrature,
            Some(Duration::from_secs(10)),
        ),
        ("DPDK15 band", dpdk15_band, Some(Duration::from_secs(60))),
        ("ALPW22 dominance", alpw22_dominance, None),
        ("Pareto log-variance", pareto_log_variance, None),
        ("tuning estimator", tuning_estimator, None),
        (
            "kernel correctness oracle",
            kernel_oracle,
            Some(Duration::from_secs(5)),
        ),
        ("moment bracket", moment_bracket, None),
        ("toy-CLT ordering", toy_clt_ordering, None),
        (
            "correlated rescue",
            correlated_rescue,
            Some(Duration::from_secs(600)),
        ),
        (
            "correlated-Pareto marginal",
            correlated_pareto_marginal,
            None,
        ),
        ("binomial oracle", binomial_oracle, None),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let mut out = run();
        let took = start.elapsed();
        if let Some(b) = budget {
            if took > b {
                out.pass = false;
                out.detail
                    .push_str(&format!("; over the {}s budget", b.as_secs()));
            }
        }
        if !out.pass {
            failed += 1;
        }
        println!(
            "{} {name} ({:.1}s): {}",
            if out.pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            out.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
