use super::{ExperimentConfig, ExperimentId};
use crate::bounds::{efficiency, minimize_sigma, r_alpw22, r_dpdk15, r_s_closed_form, Welford};
use crate::diagnostics::{asymp_var_from_means, BatchAccumulator};
use crate::error::{param, Result};
use crate::kernels::{ChainConfig, ChainState, KernelKind, KernelSpec};
use crate::noise::NoiseModel;
use crate::rng::{chain_rng, sub_seed};
use crate::targets::{ProposalKernel, TargetModel};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use std::path::PathBuf;

pub(super) fn run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    match cfg.id {
        ExperimentId::FigBounds => fig_bounds(cfg),
        ExperimentId::FigEfficiency => fig_efficiency(cfg),
        ExperimentId::ToyClt => toy_clt(cfg),
        ExperimentId::Binomial => binomial(cfg),
        ExperimentId::HeavyTail => heavy_tail(cfg),
    }
}

fn write_csv(
    cfg: &ExperimentConfig,
    name: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<PathBuf> {
    let path = cfg.out_dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(path)
}

fn fig_bounds(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let rows = cfg
        .sigma_grid
        .par_iter()
        .map(|&s| {
            let rs = r_s_closed_form(s)?;
            let alpw = r_alpw22(s)?;
            let dpdk = r_dpdk15(s, cfg.quad_tol)?;
            Ok(vec![
                s,
                rs.value,
                alpw.value,
                dpdk.value,
                dpdk.value / rs.value,
                dpdk.error_estimate,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let header = [
        "sigma",
        "r_s",
        "r_alpw22",
        "r_dpdk15",
        "ratio",
        "r_dpdk15_error",
    ];
    Ok(vec![write_csv(
        cfg,
        "fig_bounds.csv",
        &header,
        &strings(rows),
    )?])
}

fn fig_efficiency(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut rows = Vec::new();
    for &eps in &cfg.eps_values {
        for &s in &cfg.sigma_grid {
            rows.push(vec![
                "curve".to_string(),
                eps.to_string(),
                s.to_string(),
                efficiency(s, eps)?.to_string(),
            ]);
        }
        let opt = minimize_sigma(eps, 1e-8)?;
        rows.push(vec![
            "optimum".to_string(),
            eps.to_string(),
            opt.to_string(),
            efficiency(opt, eps)?.to_string(),
        ]);
    }
    Ok(vec![write_csv(
        cfg,
        "fig_efficiency.csv",
        &["kind", "eps", "sigma", "efficiency"],
        &rows,
    )?])
}

fn strings(rows: Vec<Vec<f64>>) -> Vec<Vec<String>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(|x| x.to_string()).collect())
        .collect()
}

/// Pooled ESS of the coordinate functions `h(θ) = θ_i`, averaged over `i`.
#[derive(Debug, Clone, Copy)]
struct PooledEss {
    value: f64,
    std_error: f64,
}

/// Runs `replicates` chains on streams `0..replicates` of `seed`; the
/// asymptotic variance of each coordinate is the mean of the per-chain batch
/// means estimates, and `Var_π` the mean of the per-chain sample variances.
fn pooled_ess(
    chain: &ChainConfig,
    n: usize,
    replicates: usize,
    batch_count: usize,
    seed: u64,
) -> Result<PooledEss> {
    let d = chain.target.dim();
    let per_chain = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = chain_rng(seed, r as u64);
            let init = ChainState::initial(chain.spec.kind, &chain.target, &chain.noise, &mut rng)?;
            let mut acc = vec![BatchAccumulator::new(n, batch_count)?; d];
            chain.run_with(&init, n, &mut rng, |_, s, _| {
                for (a, x) in acc.iter_mut().zip(&s.theta) {
                    a.push(*x);
                }
            })?;
            acc.iter()
                .map(|a| {
                    Ok((
                        a.estimate()?.value,
                        a.sample_variance(),
                        a.estimate()?.n_used,
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let n_used = per_chain[0][0].2 as f64;
    let mut value = 0.0;
    for i in 0..d {
        let var_q: f64 = per_chain.iter().map(|c| c[i].0).sum();
        let var_pi: f64 = per_chain.iter().map(|c| c[i].1).sum();
        value += if var_q == 0.0 {
            f64::INFINITY
        } else {
            n_used * var_pi / var_q
        };
    }
    value /= d as f64;
    let mut spread = Welford::default();
    for c in &per_chain {
        spread.push(c.iter().map(|(q, v, _)| n_used * v / q).sum::<f64>() / d as f64);
    }
    Ok(PooledEss {
        value,
        std_error: spread.std_error(),
    })
}

fn gaussian_setup(
    cfg: &ExperimentConfig,
    div: Option<f64>,
) -> Result<(TargetModel, ProposalKernel)> {
    Ok((
        TargetModel::gaussian(cfg.dim)?,
        ProposalKernel::random_walk(cfg.lambda, div)?,
    ))
}

fn toy_clt(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let n = cfg.scaled(cfg.clt_iters);
    let (target, proposal) = gaussian_setup(cfg, None)?;
    // every kernel and σ shares the same streams
    let seed = sub_seed(cfg.seed, "toy-clt");
    let chain = |kind, noise| {
        ChainConfig::new(
            KernelSpec::plain(kind),
            target.clone(),
            proposal.clone(),
            noise,
        )
    };
    let mh = pooled_ess(
        &chain(KernelKind::Mh, NoiseModel::PointMass)?,
        n,
        cfg.ess_replicates,
        cfg.batch_count,
        seed,
    )?;
    let rows = cfg
        .clt_sigmas
        .par_iter()
        .map(|&s| {
            let noise = NoiseModel::lognormal(s)?;
            let pm = pooled_ess(
                &chain(KernelKind::Pmmh, noise.clone())?,
                n,
                cfg.ess_replicates,
                cfg.batch_count,
                seed,
            )?;
            let hc = pooled_ess(
                &chain(KernelKind::Handicapped, noise)?,
                n,
                cfg.ess_replicates,
                cfg.batch_count,
                seed,
            )?;
            let rs = r_s_closed_form(s)?.value;
            Ok(vec![
                s,
                pm.value,
                pm.std_error,
                hc.value,
                hc.std_error,
                mh.value,
                mh.std_error,
                mh.value / (2.0 * rs),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let header = [
        "sigma",
        "ess_pm",
        "ess_pm_se",
        "ess_handicapped",
        "ess_handicapped_se",
        "ess_mh",
        "ess_mh_se",
        "ess_mh_over_2rs",
    ];
    Ok(vec![write_csv(
        cfg,
        "toy_clt.csv",
        &header,
        &strings(rows),
    )?])
}

pub(super) fn beta_seed(seed: u64) -> u64 {
    sub_seed(seed, "binomial/beta")
}

/// The `T` success probabilities of the binomial experiment, drawn from
/// `Beta(a, b)` on a stream derived from `seed` alone.
pub fn beta_success_probs(seed: u64, t: usize, shape: (f64, f64)) -> Result<Vec<f64>> {
    let beta = Beta::new(shape.0, shape.1).map_err(|e| param(format!("Beta{shape:?}: {e}")))?;
    let mut rng = chain_rng(beta_seed(seed), 0);
    Ok((0..t).map(|_| beta.sample(&mut rng)).collect())
}

fn binomial(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let n_iters = cfg.scaled(cfg.binomial_iters);
    let (target, proposal) = gaussian_setup(cfg, None)?;
    let probs = beta_success_probs(cfg.seed, cfg.binomial_t, cfg.beta_shape)?;
    let seed = sub_seed(cfg.seed, "binomial");
    let chain = |kind, noise| {
        ChainConfig::new(
            KernelSpec::plain(kind),
            target.clone(),
            proposal.clone(),
            noise,
        )
    };
    let mh = pooled_ess(
        &chain(KernelKind::Mh, NoiseModel::PointMass)?,
        n_iters,
        cfg.ess_replicates,
        cfg.batch_count,
        seed,
    )?;
    let origin = target.origin();
    let rows = cfg
        .particles
        .par_iter()
        .map(|&n| {
            let noise = NoiseModel::binomial_product(n, probs.clone(), None)?;
            let m2 = noise.second_moment(&origin)?;
            let sigma_tilde = m2.ln().sqrt();
            let rs_tilde = r_s_closed_form(sigma_tilde)?.value;
            let pm = pooled_ess(
                &chain(KernelKind::Pmmh, noise.clone())?,
                n_iters,
                cfg.ess_replicates,
                cfg.batch_count,
                seed,
            )?;
            let hc = pooled_ess(
                &chain(KernelKind::Handicapped, noise)?,
                n_iters,
                cfg.ess_replicates,
                cfg.batch_count,
                seed,
            )?;
            Ok(vec![
                n as f64,
                m2,
                sigma_tilde,
                pm.value,
                pm.std_error,
                hc.value,
                hc.std_error,
                mh.value,
                mh.value / (2.0 * m2),
                mh.value / rs_tilde,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let header = [
        "n",
        "second_moment",
        "sigma_tilde",
        "ess_pm",
        "ess_pm_se",
        "ess_handicapped",
        "ess_handicapped_se",
        "ess_mh",
        "ess_mh_over_2m2",
        "ess_mh_over_rs_tilde",
    ];
    Ok(vec![write_csv(
        cfg,
        "binomial.csv",
        &header,
        &strings(rows),
    )?])
}

/// `1, 2, …, 9 × 10^k` from 10 up to `n`, plus `n` itself.
pub fn heavy_tail_checkpoints(n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 10;
    'outer: loop {
        for k in 1..10 {
            let j = k * decade;
            if j > n {
                break 'outer;
            }
            out.push(j);
        }
        decade *= 10;
    }
    if out.last() != Some(&n) {
        out.push(n);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Scenario {
    kind: KernelKind,
    a: f64,
}

impl Scenario {
    fn label(&self) -> String {
        format!("{}-a{}", self.kind, self.a)
    }

    fn noise(&self) -> Result<NoiseModel> {
        match self.kind {
            KernelKind::CorrelatedPm => NoiseModel::correlated_pareto(self.a),
            _ => NoiseModel::shifted_pareto(self.a),
        }
    }
}

/// Running means of `θ_1` at each checkpoint for one chain.
fn running_means<R: Rng>(
    chain: &ChainConfig,
    n: usize,
    checkpoints: &[usize],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let init = ChainState::initial(chain.spec.kind, &chain.target, &chain.noise, rng)?;
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    chain.run_with(&init, n, rng, |i, s, _| {
        sum += s.theta[0];
        if next < checkpoints.len() && checkpoints[next] == i {
            out.push(sum / i as f64);
            next += 1;
        }
    })?;
    Ok(out)
}

fn heavy_tail(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let n = cfg.scaled(cfg.heavy_iters);
    let checkpoints = heavy_tail_checkpoints(n);
    let (target, proposal) = gaussian_setup(cfg, Some(1.0))?;
    let mut scenarios: Vec<Scenario> = cfg
        .heavy_shapes
        .iter()
        .map(|&a| Scenario {
            kind: KernelKind::Pmmh,
            a,
        })
        .collect();
    scenarios.extend(
        cfg.heavy_shapes
            .iter()
            .filter(|&&a| a <= 2.0)
            .map(|&a| Scenario {
                kind: KernelKind::CorrelatedPm,
                a,
            }),
    );

    let jobs: Vec<(usize, usize, usize)> = (0..scenarios.len())
        .flat_map(|s| {
            (0..cfg.heavy_replicates)
                .flat_map(move |r| (0..cfg.heavy_chains).map(move |m| (s, r, m)))
        })
        .collect();
    let means = jobs
        .par_iter()
        .map(|&(s, r, m)| {
            let sc = scenarios[s];
            let chain = ChainConfig::new(
                KernelSpec::plain(sc.kind),
                target.clone(),
                proposal.clone(),
                sc.noise()?,
            )?;
            let seed = sub_seed(cfg.seed, &format!("heavy-tail/{}/{r}", sc.label()));
            running_means(&chain, n, &checkpoints, &mut chain_rng(seed, m as u64))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (block, sc_r) in means
        .chunks(cfg.heavy_chains)
        .zip(jobs.iter().step_by(cfg.heavy_chains))
    {
        let sc = scenarios[sc_r.0];
        for e in asymp_var_from_means(block, &checkpoints)? {
            rows.push(vec![
                sc.label(),
                sc.kind.to_string(),
                sc.a.to_string(),
                sc_r.1.to_string(),
                e.n_used.to_string(),
                e.value.to_string(),
                e.value.ln().to_string(),
            ]);
        }
    }
    let header = [
        "scenario",
        "kernel",
        "a",
        "replicate",
        "iteration",
        "asymp_var",
        "log_asymp_var",
    ];
    Ok(vec![write_csv(cfg, "heavy_tail.csv", &header, &rows)?])
}
