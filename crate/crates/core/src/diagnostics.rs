//! Noise-variance tuning and asymptotic-variance estimation.
//!
//! The tuning rule targets the relative variance of the likelihood estimator,
//! `Var(W) = s² / m̄²`, rather than the variance of its logarithm.

use crate::bounds::Welford;
use crate::error::{param, Error, Result};
use crate::kernels::ChainTrace;
use crate::rng::{chain_rng, sub_seed};
use rand::Rng;
use std::fmt;

/// Smallest number of estimates accepted by [`estimate_var_w`].
pub const MIN_ESTIMATES: usize = 10;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const DEFAULT_TARGET_VAR: f64 = 1.5;
/// Largest particle count [`recommend_particles`] will probe.
pub const MAX_PARTICLES: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    HeavyTailSuspect,
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stability::Stable => "stable",
            Stability::HeavyTailSuspect => "heavy-tail-suspect",
        })
    }
}

/// One probe of the particle search.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub n: u64,
    pub var_w_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningReport {
    pub var_w_hat: f64,
    /// Bootstrap standard deviation of `var_w_hat`.
    pub var_w_se: f64,
    /// 95% percentile bootstrap interval.
    pub var_w_ci: (f64, f64),
    /// `None` when any estimate is zero.
    pub var_log_w_hat: Option<f64>,
    pub zero_count: usize,
    pub m_estimates: usize,
    pub recommended_n: Option<u64>,
    pub stability: Stability,
    pub probes: Vec<Probe>,
}

impl fmt::Display for TuningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let log_var = match self.var_log_w_hat {
            Some(v) => v.to_string(),
            None => "undefined".to_string(),
        };
        let rec = match self.recommended_n {
            Some(n) => n.to_string(),
            None => "no-recommendation".to_string(),
        };
        writeln!(f, "{:<16}{}", "var_w_hat", self.var_w_hat)?;
        writeln!(f, "{:<16}{}", "var_w_se", self.var_w_se)?;
        writeln!(
            f,
            "{:<16}[{}, {}]",
            "var_w_ci95", self.var_w_ci.0, self.var_w_ci.1
        )?;
        writeln!(f, "{:<16}{}", "var_log_w_hat", log_var)?;
        writeln!(f, "{:<16}{}", "zero_count", self.zero_count)?;
        writeln!(f, "{:<16}{}", "m_estimates", self.m_estimates)?;
        writeln!(f, "{:<16}{}", "stability", self.stability)?;
        write!(f, "{:<16}{}", "recommended_n", rec)
    }
}

fn relative_variance(xs: &[f64]) -> f64 {
    let mut acc = Welford::default();
    xs.iter().for_each(|&x| acc.push(x));
    acc.variance() / (acc.mean() * acc.mean())
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// `Var̂(W) = s²/m̄²` with a bootstrap interval, and `Var̂(log W)` over the
/// estimates. The bootstrap stream is fixed, so the report is a function of
/// the input alone.
pub fn estimate_var_w(estimates: &[f64]) -> Result<TuningReport> {
    let mut rng = chain_rng(sub_seed(0, "bootstrap"), 0);
    estimate_var_w_with(estimates, &mut rng)
}

/// [`estimate_var_w`] with an explicit bootstrap stream.
pub fn estimate_var_w_with<R: Rng + ?Sized>(
    estimates: &[f64],
    rng: &mut R,
) -> Result<TuningReport> {
    let m = estimates.len();
    if m < MIN_ESTIMATES {
        return Err(Error::Input(format!(
            "need at least {MIN_ESTIMATES} estimates, got {m}"
        )));
    }
    if let Some(bad) = estimates.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Input(format!(
            "estimates must be finite and non-negative, found {bad}"
        )));
    }
    let zero_count = estimates.iter().filter(|&&x| x == 0.0).count();
    if zero_count == m {
        return Err(Error::Input("all estimates are zero".into()));
    }
    let var_w_hat = relative_variance(estimates);
    let var_log_w_hat = (zero_count == 0).then(|| {
        let mut acc = Welford::default();
        estimates.iter().for_each(|x| acc.push(x.ln()));
        acc.variance()
    });

    let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut sample = vec![0.0; m];
    while boot.len() < BOOTSTRAP_RESAMPLES {
        for s in sample.iter_mut() {
            *s = estimates[rng.random_range(0..m)];
        }
        // an all-zero resample has no relative variance; draw again
        if sample.iter().any(|&x| x > 0.0) {
            boot.push(relative_variance(&sample));
        }
    }
    let mut acc = Welford::default();
    boot.iter().for_each(|&b| acc.push(b));
    boot.sort_by(f64::total_cmp);
    let ci = (quantile(&boot, 0.025), quantile(&boot, 0.975));
    let stability = if ci.1 > 3.0 * var_w_hat {
        Stability::HeavyTailSuspect
    } else {
        Stability::Stable
    };

    Ok(TuningReport {
        var_w_hat,
        var_w_se: acc.variance().sqrt(),
        var_w_ci: ci,
        var_log_w_hat,
        zero_count,
        m_estimates: m,
        recommended_n: None,
        stability,
        probes: Vec::new(),
    })
}

/// Searches for the smallest particle count with `Var̂(W) ≤ target_var`.
///
/// Doubles `n` from 1 until the target is met, then bisects until the
/// bracket is within a factor 1.25. Gives up with no recommendation when
/// three successive doublings each fail to cut `Var̂(W)` by 10%, or when
/// `n` would exceed [`MAX_PARTICLES`]. A probe with every estimate zero
/// counts as `Var̂(W) = ∞`, and a doubling from a probe within a factor 2 of
/// the ceiling `m − 1` is never a stall.
pub fn recommend_particles<R, F>(
    mut estimator: F,
    theta_hat: &[f64],
    m_per_probe: usize,
    target_var: f64,
    rng: &mut R,
) -> Result<TuningReport>
where
    R: Rng + ?Sized,
    F: FnMut(u64, &[f64], &mut R) -> Result<f64>,
{
    if !(target_var > 0.0 && target_var.is_finite()) {
        return Err(param(format!(
            "target variance must be positive, got {target_var}"
        )));
    }
    let mut probes = Vec::new();
    let mut probe = |n: u64, rng: &mut R| -> Result<TuningReport> {
        let xs = (0..m_per_probe)
            .map(|_| estimator(n, theta_hat, rng))
            .collect::<Result<Vec<_>>>()?;
        let report = if xs.len() >= MIN_ESTIMATES && xs.iter().all(|&x| x == 0.0) {
            unresolved(xs.len())
        } else {
            estimate_var_w_with(&xs, rng)?
        };
        probes.push(Probe {
            n,
            var_w_hat: report.var_w_hat,
        });
        Ok(report)
    };
    // ties within rounding count as meeting the target
    let meets = |r: &TuningReport| r.var_w_hat <= target_var * (1.0 + 1e-12);

    let mut n = 1;
    let mut last = probe(n, rng)?;
    let mut stalls = 0;
    while !meets(&last) {
        if n >= MAX_PARTICLES {
            return Ok(refusal(last, probes));
        }
        let prev = last.var_w_hat;
        n *= 2;
        last = probe(n, rng)?;
        // Var̂(W) ≤ m - 1, so a probe near that ceiling cannot show a cut
        let saturated = prev >= 0.5 * (m_per_probe as f64 - 1.0);
        if !saturated && last.var_w_hat > 0.9 * prev {
            stalls += 1;
            if stalls == 3 {
                return Ok(refusal(last, probes));
            }
        } else {
            stalls = 0;
        }
    }

    let (mut lo, mut hi) = (n / 2, n);
    let mut best = last;
    while lo >= 1 && hi as f64 > 1.25 * lo as f64 {
        let mid = lo + (hi - lo) / 2;
        if mid == lo {
            break;
        }
        let r = probe(mid, rng)?;
        if meets(&r) {
            hi = mid;
            best = r;
        } else {
            lo = mid;
        }
    }
    if best.stability == Stability::HeavyTailSuspect {
        return Ok(refusal(best, probes));
    }
    Ok(TuningReport {
        recommended_n: Some(hi),
        probes,
        ..best
    })
}

/// Stand-in for a probe whose estimates are all zero.
fn unresolved(m: usize) -> TuningReport {
    TuningReport {
        var_w_hat: f64::INFINITY,
        var_w_se: f64::INFINITY,
        var_w_ci: (f64::INFINITY, f64::INFINITY),
        var_log_w_hat: None,
        zero_count: m,
        m_estimates: m,
        recommended_n: None,
        stability: Stability::Stable,
        probes: Vec::new(),
    }
}

fn refusal(last: TuningReport, probes: Vec<Probe>) -> TuningReport {
    TuningReport {
        recommended_n: None,
        stability: Stability::HeavyTailSuspect,
        probes,
        ..last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsympVarMethod {
    Replicate,
    BatchMeans,
}

impl fmt::Display for AsympVarMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AsympVarMethod::Replicate => "replicate",
            AsympVarMethod::BatchMeans => "batch-means",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsympVarEstimate {
    pub value: f64,
    pub method: AsympVarMethod,
    /// Iterations (replicate) or samples (batch means) behind the estimate.
    pub n_used: usize,
    /// Replicates or batches.
    pub m_used: usize,
    /// Chi-square approximation, `value · √(2/(m − 1))`.
    pub std_error: f64,
}

fn chi2_se(value: f64, m: usize) -> f64 {
    value * (2.0 / (m - 1) as f64).sqrt()
}

/// `j · Var(running mean up to j)` across replicate traces, at each checkpoint `j`.
///
/// Checkpoints are iteration numbers and must be recorded in every trace.
/// With a stride above 1 the running means are over the recorded states.
pub fn asymp_var_replicate<F>(
    traces: &[ChainTrace],
    h: F,
    checkpoints: &[usize],
) -> Result<Vec<AsympVarEstimate>>
where
    F: Fn(&[f64], f64) -> f64,
{
    let Some(first) = traces.first() else {
        return Err(Error::Input("no traces".into()));
    };
    if traces
        .iter()
        .any(|t| t.n_iters != first.n_iters || t.stride != first.stride || t.len() != first.len())
    {
        return Err(Error::Input("traces have unequal lengths".into()));
    }
    if traces
        .iter()
        .any(|t| t.kernel != first.kernel || t.noise != first.noise || t.target != first.target)
    {
        return Err(Error::Input(
            "traces come from different chain specifications".into(),
        ));
    }
    let mut rows = Vec::with_capacity(checkpoints.len());
    for t in traces {
        let mut means = Vec::with_capacity(checkpoints.len());
        let mut sum = 0.0;
        let mut cp = checkpoints.iter().peekable();
        for (k, r) in t.records.iter().enumerate() {
            sum += h(&r.theta, r.w);
            while let Some(&&j) = cp.peek() {
                if j < r.iter {
                    return Err(Error::Input(format!(
                        "checkpoint {j} is not a recorded iteration"
                    )));
                }
                if j > r.iter {
                    break;
                }
                means.push(sum / (k + 1) as f64);
                cp.next();
            }
        }
        if let Some(j) = cp.next() {
            return Err(Error::Input(format!(
                "checkpoint {j} is beyond the trace ({} iterations)",
                t.n_iters
            )));
        }
        rows.push(means);
    }
    asymp_var_from_means(&rows, checkpoints)
}

/// The replicate estimator from precomputed running means: `means[m][c]` is
/// replicate `m`'s mean of `h` over its first `checkpoints[c]` iterations.
pub fn asymp_var_from_means(
    means: &[Vec<f64>],
    checkpoints: &[usize],
) -> Result<Vec<AsympVarEstimate>> {
    let m = means.len();
    if m < MIN_ESTIMATES {
        return Err(Error::Input(format!(
            "need at least {MIN_ESTIMATES} replicates, got {m}"
        )));
    }
    if means.iter().any(|row| row.len() != checkpoints.len()) {
        return Err(Error::Input(
            "every replicate needs one mean per checkpoint".into(),
        ));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints.first() == Some(&0) {
        return Err(Error::Input(
            "checkpoints must be positive and increasing".into(),
        ));
    }
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(c, &j)| {
            let mut acc = Welford::default();
            means.iter().for_each(|row| acc.push(row[c]));
            let value = j as f64 * acc.variance();
            AsympVarEstimate {
                value,
                method: AsympVarMethod::Replicate,
                n_used: j,
                m_used: m,
                std_error: chi2_se(value, m),
            }
        })
        .collect())
}

/// Non-overlapping batch means on `values`; the tail beyond
/// `batch_count · floor(n / batch_count)` is dropped.
pub fn batch_means(values: &[f64], batch_count: usize) -> Result<AsympVarEstimate> {
    let mut acc = BatchAccumulator::new(values.len(), batch_count)?;
    values.iter().for_each(|&x| acc.push(x));
    acc.estimate()
}

pub fn asymp_var_batch_means<F>(
    trace: &ChainTrace,
    h: F,
    batch_count: usize,
) -> Result<AsympVarEstimate>
where
    F: Fn(&[f64], f64) -> f64,
{
    batch_means(&trace.map(h), batch_count)
}

/// Streaming batch means for a run whose length is known in advance.
#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    batch_len: usize,
    batch_count: usize,
    sum: f64,
    filled: usize,
    means: Welford,
    all: Welford,
}

impl BatchAccumulator {
    pub fn new(n: usize, batch_count: usize) -> Result<Self> {
        if batch_count < 2 {
            return Err(param(format!("need at least 2 batches, got {batch_count}")));
        }
        if n < 100 * batch_count {
            return Err(Error::Input(format!(
                "{n} samples are too few for {batch_count} batches (need {})",
                100 * batch_count
            )));
        }
        Ok(BatchAccumulator {
            batch_len: n / batch_count,
            batch_count,
            sum: 0.0,
            filled: 0,
            means: Welford::default(),
            all: Welford::default(),
        })
    }

    /// Values past the last full batch are ignored.
    pub fn push(&mut self, x: f64) {
        if self.means.len() == self.batch_count {
            return;
        }
        self.all.push(x);
        self.sum += x;
        self.filled += 1;
        if self.filled == self.batch_len {
            self.means.push(self.sum / self.batch_len as f64);
            self.sum = 0.0;
            self.filled = 0;
        }
    }

    /// Sample variance over the values used.
    pub fn sample_variance(&self) -> f64 {
        self.all.variance()
    }

    pub fn estimate(&self) -> Result<AsympVarEstimate> {
        if self.means.len() < self.batch_count {
            return Err(Error::Input(format!(
                "only {} of {} batches are complete",
                self.means.len(),
                self.batch_count
            )));
        }
        let value = self.batch_len as f64 * self.means.variance();
        Ok(AsympVarEstimate {
            value,
            method: AsympVarMethod::BatchMeans,
            n_used: self.batch_len * self.batch_count,
            m_used: self.batch_count,
            std_error: chi2_se(value, self.batch_count),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EssMethod {
    BatchMeans { batch_count: usize },
}

/// Effective sample size of `values` after standardising by their sample
/// standard deviation; `+∞` when the variance estimate is zero.
pub fn ess_values(values: &[f64], method: EssMethod) -> Result<f64> {
    let EssMethod::BatchMeans { batch_count } = method;
    let mut acc = BatchAccumulator::new(values.len(), batch_count)?;
    values.iter().for_each(|&x| acc.push(x));
    let est = acc.estimate()?;
    if est.value == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(values.len() as f64 * acc.sample_variance() / est.value)
}

pub fn ess<F>(trace: &ChainTrace, h: F, method: EssMethod) -> Result<f64>
where
    F: Fn(&[f64], f64) -> f64,
{
    ess_values(&trace.map(h), method)
}

/// Replicate ESS at full length: `n · s²_pooled / (n · Var(means))`, with the
/// pooled within-trace variance standing in for `Var_π(h)`.
pub fn ess_replicate(values: &[Vec<f64>]) -> Result<f64> {
    if values.len() < MIN_ESTIMATES {
        return Err(Error::Input(format!(
            "need at least {MIN_ESTIMATES} replicates, got {}",
            values.len()
        )));
    }
    let n = values[0].len();
    if n < 2 || values.iter().any(|v| v.len() != n) {
        return Err(Error::Input(
            "replicates must share a length of at least 2".into(),
        ));
    }
    let mut means = Welford::default();
    let mut pooled = 0.0;
    for v in values {
        let mut acc = Welford::default();
        v.iter().for_each(|&x| acc.push(x));
        means.push(acc.mean());
        pooled += acc.variance();
    }
    pooled /= values.len() as f64;
    let var_q = n as f64 * means.variance();
    Ok(if var_q == 0.0 {
        f64::INFINITY
    } else {
        n as f64 * pooled / var_q
    })
}
