//! Metropolis–Hastings, pseudo-marginal, handicapped and correlated kernels.
//!
//! Draw order within one transition, from the chain's single stream:
//!
//! 1. one uniform for the lazy hold, only when `delta > 0`;
//! 2. the θ proposal (`d` normals for the random walk, one uniform on a grid);
//! 3. the noise proposal (none for MH or point-mass noise);
//! 4. one uniform for accept/reject, drawn even when acceptance is certain.
//!
//! With a fixed seed the trace is therefore a pure function of the inputs.

use crate::error::{param, Error, Result};
use crate::noise::NoiseModel;
use crate::rng::{chain_rng, ChainRng};
use crate::targets::{log_ratio, ProposalKernel, TargetModel};
use rand::Rng;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// Exact Metropolis–Hastings on θ; `w` is carried unchanged.
    Mh,
    /// Accept with `1 ∧ r·w'/w`.
    Pmmh,
    /// Accept with `(1 ∧ w'/w)(1 ∧ r)`.
    Handicapped,
    /// `1 ∧ r·w'/w` with `w'` drawn from the correlated conditional.
    CorrelatedPm,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Mh,
        KernelKind::Pmmh,
        KernelKind::Handicapped,
        KernelKind::CorrelatedPm,
    ];

    pub fn is_pseudo_marginal(self) -> bool {
        self != KernelKind::Mh
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Mh => "mh",
            KernelKind::Pmmh => "pmmh",
            KernelKind::Handicapped => "handicapped",
            KernelKind::CorrelatedPm => "corr-pm",
        })
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Descriptor {
                descriptor: s.into(),
                reason: "expected mh, pmmh, handicapped or corr-pm".into(),
            })
    }
}

/// A kernel variant plus laziness: hold with probability `delta`, otherwise move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub delta: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, delta: f64) -> Result<Self> {
        let spec = KernelSpec { kind, delta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn plain(kind: KernelKind) -> Self {
        KernelSpec { kind, delta: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..1.0).contains(&self.delta) {
            Ok(())
        } else {
            Err(param(format!(
                "laziness must lie in [0, 1), got {}",
                self.delta
            )))
        }
    }

    /// Checks the kernel can run with this noise model.
    pub fn check_noise(&self, noise: &NoiseModel) -> Result<()> {
        self.validate()?;
        noise.validate()?;
        if self.kind == KernelKind::CorrelatedPm && !noise.is_correlated() {
            return Err(Error::Input(format!(
                "the correlated kernel needs a correlated noise model, got `{noise}`"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.delta > 0.0 {
            write!(f, "{}:delta={}", self.kind, self.delta)
        } else {
            write!(f, "{}", self.kind)
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let kind: KernelKind = kind.trim().parse()?;
        let delta = match rest.trim() {
            "" => 0.0,
            r => r
                .strip_prefix("delta=")
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| Error::Descriptor {
                    descriptor: s.into(),
                    reason: "expected `delta=<value>`".into(),
                })?,
        };
        KernelSpec::new(kind, delta)
    }
}

/// A point of the extended state space: parameter plus noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub w: f64,
    pub log_w: f64,
}

impl ChainState {
    pub fn new(theta: Vec<f64>, w: f64) -> Self {
        ChainState {
            theta,
            w,
            log_w: w.ln(),
        }
    }

    /// θ at the origin with `w` drawn once from the noise model there.
    ///
    /// A zero draw (possible for the binomial product) is redrawn: a chain
    /// started at `w = 0` can never move.
    pub fn initial<R: Rng + ?Sized>(
        kind: KernelKind,
        target: &TargetModel,
        noise: &NoiseModel,
        rng: &mut R,
    ) -> Result<Self> {
        let theta = target.origin();
        if !kind.is_pseudo_marginal() {
            return Ok(ChainState::new(theta, 1.0));
        }
        for _ in 0..10_000 {
            let w = noise.sample(&theta, rng)?;
            if w > 0.0 {
                return Ok(ChainState::new(theta, w));
            }
        }
        Err(Error::InvalidState(format!(
            "could not draw a positive initial w from `{noise}`"
        )))
    }
}

/// Log acceptance probability, `≤ 0`.
pub fn log_acceptance(
    spec: &KernelSpec,
    state: &ChainState,
    proposal_state: &ChainState,
    log_r: f64,
) -> Result<f64> {
    if spec.kind.is_pseudo_marginal() && !(state.w > 0.0) {
        return Err(Error::InvalidState(format!(
            "current w = {} must be positive for {}",
            state.w, spec.kind
        )));
    }
    let noise_ratio = proposal_state.log_w - state.log_w;
    Ok(match spec.kind {
        KernelKind::Mh => log_r.min(0.0),
        KernelKind::Pmmh | KernelKind::CorrelatedPm => (log_r + noise_ratio).min(0.0),
        KernelKind::Handicapped => noise_ratio.min(0.0) + log_r.min(0.0),
    })
}

pub fn acceptance_prob(
    spec: &KernelSpec,
    state: &ChainState,
    proposal_state: &ChainState,
    log_r: f64,
) -> Result<f64> {
    log_acceptance(spec, state, proposal_state, log_r).map(f64::exp)
}

/// One transition. Returns the new state and whether a move was accepted.
pub fn step<R: Rng + ?Sized>(
    spec: &KernelSpec,
    target: &TargetModel,
    proposal: &ProposalKernel,
    noise: &NoiseModel,
    state: &ChainState,
    rng: &mut R,
) -> Result<(ChainState, bool)> {
    if spec.delta > 0.0 && rng.random::<f64>() < spec.delta {
        return Ok((state.clone(), false));
    }
    let theta_new = proposal.propose(target, &state.theta, rng);
    let w_new = match spec.kind {
        KernelKind::Mh => state.w,
        KernelKind::Pmmh | KernelKind::Handicapped => noise.sample(&theta_new, rng)?,
        KernelKind::CorrelatedPm => noise.sample_correlated(state.w, rng)?,
    };
    let candidate = ChainState::new(theta_new, w_new);
    let log_r = log_ratio(target, proposal, &state.theta, &candidate.theta);
    let log_alpha = log_acceptance(spec, state, &candidate, log_r)?;
    let u: f64 = rng.random();
    if u < log_alpha.exp() {
        Ok((candidate, true))
    } else {
        Ok((state.clone(), false))
    }
}

/// The models a chain runs on.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub spec: KernelSpec,
    pub target: TargetModel,
    pub proposal: ProposalKernel,
    pub noise: NoiseModel,
}

impl ChainConfig {
    pub fn new(
        spec: KernelSpec,
        target: TargetModel,
        proposal: ProposalKernel,
        noise: NoiseModel,
    ) -> Result<Self> {
        let cfg = ChainConfig {
            spec,
            target,
            proposal,
            noise,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.proposal.check_compatible(&self.target)?;
        self.spec.check_noise(&self.noise)
    }

    /// Runs `n_iters` transitions from `init`, calling `visit(iter, state, accepted)`
    /// after each, with `iter` counted from 1. Returns the accepted count.
    pub fn run_with<R, F>(
        &self,
        init: &ChainState,
        n_iters: usize,
        rng: &mut R,
        mut visit: F,
    ) -> Result<usize>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, &ChainState, bool),
    {
        self.validate()?;
        if self.spec.kind.is_pseudo_marginal() && !(init.w > 0.0) {
            return Err(Error::InvalidState(format!(
                "initial w = {} must be positive",
                init.w
            )));
        }
        if init.theta.len() != self.target.dim()
            || self.target.log_density(&init.theta) == f64::NEG_INFINITY
        {
            return Err(Error::InvalidState(format!(
                "initial θ = {:?} is not in the target's support",
                init.theta
            )));
        }
        let mut state = init.clone();
        let mut accepted = 0;
        for i in 1..=n_iters {
            let (next, acc) = step(
                &self.spec,
                &self.target,
                &self.proposal,
                &self.noise,
                &state,
                rng,
            )?;
            state = next;
            accepted += acc as usize;
            visit(i, &state, acc);
        }
        Ok(accepted)
    }

    /// Runs one chain on stream `chain` of `seed`, starting from the default
    /// initial state (θ = 0, `w` drawn from the noise model).
    pub fn run(&self, n_iters: usize, stride: usize, seed: u64, chain: u64) -> Result<ChainTrace> {
        let mut rng = chain_rng(seed, chain);
        let init = ChainState::initial(self.spec.kind, &self.target, &self.noise, &mut rng)?;
        self.run_from(&init, n_iters, stride, seed, chain, &mut rng)
    }

    fn run_from(
        &self,
        init: &ChainState,
        n_iters: usize,
        stride: usize,
        seed: u64,
        chain: u64,
        rng: &mut ChainRng,
    ) -> Result<ChainTrace> {
        if n_iters == 0 || stride == 0 {
            return Err(Error::Input(format!(
                "need n_iters ≥ 1 and stride ≥ 1, got {n_iters} and {stride}"
            )));
        }
        let mut records = Vec::with_capacity(n_iters / stride);
        let accepted = self.run_with(init, n_iters, rng, |i, s, acc| {
            if i % stride == 0 {
                records.push(Record {
                    iter: i,
                    theta: s.theta.clone(),
                    w: s.w,
                    accepted: acc,
                });
            }
        })?;
        Ok(ChainTrace {
            seed,
            chain,
            kernel: self.spec.to_string(),
            target: self.target.to_string(),
            proposal: self.proposal.to_string(),
            noise: self.noise.to_string(),
            n_iters,
            stride,
            accepted,
            records,
        })
    }
}

/// Runs a chain from an explicit initial state on stream 0 of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    spec: KernelSpec,
    target: &TargetModel,
    proposal: &ProposalKernel,
    noise: &NoiseModel,
    init: &ChainState,
    n_iters: usize,
    stride: usize,
    seed: u64,
) -> Result<ChainTrace> {
    let cfg = ChainConfig::new(spec, target.clone(), proposal.clone(), noise.clone())?;
    let mut rng = chain_rng(seed, 0);
    cfg.run_from(init, n_iters, stride, seed, 0, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub w: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub seed: u64,
    pub chain: u64,
    pub kernel: String,
    pub target: String,
    pub proposal: String,
    pub noise: String,
    pub n_iters: usize,
    pub stride: usize,
    /// Accepted moves over all `n_iters` transitions, not just recorded ones.
    pub accepted: usize,
    pub records: Vec<Record>,
}

impl ChainTrace {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.n_iters as f64
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `h` evaluated along the recorded states.
    pub fn map<F: Fn(&[f64], f64) -> f64>(&self, h: F) -> Vec<f64> {
        self.records.iter().map(|r| h(&r.theta, r.w)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.records.first().map_or(0, |r| r.theta.len());
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend((1..=d).map(|i| format!("theta_{i}")));
        header.extend(["w".to_string(), "accepted".to_string()]);
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string()];
            row.extend(r.theta.iter().map(|x| x.to_string()));
            row.push(r.w.to_string());
            row.push((r.accepted as u8).to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// The summary sidecar, as a JSON object.
    pub fn summary_json(&self) -> String {
        format!(
            "{{\n  \"seed\": {},\n  \"chain\": {},\n  \"kernel\": \"{}\",\n  \"target\": \"{}\",\n  \"proposal\": \"{}\",\n  \"noise\": \"{}\",\n  \"n_iters\": {},\n  \"stride\": {},\n  \"records\": {},\n  \"accepted\": {},\n  \"acceptance_rate\": {}\n}}\n",
            self.seed,
            self.chain,
            self.kernel,
            self.target,
            self.proposal,
            self.noise,
            self.n_iters,
            self.stride,
            self.records.len(),
            self.accepted,
            self.acceptance_rate()
        )
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to each other.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let csv_path = stem.with_extension("csv");
        self.write_csv(std::fs::File::create(&csv_path)?)?;
        std::fs::write(stem.with_extension("json"), self.summary_json())?;
        Ok(())
    }
}

/// Exact transition matrix of a kernel on a finite θ-grid × w-grid.
///
/// States are ordered θ-major: index `i * w_grid.len() + k` is (θ = i, w = w_grid[k]).
/// `w_proposal(k, l)` is the probability of proposing `w_grid[l]` from `w_grid[k]`;
/// for the independent kernels it must not depend on `k`.
pub fn grid_transition_matrix<F>(
    spec: &KernelSpec,
    target: &TargetModel,
    proposal: &ProposalKernel,
    w_grid: &[f64],
    w_proposal: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, usize) -> f64,
{
    proposal.check_compatible(target)?;
    spec.validate()?;
    let TargetModel::DiscreteGrid { masses } = target else {
        return Err(Error::Input(
            "transition matrices need a grid target".into(),
        ));
    };
    let (nt, nw) = (masses.len(), w_grid.len());
    let n = nt * nw;
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..nt {
        let q_row = proposal.grid_row(target, i);
        for k in 0..nw {
            let from = ChainState::new(vec![i as f64], w_grid[k]);
            let row = i * nw + k;
            let mut moved = 0.0;
            for (j, &qj) in q_row.iter().enumerate() {
                if qj == 0.0 {
                    continue;
                }
                let log_r = log_ratio(target, proposal, &from.theta, &[j as f64]);
                let w_moves: Vec<(usize, f64)> = match spec.kind {
                    KernelKind::Mh => vec![(k, 1.0)],
                    _ => (0..nw).map(|l| (l, w_proposal(k, l))).collect(),
                };
                for (l, ql) in w_moves {
                    if ql == 0.0 {
                        continue;
                    }
                    let to = ChainState::new(vec![j as f64], w_grid[l]);
                    let p = qj * ql * acceptance_prob(spec, &from, &to, log_r)?;
                    m[row][j * nw + l] += p;
                    moved += p;
                }
            }
            m[row][row] += 1.0 - moved;
        }
    }
    if spec.delta > 0.0 {
        for (r, row) in m.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x *= 1.0 - spec.delta;
                if r == c {
                    *x += spec.delta;
                }
            }
        }
    }
    Ok(m)
}
