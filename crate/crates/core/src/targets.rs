//! Target densities and symmetric Metropolis–Hastings proposals.

use crate::error::{param, Error, Result};
use crate::noise::{read_column_csv, split_descriptor, Fields};
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub enum TargetModel {
    /// `π(θ) ∝ exp(-‖θ‖²/2)` on `R^d`.
    GaussianIso { d: usize },
    /// Explicit masses on states `0..k`, encoded as one-element θ vectors.
    DiscreteGrid { masses: Vec<f64> },
}

impl TargetModel {
    pub fn gaussian(d: usize) -> Result<Self> {
        let t = TargetModel::GaussianIso { d };
        t.validate()?;
        Ok(t)
    }

    pub fn grid(masses: Vec<f64>) -> Result<Self> {
        let t = TargetModel::DiscreteGrid { masses };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetModel::GaussianIso { d } if *d == 0 => Err(param("dimension must be at least 1")),
            TargetModel::GaussianIso { .. } => Ok(()),
            TargetModel::DiscreteGrid { masses } => {
                if masses.is_empty() {
                    return Err(param("grid target needs at least one state"));
                }
                if masses.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
                    return Err(param("grid masses must be positive and finite"));
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(param(format!("grid masses sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Length of θ.
    pub fn dim(&self) -> usize {
        match self {
            TargetModel::GaussianIso { d } => *d,
            TargetModel::DiscreteGrid { .. } => 1,
        }
    }

    pub fn origin(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// Grid index encoded in θ, if θ is a state of the grid.
    pub fn grid_index(&self, theta: &[f64]) -> Option<usize> {
        match self {
            TargetModel::DiscreteGrid { masses } => {
                let x = *theta.first()?;
                (theta.len() == 1 && x >= 0.0 && x.fract() == 0.0 && (x as usize) < masses.len())
                    .then_some(x as usize)
            }
            TargetModel::GaussianIso { .. } => None,
        }
    }

    /// Unnormalised log density; `-∞` off the support.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match self {
            TargetModel::GaussianIso { d } => {
                if theta.len() != *d {
                    return f64::NEG_INFINITY;
                }
                -0.5 * theta.iter().map(|x| x * x).sum::<f64>()
            }
            TargetModel::DiscreteGrid { masses } => match self.grid_index(theta) {
                Some(k) => masses[k].ln(),
                None => f64::NEG_INFINITY,
            },
        }
    }

    /// An exact draw from π.
    pub fn sample_exact<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            TargetModel::GaussianIso { d } => (0..*d).map(|_| rng.sample(StandardNormal)).collect(),
            TargetModel::DiscreteGrid { masses } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, m) in masses.iter().enumerate() {
                    acc += m;
                    if u < acc {
                        return vec![k as f64];
                    }
                }
                vec![(masses.len() - 1) as f64]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalKernel {
    /// `θ' ~ N(θ, λ² I / div)`; `div = None` means divide by the dimension.
    RandomWalkGauss { lambda: f64, div: Option<f64> },
    /// ±1 with probability ½ each on a grid; a step off either end stays put.
    DiscreteRW,
}

impl ProposalKernel {
    pub fn random_walk(lambda: f64, div: Option<f64>) -> Result<Self> {
        let p = ProposalKernel::RandomWalkGauss { lambda, div };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ProposalKernel::RandomWalkGauss { lambda, div } => {
                if !(lambda.is_finite() && *lambda >= 0.0) {
                    return Err(param(format!(
                        "proposal scale must be non-negative, got {lambda}"
                    )));
                }
                if let Some(div) = div {
                    if !(div.is_finite() && *div > 0.0) {
                        return Err(param(format!(
                            "covariance divisor must be positive, got {div}"
                        )));
                    }
                }
                Ok(())
            }
            ProposalKernel::DiscreteRW => Ok(()),
        }
    }

    /// Per-coordinate standard deviation for a target of dimension `d`.
    pub fn step_sd(&self, d: usize) -> f64 {
        match self {
            ProposalKernel::RandomWalkGauss { lambda, div } => {
                lambda / div.unwrap_or(d as f64).sqrt()
            }
            ProposalKernel::DiscreteRW => 1.0,
        }
    }

    pub fn check_compatible(&self, target: &TargetModel) -> Result<()> {
        self.validate()?;
        target.validate()?;
        match (self, target) {
            (ProposalKernel::RandomWalkGauss { .. }, TargetModel::GaussianIso { .. })
            | (ProposalKernel::DiscreteRW, TargetModel::DiscreteGrid { .. }) => Ok(()),
            _ => Err(Error::Input(format!(
                "proposal `{self}` cannot be used with target `{target}`"
            ))),
        }
    }

    /// Draws θ' given θ. Consumes `d` normals (random walk) or one uniform (grid).
    pub fn propose<R: Rng + ?Sized>(
        &self,
        target: &TargetModel,
        theta: &[f64],
        rng: &mut R,
    ) -> Vec<f64> {
        match self {
            ProposalKernel::RandomWalkGauss { .. } => {
                let sd = self.step_sd(theta.len());
                theta
                    .iter()
                    .map(|x| x + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            ProposalKernel::DiscreteRW => {
                let k = theta[0];
                let last = match target {
                    TargetModel::DiscreteGrid { masses } => (masses.len() - 1) as f64,
                    TargetModel::GaussianIso { .. } => f64::INFINITY,
                };
                let up = rng.random::<f64>() < 0.5;
                let next = if up { k + 1.0 } else { k - 1.0 };
                if next < 0.0 || next > last {
                    vec![k]
                } else {
                    vec![next]
                }
            }
        }
    }

    /// `log q(to | from)`, up to a constant shared by every pair.
    pub fn log_density(&self, target: &TargetModel, from: &[f64], to: &[f64]) -> f64 {
        match self {
            ProposalKernel::RandomWalkGauss { .. } => {
                let sd = self.step_sd(from.len());
                let sq: f64 = from.iter().zip(to).map(|(a, b)| (a - b).powi(2)).sum();
                -0.5 * sq / (sd * sd)
            }
            ProposalKernel::DiscreteRW => {
                let (Some(i), Some(j)) = (target.grid_index(from), target.grid_index(to)) else {
                    return f64::NEG_INFINITY;
                };
                let k = match target {
                    TargetModel::DiscreteGrid { masses } => masses.len(),
                    TargetModel::GaussianIso { .. } => unreachable!(),
                };
                let p: f64 = if i.abs_diff(j) == 1 {
                    0.5
                } else if i == j {
                    // held at an end; a single state always holds
                    match (k, i == 0 || i == k - 1) {
                        (1, _) => 1.0,
                        (_, true) => 0.5,
                        (_, false) => 0.0,
                    }
                } else {
                    0.0
                };
                p.ln()
            }
        }
    }

    /// Exact transition probabilities `q(j | i)` over a grid.
    pub fn grid_row(&self, target: &TargetModel, i: usize) -> Vec<f64> {
        let k = match target {
            TargetModel::DiscreteGrid { masses } => masses.len(),
            TargetModel::GaussianIso { .. } => return Vec::new(),
        };
        (0..k)
            .map(|j| self.log_density(target, &[i as f64], &[j as f64]).exp())
            .collect()
    }
}

/// `log r(θ, θ') = log π(θ') q(θ|θ') − log π(θ) q(θ'|θ)`; `-∞` off the support.
pub fn log_ratio(
    target: &TargetModel,
    proposal: &ProposalKernel,
    theta: &[f64],
    theta_prime: &[f64],
) -> f64 {
    let here = target.log_density(theta);
    let there = target.log_density(theta_prime);
    if here == f64::NEG_INFINITY || there == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    there - here + proposal.log_density(target, theta_prime, theta)
        - proposal.log_density(target, theta, theta_prime)
}

/// Estimate of `r(θ) = E_{θ'∼q(·|θ)}[r(θ, θ')]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RBar {
    pub value: f64,
    pub std_error: f64,
    /// Computed by exact summation rather than sampling.
    pub exact: bool,
    /// The running mean overflowed; `value` is `+∞`.
    pub divergent: bool,
}

const OVERFLOW: f64 = 1e300;

pub fn estimate_r_bar<R: Rng + ?Sized>(
    target: &TargetModel,
    proposal: &ProposalKernel,
    theta: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<RBar> {
    proposal.check_compatible(target)?;
    if target.log_density(theta) == f64::NEG_INFINITY {
        return Err(Error::Input(format!(
            "θ = {theta:?} is outside the target's support"
        )));
    }
    if let TargetModel::DiscreteGrid { .. } = target {
        let i = target.grid_index(theta).expect("checked support");
        let value = proposal
            .grid_row(target, i)
            .iter()
            .enumerate()
            .filter(|(_, q)| **q > 0.0)
            .map(|(j, q)| q * log_ratio(target, proposal, theta, &[j as f64]).exp())
            .sum();
        return Ok(RBar {
            value,
            std_error: 0.0,
            exact: true,
            divergent: false,
        });
    }
    if n_mc < 100 {
        return Err(Error::Input(format!(
            "estimate_r_bar needs at least 100 draws, got {n_mc}"
        )));
    }
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n_mc {
        let prop = proposal.propose(target, theta, rng);
        let r = log_ratio(target, proposal, theta, &prop).exp();
        let delta = r - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (r - mean);
        if !(mean.abs() < OVERFLOW) {
            return Ok(RBar {
                value: f64::INFINITY,
                std_error: f64::INFINITY,
                exact: false,
                divergent: true,
            });
        }
    }
    let var = m2 / (n_mc - 1) as f64;
    Ok(RBar {
        value: mean,
        std_error: (var / n_mc as f64).sqrt(),
        exact: false,
        divergent: false,
    })
}

impl fmt::Display for TargetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetModel::GaussianIso { d } => write!(f, "gauss:d={d}"),
            TargetModel::DiscreteGrid { masses } => {
                let m: Vec<String> = masses.iter().map(|x| x.to_string()).collect();
                write!(f, "grid:{}", m.join(";"))
            }
        }
    }
}

impl FromStr for TargetModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.trim().strip_prefix("grid:") {
            let masses = match rest.strip_prefix('@') {
                Some(path) => read_column_csv(Path::new(path))?,
                None => rest
                    .split(';')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Descriptor {
                        descriptor: s.to_string(),
                        reason: "masses must be numbers separated by `;` or `@file.csv`".into(),
                    })?,
            };
            return TargetModel::grid(masses);
        }
        let (kind, kv) = split_descriptor(s)?;
        let fields = Fields::new(s, kv);
        match kind {
            "gauss" => {
                fields.reject_unknown(&["d"])?;
                TargetModel::gaussian(fields.u64("d")? as usize)
            }
            other => Err(Error::Descriptor {
                descriptor: s.to_string(),
                reason: format!("unknown target `{other}`"),
            }),
        }
    }
}

impl fmt::Display for ProposalKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProposalKernel::RandomWalkGauss {
                lambda,
                div: Some(div),
            } => write!(f, "rw:lambda={lambda},div={div}"),
            ProposalKernel::RandomWalkGauss { lambda, div: None } => {
                write!(f, "rw:lambda={lambda}")
            }
            ProposalKernel::DiscreteRW => f.write_str("discrete-rw"),
        }
    }
}

impl FromStr for ProposalKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, kv) = split_descriptor(s)?;
        let fields = Fields::new(s, kv);
        match kind {
            "rw" => {
                fields.reject_unknown(&["lambda", "div"])?;
                ProposalKernel::random_walk(fields.f64("lambda")?, fields.opt_f64("div")?)
            }
            "discrete-rw" => {
                fields.reject_unknown(&[])?;
                Ok(ProposalKernel::DiscreteRW)
            }
            other => Err(Error::Descriptor {
                descriptor: s.to_string(),
                reason: format!("unknown proposal `{other}`"),
            }),
        }
    }
}
