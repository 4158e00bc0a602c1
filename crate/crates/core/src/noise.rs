//! Multiplicative noise models for the likelihood estimator.
//!
//! `W` is the ratio of the estimated density to the true density at a point.
//! A pseudo-marginal chain only ever sees `W`, so every model here is
//! described by how `W` is drawn and by a handful of exact moments.

use crate::error::{param, Error, Result};
use crate::quad::{self, Tolerance};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// `W ≡ 1`: the exact density is available.
    PointMass,
    /// `log W ~ N(-σ²/2, σ²)`.
    LogNormal { sigma: f64 },
    /// Density `a / (1 + w)^(1 + a)` on `w ≥ 0`.
    ShiftedPareto { a: f64 },
    /// Product over `t` of `Bin(n, p̃_t) / (n p̃_t)` with
    /// `p̃_t = p_t exp(-‖θ‖² / 2T)`.
    BinomialProduct {
        n: u64,
        success_probs: Vec<f64>,
        scale_halfwidth: f64,
    },
    /// LogNormal marginal; `log W'` given `W` is an AR(1) step with correlation `rho`.
    CorrelatedLogNormal { sigma: f64, rho: f64 },
    /// ShiftedPareto marginal; conditional update through a Box–Muller rotation
    /// of `E = 2a log(1 + W) ~ Exp(1/2)`.
    CorrelatedPareto { a: f64 },
}

/// Variance of `log W`, which need not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogVariance {
    Value(f64),
    /// `P(W = 0) > 0`, so `E[log W] = -∞`.
    Undefined {
        prob_zero: f64,
    },
}

impl LogVariance {
    pub fn value(&self) -> Option<f64> {
        match *self {
            LogVariance::Value(v) => Some(v),
            LogVariance::Undefined { .. } => None,
        }
    }
}

impl fmt::Display for LogVariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogVariance::Value(v) => write!(f, "{v}"),
            LogVariance::Undefined { .. } => f.write_str("undefined"),
        }
    }
}

impl NoiseModel {
    pub fn lognormal(sigma: f64) -> Result<Self> {
        let m = NoiseModel::LogNormal { sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn shifted_pareto(a: f64) -> Result<Self> {
        let m = NoiseModel::ShiftedPareto { a };
        m.validate()?;
        Ok(m)
    }

    /// `scale_halfwidth` defaults to the number of factors when `None`.
    pub fn binomial_product(
        n: u64,
        success_probs: Vec<f64>,
        scale_halfwidth: Option<f64>,
    ) -> Result<Self> {
        let scale_halfwidth = scale_halfwidth.unwrap_or(success_probs.len() as f64);
        let m = NoiseModel::BinomialProduct {
            n,
            success_probs,
            scale_halfwidth,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn correlated_lognormal(sigma: f64, rho: f64) -> Result<Self> {
        let m = NoiseModel::CorrelatedLogNormal { sigma, rho };
        m.validate()?;
        Ok(m)
    }

    pub fn correlated_pareto(a: f64) -> Result<Self> {
        let m = NoiseModel::CorrelatedPareto { a };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::PointMass => Ok(()),
            NoiseModel::LogNormal { sigma } => check_sigma(*sigma),
            NoiseModel::ShiftedPareto { a } | NoiseModel::CorrelatedPareto { a } => {
                if a.is_finite() && *a > 1.0 {
                    Ok(())
                } else {
                    Err(param(format!("Pareto tail index must exceed 1, got {a}")))
                }
            }
            NoiseModel::BinomialProduct {
                n,
                success_probs,
                scale_halfwidth,
            } => {
                if *n == 0 {
                    return Err(param("particle count n must be at least 1"));
                }
                if success_probs.is_empty() {
                    return Err(param(
                        "binomial product needs at least one success probability",
                    ));
                }
                if let Some(p) = success_probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                    return Err(param(format!(
                        "success probabilities must lie in (0, 1), got {p}"
                    )));
                }
                if !(scale_halfwidth.is_finite() && *scale_halfwidth > 0.0) {
                    return Err(param(format!(
                        "scale halfwidth must be positive, got {scale_halfwidth}"
                    )));
                }
                Ok(())
            }
            NoiseModel::CorrelatedLogNormal { sigma, rho } => {
                check_sigma(*sigma)?;
                if (0.0..1.0).contains(rho) {
                    Ok(())
                } else {
                    Err(param(format!("correlation must lie in [0, 1), got {rho}")))
                }
            }
        }
    }

    pub fn is_correlated(&self) -> bool {
        matches!(
            self,
            NoiseModel::CorrelatedLogNormal { .. } | NoiseModel::CorrelatedPareto { .. }
        )
    }

    /// The model the marginal draws come from.
    pub fn marginal(&self) -> NoiseModel {
        match self {
            NoiseModel::CorrelatedLogNormal { sigma, .. } => {
                NoiseModel::LogNormal { sigma: *sigma }
            }
            NoiseModel::CorrelatedPareto { a } => NoiseModel::ShiftedPareto { a: *a },
            other => other.clone(),
        }
    }

    /// Whether the proposal law of `W` depends on θ.
    pub fn depends_on_theta(&self) -> bool {
        matches!(self, NoiseModel::BinomialProduct { .. })
    }

    /// Exact `E[W]`.
    pub fn mean(&self) -> f64 {
        match self.marginal() {
            NoiseModel::ShiftedPareto { a } => 1.0 / (a - 1.0),
            _ => 1.0,
        }
    }

    /// Whether `E[W^k]` is finite, for `k ≥ 0`.
    pub fn has_finite_moment(&self, k: f64) -> bool {
        match self.marginal() {
            NoiseModel::ShiftedPareto { a } => k < a,
            _ => true,
        }
    }

    /// Draws `W` from the marginal proposal law at `theta`.
    ///
    /// `theta` is only read by `BinomialProduct`.
    pub fn sample<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            NoiseModel::PointMass => 1.0,
            NoiseModel::LogNormal { sigma } | NoiseModel::CorrelatedLogNormal { sigma, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                (-0.5 * sigma * sigma + sigma * z).exp()
            }
            NoiseModel::ShiftedPareto { a } | NoiseModel::CorrelatedPareto { a } => {
                let v: f64 = rng.random();
                // (1 - V)^(-1/a) - 1
                (-(-v).ln_1p() / a).exp_m1()
            }
            NoiseModel::BinomialProduct {
                n,
                success_probs,
                scale_halfwidth,
            } => {
                let damp = damping(theta, *scale_halfwidth);
                let mut w = 1.0;
                for &p in success_probs {
                    let pt = p * damp;
                    let hits = Binomial::new(*n, pt)
                        .map_err(|e| param(format!("binomial draw with p = {pt}: {e}")))?
                        .sample(rng);
                    if hits == 0 {
                        return Ok(0.0);
                    }
                    w *= hits as f64 / (*n as f64 * pt);
                }
                w
            }
        })
    }

    /// Draws `W'` given the current `W = w` for a correlated model.
    pub fn sample_correlated<R: Rng + ?Sized>(&self, w: f64, rng: &mut R) -> Result<f64> {
        self.validate()?;
        match self {
            NoiseModel::CorrelatedLogNormal { sigma, rho } => {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::InvalidState(format!(
                        "correlated lognormal update needs finite w > 0, got {w}"
                    )));
                }
                let s2 = sigma * sigma;
                let mean = -0.5 * s2 + rho * (w.ln() + 0.5 * s2);
                let sd = sigma * (1.0 - rho * rho).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                Ok((mean + sd * z).exp())
            }
            NoiseModel::CorrelatedPareto { a } => {
                if !(w >= 0.0) {
                    return Err(Error::InvalidState(format!(
                        "correlated Pareto update needs w >= 0, got {w}"
                    )));
                }
                let e = 2.0 * a * w.ln_1p();
                let u: f64 = rng.random::<f64>() * 2.0 * PI;
                let z: f64 = rng.sample(StandardNormal);
                let c = u.cos();
                let e_new = e * c * c + z * z;
                Ok((e_new / (2.0 * a)).exp_m1())
            }
            other => Err(Error::Unsupported {
                op: "sample_correlated",
                model: other.to_string(),
            }),
        }
    }

    /// Exact `E[W²]` at `theta`; `+∞` when the second moment diverges.
    pub fn second_moment(&self, theta: &[f64]) -> Result<f64> {
        self.validate()?;
        Ok(match self.marginal() {
            NoiseModel::PointMass => 1.0,
            NoiseModel::LogNormal { sigma } => (sigma * sigma).exp(),
            NoiseModel::ShiftedPareto { a } => {
                if a <= 2.0 {
                    f64::INFINITY
                } else {
                    // E[(1+W)^k] = a / (a - k)
                    a / (a - 2.0) - 2.0 * a / (a - 1.0) + 1.0
                }
            }
            NoiseModel::BinomialProduct {
                n,
                success_probs,
                scale_halfwidth,
            } => {
                let damp = damping(theta, scale_halfwidth);
                success_probs
                    .iter()
                    .map(|p| {
                        let pt = p * damp;
                        1.0 + (1.0 - pt) / (n as f64 * pt)
                    })
                    .product()
            }
            NoiseModel::CorrelatedLogNormal { .. } | NoiseModel::CorrelatedPareto { .. } => {
                unreachable!()
            }
        })
    }

    /// `Var(log W)`. Undefined when `W` has an atom at zero.
    pub fn log_noise_variance(&self) -> Result<LogVariance> {
        self.validate()?;
        Ok(match self.marginal() {
            NoiseModel::PointMass => LogVariance::Value(0.0),
            NoiseModel::LogNormal { sigma } => LogVariance::Value(sigma * sigma),
            NoiseModel::ShiftedPareto { a } => LogVariance::Value(pareto_log_variance(a)?),
            NoiseModel::BinomialProduct { .. } => {
                let p0 = self.prob_zero(&[])?;
                if p0 > 0.0 {
                    LogVariance::Undefined { prob_zero: p0 }
                } else {
                    // Only reachable if every (1 - p̃)^n underflows to zero.
                    return Err(Error::Numerical(crate::error::NumericalDiagnostics {
                        routine: "log_noise_variance",
                        message: "zero-probability underflow in binomial product".into(),
                        estimate: p0,
                        error_estimate: 0.0,
                        evaluations: 0,
                    }));
                }
            }
            NoiseModel::CorrelatedLogNormal { .. } | NoiseModel::CorrelatedPareto { .. } => {
                unreachable!()
            }
        })
    }

    /// Exact `P(W = 0)` at `theta`.
    pub fn prob_zero(&self, theta: &[f64]) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            NoiseModel::BinomialProduct {
                n,
                success_probs,
                scale_halfwidth,
            } => {
                let damp = damping(theta, *scale_halfwidth);
                let all_nonzero: f64 = success_probs
                    .iter()
                    .map(|p| -(1.0 - p * damp).powf(*n as f64))
                    .map(f64::ln_1p)
                    .sum();
                -all_nonzero.exp_m1()
            }
            _ => 0.0,
        })
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(param(format!("sigma must be positive, got {sigma}")))
    }
}

fn damping(theta: &[f64], halfwidth: f64) -> f64 {
    let sq: f64 = theta.iter().map(|x| x * x).sum();
    (-sq / (2.0 * halfwidth)).exp()
}

/// `log` of the density of `V = log W` under ShiftedPareto(a).
fn pareto_log_density_of_log(a: f64, v: f64) -> f64 {
    // log a + v - (1 + a) log(1 + e^v), with a stable softplus
    let softplus = if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    };
    a.ln() + v - (1.0 + a) * softplus
}

/// Integration window for `V = log W` leaving less than 1e-12 of mass outside.
pub(crate) fn pareto_log_window(a: f64) -> (f64, f64) {
    // Lower tail mass ≈ a e^{lo}; upper tail mass ≈ e^{-a hi}.
    let target = 1e-12_f64.ln();
    let lo = target - a.ln() - 1.0;
    let hi = (-target + 1.0) / a;
    (lo, hi)
}

fn pareto_log_variance(a: f64) -> Result<f64> {
    let (lo, hi) = pareto_log_window(a);
    let tol = Tolerance::new(1e-10, 1e-12);
    let pts = [lo, 0.0, hi];
    let mass = quad::integrate_pieces(|v| pareto_log_density_of_log(a, v).exp(), &pts, tol)?;
    let m1 = quad::integrate_pieces(|v| v * pareto_log_density_of_log(a, v).exp(), &pts, tol)?;
    let m2 = quad::integrate_pieces(|v| v * v * pareto_log_density_of_log(a, v).exp(), &pts, tol)?;
    let mean = m1.value / mass.value;
    Ok(m2.value / mass.value - mean * mean)
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::PointMass => f.write_str("pointmass"),
            NoiseModel::LogNormal { sigma } => write!(f, "lognormal:sigma={sigma}"),
            NoiseModel::ShiftedPareto { a } => write!(f, "pareto:a={a}"),
            NoiseModel::BinomialProduct {
                n,
                success_probs,
                scale_halfwidth,
            } => {
                let probs: Vec<String> = success_probs.iter().map(|p| p.to_string()).collect();
                write!(
                    f,
                    "binomprod:n={n},probs={},t={scale_halfwidth}",
                    probs.join(";")
                )
            }
            NoiseModel::CorrelatedLogNormal { sigma, rho } => {
                write!(f, "corr-lognormal:sigma={sigma},rho={rho}")
            }
            NoiseModel::CorrelatedPareto { a } => write!(f, "corr-pareto:a={a}"),
        }
    }
}

/// Splits `kind:key=value,key=value` into its parts.
pub(crate) fn split_descriptor(s: &str) -> Result<(&str, Vec<(&str, &str)>)> {
    let (kind, rest) = match s.split_once(':') {
        Some((k, r)) => (k.trim(), r),
        None => (s.trim(), ""),
    };
    let mut kv = Vec::new();
    for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| Error::Descriptor {
            descriptor: s.to_string(),
            reason: format!("expected key=value, got `{part}`"),
        })?;
        kv.push((k.trim(), v.trim()));
    }
    Ok((kind, kv))
}

pub(crate) struct Fields<'a> {
    descriptor: &'a str,
    kv: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    pub(crate) fn new(descriptor: &'a str, kv: Vec<(&'a str, &'a str)>) -> Self {
        Self { descriptor, kv }
    }

    fn err(&self, reason: String) -> Error {
        Error::Descriptor {
            descriptor: self.descriptor.to_string(),
            reason,
        }
    }

    pub(crate) fn raw(&self, key: &str) -> Option<&'a str> {
        self.kv.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    pub(crate) fn f64(&self, key: &str) -> Result<f64> {
        let v = self
            .raw(key)
            .ok_or_else(|| self.err(format!("missing `{key}`")))?;
        v.parse()
            .map_err(|_| self.err(format!("`{key}` is not a number: `{v}`")))
    }

    pub(crate) fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.f64(key).map(Some),
        }
    }

    pub(crate) fn u64(&self, key: &str) -> Result<u64> {
        let v = self
            .raw(key)
            .ok_or_else(|| self.err(format!("missing `{key}`")))?;
        v.parse()
            .map_err(|_| self.err(format!("`{key}` is not a non-negative integer: `{v}`")))
    }

    pub(crate) fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.kv.iter().find(|(k, _)| !allowed.contains(k)) {
            Some((k, _)) => Err(self.err(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

/// Reads a single-column CSV of reals with no header.
pub fn read_column_csv(path: &Path) -> Result<Vec<f64>> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("");
        if field.is_empty() && rec.len() <= 1 {
            continue;
        }
        let v: f64 = field.parse().map_err(|_| {
            Error::Input(format!(
                "{}: line {}: not a number: `{field}`",
                path.display(),
                i + 1
            ))
        })?;
        out.push(v);
    }
    Ok(out)
}

impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, kv) = split_descriptor(s)?;
        let fields = Fields::new(s, kv);
        let model = match kind {
            "pointmass" => {
                fields.reject_unknown(&[])?;
                NoiseModel::PointMass
            }
            "lognormal" => {
                fields.reject_unknown(&["sigma"])?;
                NoiseModel::LogNormal {
                    sigma: fields.f64("sigma")?,
                }
            }
            "pareto" => {
                fields.reject_unknown(&["a"])?;
                NoiseModel::ShiftedPareto {
                    a: fields.f64("a")?,
                }
            }
            "binomprod" => {
                fields.reject_unknown(&["n", "probs", "t"])?;
                let n = fields.u64("n")?;
                let raw = fields
                    .raw("probs")
                    .ok_or_else(|| fields.err("missing `probs`".into()))?;
                let probs = match raw.strip_prefix('@') {
                    Some(path) => read_column_csv(Path::new(path))?,
                    None => raw
                        .split(';')
                        .map(|p| p.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| fields.err(format!("cannot parse probabilities `{raw}`")))?,
                };
                let t = fields.opt_f64("t")?.unwrap_or(probs.len() as f64);
                NoiseModel::BinomialProduct {
                    n,
                    success_probs: probs,
                    scale_halfwidth: t,
                }
            }
            "corr-lognormal" => {
                fields.reject_unknown(&["sigma", "rho"])?;
                NoiseModel::CorrelatedLogNormal {
                    sigma: fields.f64("sigma")?,
                    rho: fields.f64("rho")?,
                }
            }
            "corr-pareto" => {
                fields.reject_unknown(&["a"])?;
                NoiseModel::CorrelatedPareto {
                    a: fields.f64("a")?,
                }
            }
            other => {
                return Err(Error::Descriptor {
                    descriptor: s.to_string(),
                    reason: format!("unknown noise model `{other}`"),
                })
            }
        };
        model.validate()?;
        Ok(model)
    }
}
