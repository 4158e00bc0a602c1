//! Bounds on the asymptotic variance of pseudo-marginal kernels.
//!
//! Every evaluator returns a [`BoundReport`]: the value, how it was obtained,
//! an error estimate, and the inputs it was computed from. `+∞` is a legal
//! value and always carries a reason.
//!
//! Lognormal integrals are computed in `z`, where `w = exp(-σ²/2 + σz)` and
//! `z` is standard normal. The `w ∨ w'` kink becomes the diagonal `z = z'`,
//! which is always used as a breakpoint.

use crate::error::{param, Error, NumericalDiagnostics, Result};
use crate::noise::NoiseModel;
use crate::quad::{self, Tolerance};
use crate::special::{norm_cdf, norm_pdf};
use crate::targets::{estimate_r_bar, ProposalKernel, TargetModel};
use rand::Rng;
use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ClosedForm => "closed-form",
            Method::Quadrature => "quadrature",
            Method::MonteCarlo => "monte-carlo",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub quantity: &'static str,
    pub value: f64,
    pub method: Method,
    /// Quadrature error bound or Monte Carlo standard error.
    pub error_estimate: f64,
    pub inputs: Vec<(&'static str, String)>,
    /// Set whenever `value` is `+∞`.
    pub infinite_reason: Option<String>,
    pub warnings: Vec<String>,
}

impl BoundReport {
    fn new(quantity: &'static str, value: f64, method: Method, error_estimate: f64) -> Self {
        BoundReport {
            quantity,
            value,
            method,
            error_estimate,
            inputs: Vec::new(),
            infinite_reason: None,
            warnings: Vec::new(),
        }
    }

    fn infinite(quantity: &'static str, method: Method, reason: impl Into<String>) -> Self {
        BoundReport {
            infinite_reason: Some(reason.into()),
            ..BoundReport::new(quantity, f64::INFINITY, method, 0.0)
        }
    }

    fn input(mut self, key: &'static str, value: impl ToString) -> Self {
        self.inputs.push((key, value.to_string()));
        self
    }

    pub fn is_infinite(&self) -> bool {
        self.value == f64::INFINITY
    }

    /// Relative error estimate; zero for exact values.
    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 || !self.value.is_finite() {
            0.0
        } else {
            self.error_estimate / self.value.abs()
        }
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} = {} [{}, ±{:.3e}]",
            self.quantity, self.value, self.method, self.error_estimate
        )?;
        if let Some(reason) = &self.infinite_reason {
            write!(f, " ({reason})")?;
        }
        for w in &self.warnings {
            write!(f, " warning: {w}")?;
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64, allow_zero: bool) -> Result<()> {
    let ok = sigma.is_finite() && (sigma > 0.0 || (allow_zero && sigma == 0.0));
    if ok {
        Ok(())
    } else {
        Err(param(format!(
            "sigma must be {}, got {sigma}",
            if allow_zero {
                "non-negative"
            } else {
                "positive"
            }
        )))
    }
}

fn check_gap(name: &str, eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(param(format!("{name} must lie in (0, 1], got {eps}")))
    }
}

/// `R_S(σ) = 2 exp(σ²) Φ(σ/√2)`: the noise multiplier under lognormal noise.
pub fn r_s_closed_form(sigma: f64) -> Result<BoundReport> {
    check_sigma(sigma, true)?;
    let value = 2.0 * (sigma * sigma).exp() * norm_cdf(sigma / std::f64::consts::SQRT_2);
    let report = if value.is_finite() {
        BoundReport::new("R_S", value, Method::ClosedForm, 0.0)
    } else {
        BoundReport::infinite(
            "R_S",
            Method::ClosedForm,
            format!("exp(σ²) overflows at σ = {sigma}"),
        )
    };
    Ok(report.input("sigma", sigma))
}

fn lognormal_w(sigma: f64, z: f64) -> f64 {
    (-0.5 * sigma * sigma + sigma * z).exp()
}

/// Integration window in `z` for integrands up to `w(z)^k φ(z)`.
fn z_window(sigma: f64, k: f64) -> (f64, f64) {
    (-12.0, k * sigma + 12.0)
}

/// `E[W W' (W ∨ W')]` over independent pairs from `noise`.
///
/// Lognormal noise uses nested quadrature; other models use `n_mc` Monte Carlo pairs.
pub fn r_s_numeric<R: Rng + ?Sized>(
    noise: &NoiseModel,
    n_mc: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    let noise = noise.marginal();
    noise.validate()?;
    let report = match &noise {
        NoiseModel::PointMass => BoundReport::new("R_S", 1.0, Method::ClosedForm, 0.0),
        _ if noise.second_moment(&[])?.is_infinite() => {
            BoundReport::infinite("R_S", Method::ClosedForm, "E[W²] = ∞, so R_S = ∞")
        }
        NoiseModel::LogNormal { sigma } => r_s_lognormal_quadrature(*sigma)?,
        _ => {
            if n_mc < 2 {
                return Err(Error::Input("Monte Carlo needs at least 2 pairs".into()));
            }
            let mut acc = Welford::default();
            for _ in 0..n_mc {
                let w = noise.sample(&[], rng)?;
                let w2 = noise.sample(&[], rng)?;
                acc.push(w * w2 * w.max(w2));
            }
            let mut r = BoundReport::new("R_S", acc.mean(), Method::MonteCarlo, acc.std_error());
            if r.relative_error() > 0.1 {
                r.warnings.push(format!(
                    "relative standard error {:.2} exceeds 10%",
                    r.relative_error()
                ));
            }
            r.input("n_mc", n_mc)
        }
    };
    Ok(report.input("noise", &noise))
}

fn r_s_lognormal_quadrature(sigma: f64) -> Result<BoundReport> {
    // By symmetry, R = 2 ∫ φ(z) w(z)² ∫_{z' < z} φ(z') w(z') dz' dz.
    let (lo, hi) = z_window(sigma, 2.0);
    let inner_tol = Tolerance::new(1e-15, 1e-13);
    let mut inner_err: f64 = 0.0;
    let mut failure = None;
    let outer = quad::integrate(
        |z| {
            let inner =
                match quad::integrate(|zp| norm_pdf(zp) * lognormal_w(sigma, zp), lo, z, inner_tol)
                {
                    Ok(r) => r,
                    Err(e) => {
                        failure.get_or_insert(e);
                        return f64::NAN;
                    }
                };
            let w = lognormal_w(sigma, z);
            let weight = norm_pdf(z) * w * w;
            inner_err = inner_err.max(inner.error * weight);
            weight * inner.value
        },
        lo,
        hi,
        Tolerance::new(1e-14, 1e-12),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let outer = outer?;
    let err = 2.0 * (outer.error + inner_err * (hi - lo));
    Ok(BoundReport::new(
        "R_S",
        2.0 * outer.value,
        Method::Quadrature,
        err,
    ))
}

/// The bound of Andrieu, Lee, Power and Wang (2022) in the lognormal regime.
pub fn r_alpw22(sigma: f64) -> Result<BoundReport> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(param(format!(
            "R_ALPW22 is defined for σ > 0 only (it has a 1/σ factor), got {sigma}"
        )));
    }
    let s2 = sigma * sigma;
    let value = 2.0 * (2.0 * PI).sqrt() * s2.exp() * (1.0 + s2) / sigma * norm_cdf(sigma)
        + 2.0 * (0.5 * s2).exp();
    let report = if value.is_finite() {
        BoundReport::new("R_ALPW22", value, Method::ClosedForm, 0.0)
    } else {
        BoundReport::infinite(
            "R_ALPW22",
            Method::ClosedForm,
            format!("exp(σ²) overflows at σ = {sigma}"),
        )
    };
    Ok(report.input("sigma", sigma))
}

/// Mean acceptance of the noise component from `w`: `E[1 ∧ W'/w]`, lognormal noise.
pub fn alpha_bar_1(w: f64, sigma: f64) -> Result<f64> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(param(format!("w must be positive, got {w}")));
    }
    check_sigma(sigma, false)?;
    let lw = w.ln() / sigma;
    Ok(norm_cdf(-0.5 * sigma + lw) / w + norm_cdf(-0.5 * sigma - lw))
}

/// `ᾱ₁` as a function of `z`, stable in both tails.
fn alpha_bar_z(sigma: f64, z: f64) -> f64 {
    (0.5 * sigma * sigma - sigma * z).exp() * norm_cdf(z - sigma) + norm_cdf(-z)
}

/// `α̃₁⁻¹ = ∫ q̃(w) w / ᾱ₁(w) dw`.
///
/// Infinite whenever `E[W²] = ∞` (`ᾱ₁(w) ~ 1/w` for large `w`); evaluated by
/// quadrature for lognormal noise.
pub fn inverse_alpha_tilde(noise: &NoiseModel, quad_tol: f64) -> Result<BoundReport> {
    let noise = noise.marginal();
    noise.validate()?;
    if noise.second_moment(&[])?.is_infinite() {
        return Ok(BoundReport::infinite(
            "inv_alpha_tilde",
            Method::ClosedForm,
            "E[W²] = ∞, so 1/α̃₁ = ∞",
        )
        .input("noise", &noise));
    }
    match noise {
        NoiseModel::PointMass => {
            Ok(
                BoundReport::new("inv_alpha_tilde", 1.0, Method::ClosedForm, 0.0)
                    .input("noise", &noise),
            )
        }
        NoiseModel::LogNormal { sigma } => {
            let (lo, hi) = z_window(sigma, 2.0);
            let r = quad::integrate(
                |z| norm_pdf(z) * lognormal_w(sigma, z) / alpha_bar_z(sigma, z),
                lo,
                hi,
                Tolerance::new(quad_tol, 0.0),
            )?;
            Ok(
                BoundReport::new("inv_alpha_tilde", r.value, Method::Quadrature, r.error)
                    .input("noise", &noise),
            )
        }
        other => Err(Error::Unsupported {
            op: "inverse_alpha_tilde",
            model: other.to_string(),
        }),
    }
}

/// The simplified bound of Doucet, Pitt, Deligiannidis and Kohn (2015),
/// `2/α̃₁ − ∬ w q̃ q̃' α₁(w, w') / (ᾱ₁(w) ᾱ₁(w'))`, lognormal noise.
pub fn r_dpdk15(sigma: f64, quad_tol: f64) -> Result<BoundReport> {
    check_sigma(sigma, false)?;
    if !(quad_tol > 0.0) {
        return Err(param(format!(
            "quadrature tolerance must be positive, got {quad_tol}"
        )));
    }
    let inv = inverse_alpha_tilde(&NoiseModel::LogNormal { sigma }, quad_tol)?;

    // w α₁(w, w') = w ∧ w' is symmetric, so the double integral is
    // 2 ∫ φ(z)/ᾱ(z) ∫_{z' < z} φ(z') w(z') / ᾱ(z') dz' dz.
    let (lo, hi) = z_window(sigma, 2.0);
    let mut failure = None;
    let mut inner_err: f64 = 0.0;
    let corr = quad::integrate(
        |z| {
            let inner = quad::integrate(
                |zp| norm_pdf(zp) * lognormal_w(sigma, zp) / alpha_bar_z(sigma, zp),
                lo,
                z,
                Tolerance::new(quad_tol * 1e-2, 1e-13),
            );
            match inner {
                Ok(r) => {
                    let weight = norm_pdf(z) / alpha_bar_z(sigma, z);
                    inner_err = inner_err.max(r.error * weight);
                    weight * r.value
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        lo,
        hi,
        Tolerance::new(quad_tol, 0.0),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let corr = corr?;
    let value = 2.0 * inv.value - 2.0 * corr.value;
    let error = 2.0 * inv.error_estimate + 2.0 * (corr.error + inner_err * (hi - lo));
    Ok(
        BoundReport::new("R_DPDK15", value, Method::Quadrature, error)
            .input("sigma", sigma)
            .input("quad_tol", quad_tol),
    )
}

/// `{2R/ε_MH − 1} ‖h‖²`: upper bound on the pseudo-marginal asymptotic
/// variance of a θ-only function.
pub fn upper_bound_thm1(r: f64, eps_mh: f64, h_norm_sq: f64) -> Result<BoundReport> {
    check_gap("eps_mh", eps_mh)?;
    if !(r >= 1.0) {
        return Err(param(format!(
            "the noise multiplier R is at least 1, got {r}"
        )));
    }
    if !(h_norm_sq >= 0.0) {
        return Err(param(format!("‖h‖² must be non-negative, got {h_norm_sq}")));
    }
    let report = if r.is_infinite() {
        BoundReport::infinite("thm1_upper", Method::ClosedForm, "R = ∞")
    } else {
        BoundReport::new(
            "thm1_upper",
            (2.0 * r / eps_mh - 1.0) * h_norm_sq,
            Method::ClosedForm,
            0.0,
        )
    };
    Ok(report
        .input("R", r)
        .input("eps_mh", eps_mh)
        .input("h_norm_sq", h_norm_sq))
}

/// `{−1/ε_L + ε_L/(4 − 2ε_L)} ‖h‖² + ½ I`, with `I = ∫ π q̃ h² w² / r(θ)`.
pub fn lower_bound_thm2(eps_l: f64, h_norm_sq: f64, weighted_integral: f64) -> Result<BoundReport> {
    check_gap("eps_l", eps_l)?;
    if !(h_norm_sq >= 0.0 && weighted_integral >= 0.0) {
        return Err(param("‖h‖² and the weighted integral must be non-negative"));
    }
    let report = if weighted_integral.is_infinite() {
        BoundReport::infinite(
            "thm2_lower",
            Method::ClosedForm,
            "the weighted integral diverges, so Var = ∞",
        )
    } else {
        let value =
            (-1.0 / eps_l + eps_l / (4.0 - 2.0 * eps_l)) * h_norm_sq + 0.5 * weighted_integral;
        BoundReport::new("thm2_lower", value, Method::ClosedForm, 0.0)
    };
    Ok(report
        .input("eps_l", eps_l)
        .input("h_norm_sq", h_norm_sq)
        .input("weighted_integral", weighted_integral))
}

/// The θ-only specialisation: `−‖h‖²/ε_L + ‖h‖² E[W²] / (2c)` when `r(θ) ≤ c`.
pub fn lower_bound_corollary(
    eps_l: f64,
    h_norm_sq: f64,
    second_moment: f64,
    c: f64,
) -> Result<BoundReport> {
    check_gap("eps_l", eps_l)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(param(format!("c must be positive and finite, got {c}")));
    }
    let report = if second_moment.is_infinite() && h_norm_sq > 0.0 {
        BoundReport::infinite(
            "corollary_lower",
            Method::ClosedForm,
            "E[W²] = ∞, so Var = ∞",
        )
    } else {
        let value = -h_norm_sq / eps_l + h_norm_sq * second_moment / (2.0 * c);
        BoundReport::new("corollary_lower", value, Method::ClosedForm, 0.0)
    };
    Ok(report
        .input("eps_l", eps_l)
        .input("h_norm_sq", h_norm_sq)
        .input("second_moment", second_moment)
        .input("c", c))
}

/// A test function of the extended state.
#[derive(Clone, Copy)]
pub enum TestFunction<'a> {
    /// `h(θ, w) = h*(θ)`.
    Theta(&'a dyn Fn(&[f64]) -> f64),
    Joint(&'a dyn Fn(&[f64], f64) -> f64),
}

impl TestFunction<'_> {
    pub fn eval(&self, theta: &[f64], w: f64) -> f64 {
        match self {
            TestFunction::Theta(h) => h(theta),
            TestFunction::Joint(h) => h(theta, w),
        }
    }
}

/// Monte Carlo estimate of `∫ π(θ) q̃_θ(w) h(θ, w)² w² / r(θ)`.
///
/// θ is drawn exactly from π; `r(θ)` comes from [`estimate_r_bar`] with
/// `n_inner` draws (exact on grids).
pub fn estimate_thm2_integral<R: Rng + ?Sized>(
    target: &TargetModel,
    proposal: &ProposalKernel,
    noise: &NoiseModel,
    h: TestFunction<'_>,
    n_mc: usize,
    n_inner: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    proposal.check_compatible(target)?;
    noise.validate()?;
    if n_mc < 2 {
        return Err(Error::Input("Monte Carlo needs at least 2 draws".into()));
    }
    let noise = noise.marginal();
    let theta_only_divergent = matches!(h, TestFunction::Theta(_))
        && !noise.depends_on_theta()
        && noise.second_moment(&[])?.is_infinite();

    let mut acc = Welford::default();
    let mut first_half_se = f64::NAN;
    for i in 0..n_mc {
        let theta = target.sample_exact(rng);
        let w = if theta_only_divergent {
            1.0
        } else {
            noise.sample(&theta, rng)?
        };
        let hv = h.eval(&theta, w);
        let x = if hv == 0.0 {
            0.0
        } else {
            let r = estimate_r_bar(target, proposal, &theta, n_inner, rng)?;
            hv * hv * w * w / r.value
        };
        acc.push(x);
        if i + 1 == n_mc / 2 {
            first_half_se = acc.std_error();
        }
    }
    let base = |r: BoundReport| {
        r.input("noise", &noise)
            .input("n_mc", n_mc)
            .input("n_inner", n_inner)
    };
    if theta_only_divergent {
        // acc holds ∫ π h² / r, which multiplies E[W²] = ∞.
        return Ok(base(if acc.mean() == 0.0 {
            BoundReport::new("thm2_integral", 0.0, Method::MonteCarlo, 0.0)
        } else {
            BoundReport::infinite(
                "thm2_integral",
                Method::ClosedForm,
                "h depends on θ only and E[W²] = ∞",
            )
        }));
    }
    let mut report = BoundReport::new(
        "thm2_integral",
        acc.mean(),
        Method::MonteCarlo,
        acc.std_error(),
    );
    if n_mc >= 20 && acc.std_error() > 0.9 * first_half_se {
        report
            .warnings
            .push("standard error does not shrink with more draws: heavy tails suspected".into());
    }
    Ok(base(report))
}

/// How `‖h_w‖²_{L²(π)}` varies with `w`.
#[derive(Clone, Copy)]
pub enum SliceNorm<'a> {
    /// `h` does not depend on `w`.
    Constant(f64),
    Varying(&'a dyn Fn(f64) -> f64),
}

impl SliceNorm<'_> {
    fn at(&self, w: f64) -> f64 {
        match self {
            SliceNorm::Constant(c) => *c,
            SliceNorm::Varying(f) => f(w),
        }
    }
}

/// `(4/ε_MH) E[W W' (W ∨ W') ‖h_W‖²] − ‖h‖²_{L²(π×ν)}` over independent pairs.
pub fn upper_bound_thm3<R: Rng + ?Sized>(
    noise: &NoiseModel,
    h_slice_norm: SliceNorm<'_>,
    eps_mh: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    check_gap("eps_mh", eps_mh)?;
    let noise = noise.marginal();
    noise.validate()?;
    if n_mc < 2 {
        return Err(Error::Input("Monte Carlo needs at least 2 pairs".into()));
    }
    let mean_w = noise.mean();
    let heavy = noise.second_moment(&[])?.is_infinite();
    let mut acc = Welford::default();
    let mut any_mass = false;
    for _ in 0..n_mc {
        let w = noise.sample(&[], rng)?;
        let w2 = noise.sample(&[], rng)?;
        let n = h_slice_norm.at(w);
        any_mass |= n > 0.0;
        // ‖h‖² under ν = w q̃ / E[W] is estimated from the same draws.
        acc.push(4.0 / eps_mh * w * w2 * w.max(w2) * n - w * n / mean_w);
    }
    let mut report = if heavy && any_mass {
        BoundReport::infinite(
            "thm3_upper",
            Method::MonteCarlo,
            "E[W²] = ∞ and ‖h_w‖² > 0 on a set of positive mass",
        )
    } else {
        let mut r = BoundReport::new(
            "thm3_upper",
            acc.mean(),
            Method::MonteCarlo,
            acc.std_error(),
        );
        if r.relative_error() > 0.1 {
            r.warnings.push(format!(
                "relative standard error {:.2} exceeds 10%",
                r.relative_error()
            ));
        }
        r
    };
    report = report
        .input("noise", &noise)
        .input("eps_mh", eps_mh)
        .input("n_mc", n_mc);
    Ok(report)
}

/// Multiplier of `‖h*‖²` for the correlated kernel with `b(w) = w^β`:
/// `(2/(c_b² ε_MH)) E[(W ∨ W') W^{2β} W'^{2β}] − 1`, over exchangeable pairs.
///
/// Uncorrelated models use independent pairs; with `β = ½`, `c_b = 1` this is
/// the multiplier of [`upper_bound_thm1`].
pub fn upper_bound_thm4<R: Rng + ?Sized>(
    noise: &NoiseModel,
    b_exponent: f64,
    c_b: f64,
    eps_mh: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    check_gap("eps_mh", eps_mh)?;
    noise.validate()?;
    if !(b_exponent >= 0.0 && b_exponent.is_finite()) {
        return Err(param(format!(
            "the exponent of b must be non-negative, got {b_exponent}"
        )));
    }
    if !(c_b > 0.0 && c_b.is_finite()) {
        return Err(param(format!("c_b must be positive, got {c_b}")));
    }
    if n_mc < 2 {
        return Err(Error::Input("Monte Carlo needs at least 2 pairs".into()));
    }
    let tb = 2.0 * b_exponent;
    let scale = 2.0 / (c_b * c_b * eps_mh);
    let mut warnings = Vec::new();
    if noise.is_correlated() {
        // Young's inequality and exchangeability: E[(W∨W') W^{2β} W'^{2β}] ≤ 2 E[W^{1+4β}].
        if !noise.has_finite_moment(1.0 + 2.0 * tb) {
            warnings.push(format!(
                "finiteness not certified: E[W^{}] = ∞ under the marginal",
                1.0 + 2.0 * tb
            ));
        }
    } else if !(noise.has_finite_moment(1.0 + tb) && noise.has_finite_moment(tb)) {
        return Ok(BoundReport::infinite(
            "thm4_multiplier",
            Method::ClosedForm,
            format!("independent pairs with E[W^{}] = ∞", 1.0 + tb),
        )
        .input("noise", noise)
        .input("b_exponent", b_exponent));
    }
    let mut acc = Welford::default();
    for _ in 0..n_mc {
        let w = noise.sample(&[], rng)?;
        let w2 = if noise.is_correlated() {
            noise.sample_correlated(w, rng)?
        } else {
            noise.sample(&[], rng)?
        };
        acc.push(scale * w.max(w2) * (w * w2).powf(tb));
    }
    let mut r = BoundReport::new(
        "thm4_multiplier",
        acc.mean() - 1.0,
        Method::MonteCarlo,
        acc.std_error(),
    );
    if r.relative_error() > 0.1 {
        warnings.push(format!(
            "relative standard error {:.2} exceeds 10%",
            r.relative_error()
        ));
    }
    r.warnings = warnings;
    Ok(r.input("noise", noise)
        .input("b_exponent", b_exponent)
        .input("c_b", c_b)
        .input("eps_mh", eps_mh)
        .input("n_mc", n_mc))
}

/// Relative inefficiency `σ⁻² {2 R_S(σ) − ε_MH}` under lognormal noise with
/// cost proportional to `1/σ²`.
pub fn efficiency(sigma: f64, eps_mh: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(param(format!("sigma must be positive, got {sigma}")));
    }
    if !(0.0..=1.0).contains(&eps_mh) {
        return Err(param(format!("eps_mh must lie in [0, 1], got {eps_mh}")));
    }
    Ok((2.0 * r_s_closed_form(sigma)?.value - eps_mh) / (sigma * sigma))
}

pub const SIGMA_BRACKET: (f64, f64) = (0.2, 3.0);
const PRESCAN_POINTS: usize = 57;

/// Minimiser of [`efficiency`] over [`SIGMA_BRACKET`], by golden-section search.
///
/// A coarse scan first checks that the curve falls then rises on the bracket.
pub fn minimize_sigma(eps_mh: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(param(format!("tolerance must lie in (0, 1e-3], got {tol}")));
    }
    let (lo, hi) = SIGMA_BRACKET;
    let f = |s: f64| efficiency(s, eps_mh);
    let grid: Vec<f64> = (0..PRESCAN_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (PRESCAN_POINTS - 1) as f64)
        .collect();
    let values = grid.iter().map(|&s| f(s)).collect::<Result<Vec<_>>>()?;
    let turns = values
        .windows(3)
        .filter(|v| v[1] <= v[0] && v[1] <= v[2])
        .count();
    let rising_then_falling = values.windows(3).any(|v| v[1] > v[0] && v[1] > v[2]);
    if turns != 1 || rising_then_falling {
        let dump: Vec<String> = grid
            .iter()
            .zip(&values)
            .map(|(s, v)| format!("{s:.3}:{v:.6}"))
            .collect();
        return Err(Error::Numerical(NumericalDiagnostics {
            routine: "minimize_sigma",
            message: format!(
                "efficiency is not unimodal on [{lo}, {hi}]; scan {}",
                dump.join(" ")
            ),
            estimate: f64::NAN,
            error_estimate: f64::NAN,
            evaluations: PRESCAN_POINTS,
        }));
    }
    golden_section(
        |s| f(s).expect("σ inside the bracket is valid"),
        lo,
        hi,
        tol,
    )
}

/// Golden-section search for a minimum of a unimodal `f` on `[a, b]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    if !(a < b) {
        return Err(param(format!("empty bracket [{a}, {b}]")));
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    Ok(0.5 * (a + b))
}

/// Running mean and variance.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub(crate) fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub(crate) fn mean(&self) -> f64 {
        self.mean
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    pub(crate) fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub(crate) fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;

    #[test]
    fn r_s_closed_form_values() {
        assert_eq!(r_s_closed_form(0.0).unwrap().value, 1.0);
        let r1 = r_s_closed_form(1.0).unwrap().value;
        assert!(
            (r1 - 2.0 * std::f64::consts::E * norm_cdf(std::f64::consts::FRAC_1_SQRT_2)).abs()
                < 1e-14
        );
        assert!((r1 - 4.1327).abs() < 5e-4, "{r1}");
        let r12 = r_s_closed_form(1.2).unwrap().value;
        assert!(r12 >= 1.44_f64.exp() && r12 <= 2.0 * 1.44_f64.exp());
        assert!(r_s_closed_form(-0.1).is_err());
        let huge = r_s_closed_form(40.0).unwrap();
        assert!(huge.is_infinite() && huge.infinite_reason.is_some());
    }

    #[test]
    fn alpw22_values() {
        let v = r_alpw22(1.0).unwrap().value;
        assert!((v - 26.22).abs() < 0.01, "{v}");
        assert!(r_alpw22(0.0).is_err());
        // Φ(σ) → 1: ratio to exp(σ²) approaches 2√(2π)(1+σ²)/σ
        let s = 6.0_f64;
        let ratio = r_alpw22(s).unwrap().value / (s * s).exp();
        let limit = 2.0 * (2.0 * PI).sqrt() * (1.0 + s * s) / s;
        assert!((ratio / limit - 1.0).abs() < 1e-8);
    }

    #[test]
    fn alpha_bar_values() {
        assert!((alpha_bar_1(1.0, 1.0).unwrap() - 2.0 * norm_cdf(-0.5)).abs() < 1e-15);
        assert!((alpha_bar_1(1.0, 1.0).unwrap() - 0.6171).abs() < 1e-4);
        let w = 0.5_f64.exp();
        let v = alpha_bar_1(w, 1.0).unwrap();
        assert!((v - ((-0.5_f64).exp() * 0.5 + norm_cdf(-1.0))).abs() < 1e-15);
        assert!((v - 0.4620).abs() < 1e-4);
        assert!((alpha_bar_1(1e-12, 1.0).unwrap() - 1.0).abs() < 1e-9);
        assert!(alpha_bar_1(0.0, 1.0).is_err());
        // the z-form agrees with the w-form
        for z in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let s = 0.7;
            let w = lognormal_w(s, z);
            assert!((alpha_bar_z(s, z) - alpha_bar_1(w, s).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn alpha_bar_matches_monte_carlo() {
        let sigma = 1.0;
        let m = NoiseModel::lognormal(sigma).unwrap();
        let mut rng = chain_rng(11, 0);
        let mut acc = Welford::default();
        for _ in 0..400_000 {
            acc.push(m.sample(&[], &mut rng).unwrap().min(1.0));
        }
        let exact = alpha_bar_1(1.0, sigma).unwrap();
        assert!((acc.mean() - exact).abs() < 3.0 * acc.std_error());
    }

    #[test]
    fn r_s_numeric_routes_agree() {
        let mut rng = chain_rng(0, 0);
        assert_eq!(
            r_s_numeric(&NoiseModel::PointMass, 10, &mut rng)
                .unwrap()
                .value,
            1.0
        );
        let q = r_s_numeric(&NoiseModel::lognormal(1.0).unwrap(), 0, &mut rng).unwrap();
        assert_eq!(q.method, Method::Quadrature);
        let exact = r_s_closed_form(1.0).unwrap().value;
        assert!((q.value / exact - 1.0).abs() < 1e-6);
        let inf = r_s_numeric(&NoiseModel::shifted_pareto(1.5).unwrap(), 1000, &mut rng).unwrap();
        assert!(inf.is_infinite());
        assert!(inf.infinite_reason.unwrap().contains("E[W²]"));
    }

    #[test]
    fn dpdk15_small_sigma_and_reference() {
        let small = r_dpdk15(0.01, 1e-10).unwrap().value;
        assert!((small - 1.0).abs() < 1e-2, "{small}");
        // independent trapezoid evaluation on a 2e5-point z grid
        let v = r_dpdk15(1.2, 1e-9).unwrap().value;
        assert!((v - 6.851_441_247).abs() < 1e-6, "{v}");
        let rs = r_s_closed_form(1.2).unwrap().value;
        assert!((v / rs - 1.012_121).abs() < 1e-5);
        assert!(r_dpdk15(0.0, 1e-9).is_err());
    }

    #[test]
    fn inverse_alpha_tilde_diverges_with_heavy_tails() {
        for a in [1.5, 2.0] {
            let r = inverse_alpha_tilde(&NoiseModel::shifted_pareto(a).unwrap(), 1e-9).unwrap();
            assert!(r.is_infinite());
        }
        let finite = inverse_alpha_tilde(&NoiseModel::lognormal(0.5).unwrap(), 1e-10).unwrap();
        assert!(finite.value.is_finite() && finite.value > 1.0);
    }

    #[test]
    fn thm1_examples() {
        let r = upper_bound_thm1(1.0, 0.5, 1.0).unwrap();
        assert!((r.value - 3.0).abs() < 1e-15);
        assert!((r.value - (2.0 - 0.5) / 0.5).abs() < 1e-15);
        assert!(upper_bound_thm1(f64::INFINITY, 0.5, 1.0)
            .unwrap()
            .is_infinite());
        let v = upper_bound_thm1(4.1327, 0.1, 1.0).unwrap().value;
        assert!((v - 81.654).abs() < 1e-9);
        assert!(upper_bound_thm1(1.0, 0.0, 1.0).is_err());
        assert!(upper_bound_thm1(0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn thm2_examples() {
        assert!(lower_bound_thm2(1.0, 1.0, f64::INFINITY)
            .unwrap()
            .is_infinite());
        assert!((lower_bound_thm2(1.0, 1.0, 2.0).unwrap().value - 0.5).abs() < 1e-15);
        let c = lower_bound_corollary(1.0, 1.0, 8.0 / 3.0, 1.0).unwrap();
        assert!((c.value - 1.0 / 3.0).abs() < 1e-15);
        assert!(lower_bound_corollary(1.0, 1.0, f64::INFINITY, 1.0)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn efficiency_examples() {
        let e = efficiency(1.0, 0.1).unwrap();
        assert!((e - (2.0 * r_s_closed_form(1.0).unwrap().value - 0.1)).abs() < 1e-12);
        assert!((e - 8.165).abs() < 2e-3);
        assert!(efficiency(1e-4, 0.5).unwrap() > 1e7);
        let e93 = efficiency(0.93, 0.0).unwrap();
        assert!(e93 <= efficiency(0.83, 0.0).unwrap() && e93 <= efficiency(1.03, 0.0).unwrap());
        assert!(efficiency(0.0, 0.1).is_err());
        assert!(efficiency(1.0, 1.5).is_err());
    }

    #[test]
    fn golden_section_finds_quadratic_minimum() {
        let x = golden_section(|x| (x - 0.2).powi(2), -1.0, 1.0, 1e-9).unwrap();
        assert!((x - 0.2).abs() < 1e-8);
        assert!(golden_section(|x| x, 1.0, 1.0, 1e-9).is_err());
    }

    #[test]
    fn minimize_sigma_rejects_loose_tolerance() {
        assert!(minimize_sigma(0.5, 1e-2).is_err());
    }
}
