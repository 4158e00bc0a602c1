use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pmvar::bounds::{
    r_alpw22, r_dpdk15, r_s_closed_form, r_s_numeric, upper_bound_thm1, BoundReport,
};
use pmvar::diagnostics::{
    estimate_var_w, recommend_particles, Stability, TuningReport, DEFAULT_TARGET_VAR,
};
use pmvar::harness::{read_config_file, run_experiment, ExperimentConfig, ExperimentId};
use pmvar::noise::read_column_csv;
use pmvar::rng::{chain_rng, ChainRng};
use pmvar::{ChainConfig, Error, KernelSpec, NoiseModel, ProposalKernel, TargetModel};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_REFUSED: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_INTERNAL: u8 = 70;

#[derive(Parser)]
#[command(
    name = "pmvar",
    version,
    about = "Pseudo-marginal MCMC bounds, tuning and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the noise multiplier bounds.
    Bounds(BoundsArgs),
    /// Estimate Var(W) from likelihood estimates, or search for a particle count.
    Tune(TuneArgs),
    /// Run one chain and write its trace.
    Run(RunArgs),
    /// Run a figure experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct BoundsArgs {
    /// Lognormal noise standard deviation.
    #[arg(long, conflicts_with = "noise")]
    sigma: Option<f64>,
    /// Noise model descriptor, e.g. `pareto:a=1.5`.
    #[arg(long)]
    noise: Option<String>,
    /// Right spectral gap of the exact MH kernel.
    #[arg(long, default_value_t = 0.1)]
    eps_mh: f64,
    #[arg(long, default_value_t = 1e-9)]
    quad_tol: f64,
    /// Monte Carlo pairs for noise without a closed form.
    #[arg(long, default_value_t = 1_000_000)]
    n_mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TuneArgs {
    /// Single-column CSV of likelihood estimates, no header.
    #[arg(long, conflicts_with = "probe", required_unless_present = "probe")]
    estimates: Option<PathBuf>,
    /// Noise descriptor to probe. `binomprod` uses the probed n; lognormal
    /// uses σ/√n; other models do not depend on n.
    #[arg(long)]
    probe: Option<String>,
    /// Comma-separated θ̂ for `--probe`.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long, default_value_t = 1000)]
    m_per_probe: usize,
    #[arg(long, default_value_t = DEFAULT_TARGET_VAR)]
    target_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as `key,value` CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Kernel descriptor, e.g. `pmmh` or `handicapped:delta=0.5`.
    #[arg(long, default_value = "pmmh")]
    kernel: String,
    #[arg(long, default_value = "gauss:d=3")]
    target: String,
    #[arg(long, default_value = "rw:lambda=1.4")]
    proposal: String,
    #[arg(long, default_value = "lognormal:sigma=1")]
    noise: String,
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    chain: u64,
    /// Output stem; writes `<out>.csv` and `<out>.json`.
    #[arg(long, default_value = "trace")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// fig-bounds, fig-efficiency, toy-clt, binomial or heavy-tail.
    id: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// `key=value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Failures sorted by exit code.
enum Failure {
    Usage(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(_)
            | Error::Input(_)
            | Error::Descriptor { .. }
            | Error::Unsupported { .. } => Failure::Usage(e.into()),
            // a missing or malformed input file is the caller's mistake
            Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => {
                Failure::Usage(e.into())
            }
            Error::Csv(ref c) if !c.is_io_error() => Failure::Usage(e.into()),
            _ => Failure::Internal(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<Error>() {
            Ok(e) => e.into(),
            Err(e) => Failure::Internal(e),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Bounds(a) => bounds(a),
        Command::Tune(a) => tune(a),
        Command::Run(a) => run(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(e)) => {
            eprintln!("pmvar: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("pmvar: {e:#}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

fn print_table(reports: &[BoundReport]) {
    println!(
        "{:<14} {:>24} {:<12} {:>12}  note",
        "quantity", "value", "method", "error"
    );
    for r in reports {
        let mut note = r.infinite_reason.clone().unwrap_or_default();
        for w in &r.warnings {
            if !note.is_empty() {
                note.push_str("; ");
            }
            note.push_str(w);
        }
        println!(
            "{:<14} {:>24} {:<12} {:>12.3e}  {}",
            r.quantity,
            r.value,
            r.method.to_string(),
            r.error_estimate,
            note
        );
    }
}

fn bounds(a: BoundsArgs) -> Result<u8, Failure> {
    let noise = match (&a.noise, a.sigma) {
        (Some(d), _) => d.parse::<NoiseModel>()?,
        (None, Some(s)) => NoiseModel::lognormal(s)?,
        (None, None) => return Err(usage("give --sigma or --noise")),
    };
    let mut rng = chain_rng(a.seed, 0);
    let rs = match noise.marginal() {
        NoiseModel::LogNormal { sigma } => r_s_closed_form(sigma)?,
        other => r_s_numeric(&other, a.n_mc, &mut rng)?,
    };
    let mut reports = vec![rs.clone()];
    if let NoiseModel::LogNormal { sigma } = noise.marginal() {
        if sigma > 0.0 {
            reports.push(r_alpw22(sigma)?);
            reports.push(r_dpdk15(sigma, a.quad_tol)?);
        }
    }
    let mut thm1 = upper_bound_thm1(rs.value, a.eps_mh, 1.0)?;
    thm1.quantity = "thm1_multiplier";
    thm1.error_estimate = 2.0 * rs.error_estimate / a.eps_mh;
    reports.push(thm1);
    println!("noise = {noise}, eps_mh = {}", a.eps_mh);
    print_table(&reports);
    Ok(0)
}

fn parse_theta(s: Option<&str>) -> Result<Vec<f64>, Failure> {
    let Some(s) = s else { return Ok(Vec::new()) };
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("--theta: cannot parse `{x}`")))
        })
        .collect()
}

fn tune_report_csv(report: &TuningReport, path: &PathBuf) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["key", "value"])?;
    let opt = |v: Option<String>, none: &str| v.unwrap_or_else(|| none.to_string());
    let rows = [
        ("var_w_hat", report.var_w_hat.to_string()),
        ("var_w_se", report.var_w_se.to_string()),
        ("var_w_ci_lower", report.var_w_ci.0.to_string()),
        ("var_w_ci_upper", report.var_w_ci.1.to_string()),
        (
            "var_log_w_hat",
            opt(report.var_log_w_hat.map(|v| v.to_string()), "undefined"),
        ),
        ("zero_count", report.zero_count.to_string()),
        ("m_estimates", report.m_estimates.to_string()),
        ("stability", report.stability.to_string()),
        (
            "recommended_n",
            opt(
                report.recommended_n.map(|n| n.to_string()),
                "no-recommendation",
            ),
        ),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn tune(a: TuneArgs) -> Result<u8, Failure> {
    let report = if let Some(path) = &a.estimates {
        let xs = read_column_csv(path)?;
        estimate_var_w(&xs)?
    } else {
        let desc = a
            .probe
            .as_deref()
            .ok_or_else(|| usage("give --estimates or --probe"))?;
        let noise: NoiseModel = desc.parse()?;
        let theta = parse_theta(a.theta.as_deref())?;
        let probe = move |n: u64, theta: &[f64], rng: &mut ChainRng| -> pmvar::Result<f64> {
            match &noise {
                NoiseModel::BinomialProduct {
                    success_probs,
                    scale_halfwidth,
                    ..
                } => {
                    NoiseModel::binomial_product(n, success_probs.clone(), Some(*scale_halfwidth))?
                        .sample(theta, rng)
                }
                NoiseModel::LogNormal { sigma } => {
                    NoiseModel::lognormal(sigma / (n as f64).sqrt())?.sample(theta, rng)
                }
                other => other.marginal().sample(theta, rng),
            }
        };
        let mut rng = chain_rng(a.seed, 0);
        let r = recommend_particles(probe, &theta, a.m_per_probe, a.target_var, &mut rng)?;
        for p in &r.probes {
            println!("probe n = {:<10} var_w_hat = {}", p.n, p.var_w_hat);
        }
        r
    };
    println!("{report}");
    if let Some(path) = &a.csv {
        tune_report_csv(&report, path).with_context(|| format!("writing {}", path.display()))?;
    }
    let refused = report.stability == Stability::HeavyTailSuspect
        || (a.probe.is_some() && report.recommended_n.is_none());
    Ok(if refused { EXIT_REFUSED } else { 0 })
}

fn run(a: RunArgs) -> Result<u8, Failure> {
    let seed = a.seed.ok_or_else(|| usage("`run` needs --seed"))?;
    let spec: KernelSpec = a.kernel.parse()?;
    let target: TargetModel = a.target.parse()?;
    let proposal: ProposalKernel = a.proposal.parse()?;
    let noise: NoiseModel = a.noise.parse()?;
    let cfg = ChainConfig::new(spec, target, proposal, noise)?;
    let trace = cfg.run(a.iters, a.stride, seed, a.chain)?;
    trace.save(&a.out)?;
    println!(
        "{} iterations, acceptance rate {:.4}; wrote {} and {}",
        trace.n_iters,
        trace.acceptance_rate(),
        a.out.with_extension("csv").display(),
        a.out.with_extension("json").display()
    );
    Ok(0)
}

fn experiment(a: ExperimentArgs) -> Result<u8, Failure> {
    let id: ExperimentId = a.id.parse()?;
    let mut cfg = ExperimentConfig::new(id, 0, PathBuf::from("results").join(id.name()));
    let mut seed_seen = false;
    if let Some(path) = &a.config {
        for (k, v) in read_config_file(path)? {
            if k == "experiment" {
                continue;
            }
            seed_seen |= k == "seed";
            cfg.set(&k, &v)?;
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
        seed_seen = true;
    }
    if !seed_seen {
        return Err(usage(
            "`experiment` needs --seed (or `seed=` in the config file)",
        ));
    }
    if let Some(s) = a.scale {
        cfg.scale = s;
    }
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    let out = run_experiment(&cfg)?;
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    println!("wrote {}", out.manifest.display());
    Ok(0)
}
