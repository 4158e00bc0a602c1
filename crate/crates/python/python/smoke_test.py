"""Smoke test for the pmvar extension module.

Build and run from the repository root:

    cargo build --release -p pmvar-python --features extension-module
    python3 crates/python/python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def load():
    built = os.path.join(ROOT, "target", "release", "libpmvar_python.so")
    if not os.path.exists(built):
        sys.exit(f"missing {built}; build with --features extension-module first")
    where = tempfile.mkdtemp()
    shutil.copy(built, os.path.join(where, "pmvar.so"))
    sys.path.insert(0, where)
    import pmvar

    return pmvar


def main():
    pmvar = load()

    rs = pmvar.r_s(1.0)
    assert abs(rs["value"] - 2 * math.e * 0.7602499389065233) < 1e-12, rs
    assert pmvar.r_alpw22(1.0)["value"] > 6 * rs["value"]
    ratio = pmvar.r_dpdk15(1.0)["value"] / rs["value"]
    assert 0.98 < ratio < 1.02, ratio
    assert abs(pmvar.minimize_sigma(0.0) - 0.93) < 0.01

    heavy = pmvar.r_s_numeric(pmvar.Noise("pareto:a=1.5"))
    assert heavy["value"] == math.inf and "E[W" in heavy["infinite_reason"]

    noise = pmvar.Noise("lognormal:sigma=0.9486832980505138")
    report = pmvar.estimate_var_w(noise.sample(20000, seed=1))
    assert abs(report["var_w_hat"] - (math.exp(0.9) - 1)) < 4 * report["var_w_se"], report
    assert pmvar.Noise("pareto:a=2").log_noise_variance() > 2.28

    def binomial(n, theta, seed):
        return pmvar.Noise(f"binomprod:n={n},probs=0.5;0.5;0.5").sample(1, seed=seed, theta=theta)[0]

    tuned = pmvar.recommend_particles(binomial, [0.0], m_per_probe=2000, seed=3)
    assert tuned["stability"] == "stable" and tuned["recommended_n"] >= 1, tuned

    def pareto(n, theta, seed):
        return pmvar.Noise("pareto:a=1.5").sample(1, seed=seed)[0]

    refused = pmvar.recommend_particles(pareto, [0.0], m_per_probe=500, seed=3)
    assert refused["recommended_n"] is None and refused["stability"] == "heavy-tail-suspect", refused

    chain = pmvar.Chain("pmmh", "gauss:d=3", "rw:lambda=1.4", "lognormal:sigma=0.5")
    trace = chain.run(20000, seed=7)
    assert len(trace) == 20000 and 0.1 < trace.acceptance_rate < 0.9
    assert 0 < trace.ess(0) < 20000
    again = chain.run(20000, seed=7)
    assert again.theta[-1] == trace.theta[-1]

    try:
        pmvar.Noise("pareto:a=0.5")
    except ValueError:
        pass
    else:
        raise AssertionError("invalid shape accepted")

    out = tempfile.mkdtemp()
    files = pmvar.run_experiment("fig-efficiency", seed=1, out_dir=out)
    assert any(str(f).endswith("fig_efficiency.csv") for f in files), files

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
