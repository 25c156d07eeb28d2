"""Named statistical checks behind the ``validate`` command.

Each check is a pure function of its parameter mapping (every random
stream is derived from explicit seeds), returns one or more
:class:`CheckResult` rows, and is registered in :data:`CHECKS` under the
name used by experiment configs.  The shipped ``configs/acceptance.yaml``
wires these into the full certification suite.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffusion, mcsim, stats
from .config import load_run_config, scheme_from_config
from .fluid import solve_fluid
from .rates import RateFunction, ScalingScheme, prelimit

__all__ = ["CheckResult", "CHECKS", "UnknownCheckError", "run_checks"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    statistic: float
    tolerance: float
    passed: bool
    detail: str = ""


class UnknownCheckError(ValueError):
    pass


def _scheme(params: dict) -> ScalingScheme:
    node = params.get("scheme")
    if node is None:
        raise ValueError("check needs a 'scheme' mapping")
    return scheme_from_config(node)


def _const(f: RateFunction, name: str) -> float:
    if f.kind != "constant":
        raise ValueError(f"{name} must be constant for this check")
    return f.params[0]


def _scalars(scheme: ScalingScheme):
    return (
        _const(scheme.lam, "lam"),
        _const(scheme.mu, "mu"),
        _const(scheme.theta, "theta"),
        _const(scheme.alpha, "alpha"),
    )


# -- fluid law of large numbers ----------------------------------------------

def check_fluid_lln(params: dict) -> list[CheckResult]:
    """Coverage of sup_t |Q/n - q_t| <= tol across seeded runs, plus the
    n^(-1/2) error-shrink ratio against a smaller system when given."""
    scheme = _scheme(params)
    horizon = float(params["horizon"])
    n_hi = int(params.get("n", 10000))
    n_lo = params.get("n_low")
    reps = int(params.get("reps", 100))
    seed = int(params["seed"])
    sup_tol = float(params.get("sup_tol", 0.05))
    min_pass = int(params.get("min_pass", 95))
    grid_step = float(params.get("grid_step", 0.01))
    rate_factor = float(params.get("rate_factor", 0.5))

    grid = np.linspace(0.0, horizon, int(round(horizon / grid_step)) + 1)
    fp = solve_fluid(scheme.q0, scheme.lam, scheme.mu, scheme.theta, scheme.k,
                     horizon, grid=grid)
    q_ref = np.asarray(fp.at(grid))

    def sup_errors(n: int) -> np.ndarray:
        qs = mcsim.ensemble_grid(scheme, n, horizon, grid, reps, seed)
        return np.abs(qs / n - q_ref).max(axis=1)

    err_hi = sup_errors(n_hi)
    n_ok = int((err_hi <= sup_tol).sum())
    out = [CheckResult(
        name=f"fluid_lln[n={n_hi}] coverage",
        statistic=float(n_ok), tolerance=float(min_pass),
        passed=n_ok >= min_pass,
        detail=f"median sup err {np.median(err_hi):.4g}, worst {err_hi.max():.4g}")]
    if n_lo is not None:
        err_lo = sup_errors(int(n_lo))
        ratio = float(np.median(err_hi) / np.median(err_lo))
        out.append(CheckResult(
            name=f"fluid_lln rate n={n_hi} vs {n_lo}",
            statistic=ratio, tolerance=rate_factor,
            passed=ratio <= rate_factor,
            detail=f"medians {np.median(err_hi):.4g} / {np.median(err_lo):.4g}"))
    return out


# -- prelimit terminal law vs stationary law ----------------------------------

def check_clt_prelimit(params: dict) -> list[CheckResult]:
    """KS test of the scaled terminal counts against the closed-form
    long-run law, optionally with moment matching."""
    scheme = _scheme(params)
    lam, mu, theta, alpha = _scalars(scheme)
    n = int(params.get("n", 400))
    horizon = float(params["horizon"])
    reps = int(params.get("reps", 2000))
    seed = int(params["seed"])
    level = float(params.get("level", 0.01))
    check_moments = bool(params.get("check_moments", False))
    label = params.get("label", "clt")

    fp = solve_fluid(scheme.q0, scheme.lam, scheme.mu, scheme.theta, scheme.k,
                     horizon)
    q_t = float(fp.at(horizon))
    q_term = mcsim.ensemble_grid(scheme, n, horizon, [horizon], reps, seed)[:, 0]
    x = math.sqrt(n) * (q_term / n - q_t)
    law = diffusion.stationary_law(lam, mu, theta, alpha, scheme.q0)
    d, p = stats.ks_statistic(stats.EmpiricalSample(x), law.cdf)
    out = [CheckResult(
        name=f"{label} KS", statistic=p, tolerance=level, passed=p >= level,
        detail=f"D={d:.4g}, law={law.kind}")]
    if check_moments:
        mom = stats.moments(stats.EmpiricalSample(x))
        lmean, lvar = diffusion.law_moments(law)
        out.append(CheckResult(
            name=f"{label} mean vs law",
            statistic=abs(mom.mean - lmean), tolerance=4.0 * mom.se_mean,
            passed=abs(mom.mean - lmean) <= 4.0 * mom.se_mean,
            detail=f"sample {mom.mean:.4g}, law {lmean:.4g}"))
        out.append(CheckResult(
            name=f"{label} variance vs law",
            statistic=abs(mom.variance - lvar), tolerance=4.0 * mom.se_variance,
            passed=abs(mom.variance - lvar) <= 4.0 * mom.se_variance,
            detail=f"sample {mom.variance:.4g}, law {lvar:.4g}"))
    return out


# -- initial-condition sensitivity at criticality ------------------------------

def check_qed_sensitivity(params: dict) -> list[CheckResult]:
    """At lam == mu, diffusion runs started below capacity settle at
    variance lam/mu and runs started above at lam/theta; both within a
    relative band and strictly ordered."""
    lam = float(params.get("lam", 1.0))
    mu = float(params.get("mu", 1.0))
    theta = float(params["theta"])
    x0 = float(params.get("x0", 0.0))
    dt = float(params.get("dt", 1e-3))
    horizon = float(params["horizon"])
    reps = int(params.get("reps", 2000))
    seed = int(params["seed"])
    rel_tol = float(params.get("rel_tol", 0.15))
    q0_below = float(params.get("q0_below", 0.5))
    q0_above = float(params.get("q0_above", 1.5))

    variances = {}
    out = []
    for idx, (q0, target) in enumerate(
            ((q0_below, lam / mu), (q0_above, lam / theta))):
        scheme = ScalingScheme.constant(
            q0=q0, x0=x0, lam=lam, alpha=0.0, k=1.0, gamma=0.0, mu=mu, theta=theta)
        fp = solve_fluid(q0, scheme.lam, scheme.mu, scheme.theta, scheme.k, horizon)
        xs = diffusion.sde_terminals(x0, scheme, fp, dt, seed + idx, reps)
        var = float(xs.var(ddof=1))
        variances[q0] = var
        out.append(CheckResult(
            name=f"qed_sensitivity var(q0={q0:g})",
            statistic=var, tolerance=rel_tol,
            passed=abs(var - target) <= rel_tol * target,
            detail=f"target {target:g}, rel err {abs(var - target) / target:.3g}"))
    ordered = variances[q0_below] > variances[q0_above]
    out.append(CheckResult(
        name="qed_sensitivity ordering",
        statistic=variances[q0_below] - variances[q0_above], tolerance=0.0,
        passed=ordered,
        detail=f"{variances[q0_below]:.4g} > {variances[q0_above]:.4g}"))
    return out


# -- martingale decomposition ---------------------------------------------------

def check_martingale_structure(params: dict) -> list[CheckResult]:
    """Scaled martingales at time t: zero means, variances matching the
    compensator estimates, vanishing cross-covariances, unit jumps."""
    scheme = _scheme(params)
    n = int(params.get("n", 100))
    t = float(params.get("t", 1.0))
    reps = int(params.get("reps", 10000))
    seed = int(params["seed"])
    var_rel_tol = float(params.get("var_rel_tol", 0.05))
    z_mean = float(params.get("z_mean", 4.0))
    n_validate = int(params.get("n_validate", 200))

    m, qv = mcsim.martingale_ensemble(scheme, n, t, reps, seed)
    scaled = m / math.sqrt(n)
    comp = qv / n
    labels = ("A", "R", "B")
    out = []
    for i, lab in enumerate(labels):
        mom = stats.moments(stats.EmpiricalSample(scaled[:, i]))
        out.append(CheckResult(
            name=f"martingale M_{lab} mean",
            statistic=abs(mom.mean), tolerance=z_mean * mom.se_mean,
            passed=abs(mom.mean) <= z_mean * mom.se_mean,
            detail=f"mean {mom.mean:.4g}, se {mom.se_mean:.3g}"))
        target = float(comp[:, i].mean())
        out.append(CheckResult(
            name=f"martingale M_{lab} variance vs compensator",
            statistic=abs(mom.variance - target),
            tolerance=var_rel_tol * target,
            passed=abs(mom.variance - target) <= var_rel_tol * target,
            detail=f"var {mom.variance:.4g}, compensator {target:.4g}"))
    for i, j in ((0, 1), (0, 2), (1, 2)):
        xi, xj = scaled[:, i], scaled[:, j]
        cov = float(np.cov(xi, xj, ddof=1)[0, 1])
        se = math.sqrt((xi.var(ddof=1) * xj.var(ddof=1) + cov * cov) / reps)
        out.append(CheckResult(
            name=f"martingale cov(M_{labels[i]}, M_{labels[j]})",
            statistic=abs(cov), tolerance=z_mean * se,
            passed=abs(cov) <= z_mean * se,
            detail=f"cov {cov:.4g}, se {se:.3g}"))
    # jump structure: each event moves exactly one counting process by one,
    # so every scaled martingale jump is exactly 1/sqrt(n)
    cfg = mcsim.SimConfig(scheme=scheme, n=n, horizon=t, seed=seed)
    worst = 0.0
    for r in range(min(reps, n_validate)):
        sp = mcsim.simulate(cfg, rep=r)
        sp.validate()
        if len(sp.times):
            worst = max(worst, float(np.abs(np.diff(
                np.concatenate(([sp.q0], sp.Q)))).max()))
    out.append(CheckResult(
        name="martingale jump magnitude (scaled)",
        statistic=worst / math.sqrt(n), tolerance=1.0 / math.sqrt(n),
        passed=worst <= 1.0,
        detail=f"{min(reps, n_validate)} paths validated"))
    return out


# -- exact birth-death oracle ----------------------------------------------------

def check_bd_oracle(params: dict) -> list[CheckResult]:
    """Time-average occupancy of a long constant-rate run against the exact
    birth-death stationary law."""
    scheme = _scheme(params)
    n = int(params["n"])
    horizon = float(params.get("horizon", 5000.0))
    seed = int(params["seed"])
    tv_tol = float(params.get("tv_tol", 0.02))

    cfg = mcsim.SimConfig(scheme=scheme, n=n, horizon=horizon, seed=seed)
    sp = mcsim.simulate(cfg)
    sp.validate()
    pre = prelimit(scheme, n, horizon)
    arrival = pre.lam_n.value(0.0)
    servers = pre.K_n.value(0.0)
    mu = _const(scheme.mu, "mu")
    theta = _const(scheme.theta, "theta")
    chain = stats.BDChain.erlang_a(arrival, mu, theta, servers)
    pi = stats.bd_stationary(chain)
    occ = mcsim.occupancy_distribution(sp, j_max=len(pi) - 1)
    # tv_distance wants honest probability vectors; track truncation spill
    occ = occ / occ.sum()
    tv = stats.tv_distance(occ, pi)
    return [CheckResult(
        name=f"bd_oracle[K={servers}, lam^n={arrival:g}]",
        statistic=tv, tolerance=tv_tol, passed=tv <= tv_tol,
        detail=f"{len(sp.times)} events over horizon {horizon:g}")]


# -- solver self-consistency -------------------------------------------------------

def check_solver_selfconsistency(params: dict) -> list[CheckResult]:
    """Fluid residuals on the shipped configs, normalizer versus
    quadrature, and the weak step-halving consistency of the SDE scheme."""
    from scipy.integrate import quad

    out = []
    residual_tol = float(params.get("residual_tol", 1e-8))
    base = Path(params.get("_base_dir", "."))
    for rel in params.get("configs", []):
        rc = load_run_config(base / rel)
        fp = solve_fluid(rc.scheme.q0, rc.scheme.lam, rc.scheme.mu,
                         rc.scheme.theta, rc.scheme.k, rc.horizon,
                         tol=residual_tol)
        res = fp.residual_max()
        out.append(CheckResult(
            name=f"fluid residual [{rc.name}]",
            statistic=res, tolerance=residual_tol,
            passed=res <= residual_tol))

    norm_tol = float(params.get("normalizer_tol", 1e-10))
    for alpha, mu, theta in ((0.0, 1.0, 1.0), (0.0, 1.0, 4.0), (1.0, 1.0, 1.0),
                             (-0.7, 2.0, 0.5)):
        c_closed = diffusion.qed_normalizer(alpha, mu, theta)
        a, b = alpha / mu, theta / mu
        upper = quad(lambda x: math.exp(a * x - 0.5 * b * x * x), 0.0, np.inf,
                     epsabs=1e-13, epsrel=1e-13)[0]
        lower = quad(lambda x: math.exp(a * x - 0.5 * x * x), -np.inf, 0.0,
                     epsabs=1e-13, epsrel=1e-13)[0]
        c_quad = 1.0 / (upper + lower)
        err = abs(c_closed - c_quad) / c_quad
        out.append(CheckResult(
            name=f"qed normalizer (alpha={alpha:g}, mu={mu:g}, theta={theta:g})",
            statistic=err, tolerance=norm_tol, passed=err <= norm_tol))

    hp = params.get("step_halving", {})
    lam = float(hp.get("lam", 0.5))
    mu = float(hp.get("mu", 1.0))
    theta = float(hp.get("theta", 1.0))
    alpha = float(hp.get("alpha", 1.0))
    q0 = float(hp.get("q0", 0.5))
    x0 = float(hp.get("x0", 2.0))
    dt = float(hp.get("dt", 1e-3))
    horizon = float(hp.get("horizon", 1.0))
    reps = int(hp.get("reps", 10000))
    seed = int(hp.get("seed", params.get("seed", 1)))
    scheme = ScalingScheme.constant(q0=q0, x0=x0, lam=lam, alpha=alpha,
                                    k=1.0, gamma=0.0, mu=mu, theta=theta)
    fp = solve_fluid(q0, scheme.lam, scheme.mu, scheme.theta, scheme.k, horizon)
    means = []
    ses = []
    for step in (dt, dt / 4.0):
        xs = diffusion.sde_terminals(x0, scheme, fp, step, seed, reps)
        means.append(float(xs.mean()))
        ses.append(float(xs.std(ddof=1) / math.sqrt(reps)))
    gap = abs(means[0] - means[1])
    scale = abs(x0) + abs(alpha) / mu + 1.0
    tol = 4.0 * math.hypot(ses[0], ses[1]) + 2.0 * dt * scale
    out.append(CheckResult(
        name="em step-halving weak consistency",
        statistic=gap, tolerance=tol, passed=gap <= tol,
        detail=f"means {means[0]:.5g} vs {means[1]:.5g}"))
    return out


# -- byte-level reproducibility -----------------------------------------------------

def check_reproducibility(params: dict) -> list[CheckResult]:
    """Re-render representative CSV artifacts twice from identical seeds and
    require byte equality."""
    scheme = _scheme(params)
    n = int(params.get("n", 50))
    horizon = float(params.get("horizon", 5.0))
    reps = int(params.get("reps", 20))
    seed = int(params["seed"])
    dt = float(params.get("dt", 1e-3))
    n_paths = int(params.get("paths", 16))
    grid = np.linspace(0.0, horizon, 101)

    def render() -> str:
        buf = io.StringIO()
        fp = solve_fluid(scheme.q0, scheme.lam, scheme.mu, scheme.theta,
                         scheme.k, horizon, grid=grid)
        fp.to_csv(buf)
        mean, var = mcsim.aggregate_grid(scheme, n, horizon, grid, reps, seed)
        mcsim.aggregate_csv(grid, mean, var, reps, buf)
        sp = mcsim.simulate(mcsim.SimConfig(
            scheme=scheme, n=n, horizon=horizon, seed=seed))
        sp.to_csv(buf)
        rep = mcsim.martingale_report(sp, grid[1:])
        rep.to_csv(buf)
        ts, m, v = diffusion.sde_moments(scheme.x0, scheme, fp, dt, seed, n_paths)
        diffusion.moments_csv(ts, m, v, n_paths, buf)
        return buf.getvalue()

    first = render()
    second = render()
    same = first == second
    return [CheckResult(
        name="reproducibility (byte-identical rerun)",
        statistic=0.0 if same else 1.0, tolerance=0.0, passed=same,
        detail=f"{len(first)} bytes compared")]


# -- trivial identity (CLI plumbing test) ---------------------------------------------

def check_identity(params: dict) -> list[CheckResult]:
    """Algebraic identity between the two scaled paths; exact by
    construction, useful to exercise the verdict plumbing."""
    seed = int(params.get("seed", 1))
    tolerance = float(params.get("tolerance", 0.0))
    scheme = ScalingScheme.constant(q0=1.0, x0=0.0, lam=1.0, alpha=0.0,
                                    k=1.0, gamma=0.0, mu=1.0, theta=1.0)
    horizon = 2.0
    n = 10
    fp = solve_fluid(1.0, scheme.lam, scheme.mu, scheme.theta, scheme.k, horizon)
    sp = mcsim.simulate(mcsim.SimConfig(
        scheme=scheme, n=n, horizon=horizon, seed=seed))
    grid = np.linspace(0.0, horizon, 21)
    fluid_scaled, diff_scaled = mcsim.scaled_paths(sp, fp, n, grid)
    gap = float(np.abs(
        diff_scaled - math.sqrt(n) * (fluid_scaled - np.asarray(fp.at(grid)))
    ).max())
    return [CheckResult(
        name="scaled-path identity", statistic=gap, tolerance=tolerance,
        passed=gap <= tolerance)]


CHECKS = {
    "fluid_lln": check_fluid_lln,
    "clt_prelimit": check_clt_prelimit,
    "qed_sensitivity": check_qed_sensitivity,
    "martingale_structure": check_martingale_structure,
    "bd_oracle": check_bd_oracle,
    "solver_selfconsistency": check_solver_selfconsistency,
    "reproducibility": check_reproducibility,
    "identity": check_identity,
}


def run_checks(specs, base_dir: Path | None = None) -> list[CheckResult]:
    """Run experiment check specs in order; unknown names fail upfront."""
    unknown = [s.check for s in specs if s.check not in CHECKS]
    if unknown:
        raise UnknownCheckError(f"unknown checks: {', '.join(sorted(set(unknown)))}")
    results: list[CheckResult] = []
    for spec in specs:
        params = dict(spec.params)
        if base_dir is not None:
            params.setdefault("_base_dir", str(base_dir))
        results.extend(CHECKS[spec.check](params))
    return results
