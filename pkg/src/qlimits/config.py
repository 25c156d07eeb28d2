"""Config file schema (YAML).

A run config names a scaling scheme plus horizons, grids, and seeds::

    name: ed-example
    scheme:
      q0: 3.0
      x0: 0.0
      lam:   {kind: constant, params: [2.0]}
      alpha: {kind: constant, params: [0.0], signed: true}
      k:     {kind: constant, params: [1.0]}
      gamma: {kind: constant, params: [0.0], signed: true}
      mu:    {kind: constant, params: [1.0]}
      theta: {kind: constant, params: [0.5]}
    horizon: 10.0
    n: 400
    replications: 100
    seed: 2024

Rate functions are ``{kind, params, breakpoints, signed}`` with kinds
constant, piecewise-constant, piecewise-linear, sinusoid (params
[offset, amplitude, omega, phase]), and sum ({kind: sum, terms: [...]}).
Bare numbers are shorthand for constants; alpha and gamma are implicitly
signed.  An experiment config lists named checks with parameters for the
``validate`` command.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .rates import RateFunction, ScalingScheme

__all__ = [
    "RunConfig",
    "ExperimentSpec",
    "CheckSpec",
    "rate_from_config",
    "scheme_from_config",
    "scheme_to_config",
    "load_run_config",
    "load_experiment",
]

_SIGNED_FIELDS = ("alpha", "gamma")


def rate_from_config(node, signed_default: bool = False) -> RateFunction:
    if isinstance(node, (int, float)):
        return RateFunction.constant(float(node), signed=signed_default)
    if not isinstance(node, dict):
        raise ValueError(f"rate function spec must be a number or mapping, got {node!r}")
    node = dict(node)
    node.setdefault("signed", signed_default)
    return RateFunction.from_dict(node)


def scheme_from_config(node: dict) -> ScalingScheme:
    if not isinstance(node, dict):
        raise ValueError("scheme must be a mapping")
    missing = {"q0", "lam", "k", "mu", "theta"} - set(node)
    if missing:
        raise ValueError(f"scheme is missing fields: {sorted(missing)}")
    return ScalingScheme(
        q0=float(node["q0"]),
        x0=float(node.get("x0", 0.0)),
        lam=rate_from_config(node["lam"]),
        alpha=rate_from_config(node.get("alpha", 0.0), signed_default=True),
        k=rate_from_config(node["k"]),
        gamma=rate_from_config(node.get("gamma", 0.0), signed_default=True),
        mu=rate_from_config(node["mu"]),
        theta=rate_from_config(node["theta"]),
    )


def scheme_to_config(scheme: ScalingScheme) -> dict:
    return {
        "q0": scheme.q0,
        "x0": scheme.x0,
        "lam": scheme.lam.to_dict(),
        "alpha": scheme.alpha.to_dict(),
        "k": scheme.k.to_dict(),
        "gamma": scheme.gamma.to_dict(),
        "mu": scheme.mu.to_dict(),
        "theta": scheme.theta.to_dict(),
    }


@dataclass(frozen=True)
class RunConfig:
    name: str
    scheme: ScalingScheme
    horizon: float
    n: int = 100
    replications: int = 100
    seed: int = 1
    dt: float = 1e-3
    grid_step: float = 0.01
    tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.horizon <= 0.0:
            raise ValueError("horizon must be > 0")
        if self.seed is None:
            raise ValueError("configs must carry an explicit seed")


def load_run_config(path) -> RunConfig:
    path = Path(path)
    with path.open() as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "scheme" not in doc:
        raise ValueError(f"{path}: not a run config (needs a scheme)")
    return RunConfig(
        name=str(doc.get("name", path.stem)),
        scheme=scheme_from_config(doc["scheme"]),
        horizon=float(doc["horizon"]),
        n=int(doc.get("n", 100)),
        replications=int(doc.get("replications", 100)),
        seed=int(doc.get("seed", 1)),
        dt=float(doc.get("dt", 1e-3)),
        grid_step=float(doc.get("grid_step", 0.01)),
        tol=float(doc.get("tol", 1e-8)),
    )


@dataclass(frozen=True)
class CheckSpec:
    check: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    checks: tuple[CheckSpec, ...]
    base_dir: Path


def load_experiment(path) -> ExperimentSpec:
    path = Path(path)
    with path.open() as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "checks" not in doc:
        raise ValueError(f"{path}: not an experiment config (needs checks)")
    specs = []
    for item in doc["checks"]:
        if not isinstance(item, dict) or "check" not in item:
            raise ValueError(f"{path}: each check needs a 'check' name")
        params = {k: v for k, v in item.items() if k != "check"}
        specs.append(CheckSpec(check=str(item["check"]), params=params))
    return ExperimentSpec(
        name=str(doc.get("name", path.stem)),
        checks=tuple(specs),
        base_dir=path.parent,
    )
