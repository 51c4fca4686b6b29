"""Synthetic data from the GPMM generative equations, plus fault injection.

All randomness comes from numpy's PCG64 generator.  Multi-sequence scenarios
derive one child seed per sequence with ``SeedSequence.spawn`` so that each
sequence depends only on (seed, sequence index).
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import ModelParameters, benchmark_parameters

__all__ = [
    "ScenarioKind",
    "FaultSpec",
    "Scenario",
    "gen_random",
    "gen_seq_stationary",
    "gen_seq_random_walk",
    "inject_fault",
    "generate",
]


class ScenarioKind(str, Enum):
    RANDOM = "random"
    SEQ_STATIONARY = "seq_stationary"
    SEQ_RANDOM_WALK = "random_walk"


@dataclass(frozen=True)
class FaultSpec:
    """Additive fault on one variable (0-based index) from ``onset`` onward.

    ``kind`` is ``"step"`` (constant offset ``magnitude``) or ``"drift"``
    (offset ``magnitude * (t - onset) / span``).  ``target`` selects the
    input (``"x"``) or output (``"y"``) block for paired data.
    """

    variable: int
    onset: int
    magnitude: float
    kind: str = "step"
    span: int = 100
    target: str = "x"

    def __post_init__(self):
        if self.kind not in ("step", "drift"):
            raise ValueError("fault kind must be 'step' or 'drift'")
        if self.target not in ("x", "y"):
            raise ValueError("fault target must be 'x' or 'y'")
        if self.onset < 0 or self.variable < 0:
            raise ValueError("fault onset and variable index must be non-negative")
        if self.span < 1:
            raise ValueError("drift span must be >= 1")


@dataclass(frozen=True)
class Scenario:
    kind: ScenarioKind = ScenarioKind.RANDOM
    params: ModelParameters = field(default_factory=benchmark_parameters)
    n_samples: int = 100_000
    n_sequences: int = 100
    seed: int = 0
    fault: FaultSpec = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.n_samples < 1 or self.n_sequences < 1:
            raise ValueError("sample and sequence counts must be >= 1")
        if self.fault is not None and self.fault.onset >= self.n_samples:
            raise ValueError("fault onset lies beyond the generated samples")

    @classmethod
    def default(cls, kind, **kw):
        """Scenario with the standard sample counts for ``kind``."""
        kind = ScenarioKind(kind)
        if kind is ScenarioKind.SEQ_STATIONARY:
            kw.setdefault("n_samples", 500)
            kw.setdefault("n_sequences", 100)
        else:
            kw.setdefault("n_samples", 100_000)
            kw.setdefault("n_sequences", 1)
        return cls(kind=kind, **kw)


def _noise(rng, cov, n):
    chol = np.linalg.cholesky(cov)
    return chol @ rng.standard_normal((cov.shape[0], n))


def _expect(scenario, kind):
    if scenario.kind is not kind:
        raise ValueError(f"scenario kind is {scenario.kind.value}, expected {kind.value}")


def gen_random(scenario):
    """Paired (x, y) with x of shape (q, T) and y of shape (p, T)."""
    _expect(scenario, ScenarioKind.RANDOM)
    p = scenario.params
    rng = np.random.default_rng(scenario.seed)
    t = scenario.n_samples
    s = rng.standard_normal((p.r, t))
    z = p.w_diag[:, None] * s + np.sqrt(p.lambda_eps_diag)[:, None] * rng.standard_normal((p.r, t))
    y = p.u_mat @ z + p.c_y[:, None] + _noise(rng, p.lambda_y, t)
    x = p.v_mat @ s + p.c_x[:, None] + _noise(rng, p.lambda_x, t)
    if scenario.fault is not None:
        if scenario.fault.target == "x":
            x = inject_fault(x, scenario.fault)
        else:
            y = inject_fault(y, scenario.fault)
    return x, y


def _chain(rng, w, lam_eps, t, r):
    s = np.empty((r, t))
    s[:, 0] = rng.standard_normal(r)
    eps = np.sqrt(lam_eps)[:, None] * rng.standard_normal((r, t))
    for k in range(1, t):
        s[:, k] = w * s[:, k - 1] + eps[:, k]
    return s


def gen_seq_stationary(scenario, return_latent=False):
    """List of (q, T) sequences from the stationary latent chain with τ = 1."""
    _expect(scenario, ScenarioKind.SEQ_STATIONARY)
    p = scenario.params
    children = np.random.SeedSequence(scenario.seed).spawn(scenario.n_sequences)
    seqs, latents = [], []
    for child in children:
        rng = np.random.default_rng(child)
        s = _chain(rng, p.w_diag, p.lambda_eps_diag, scenario.n_samples, p.r)
        x = p.v_mat @ s + p.c_x[:, None] + _noise(rng, p.lambda_x, scenario.n_samples)
        if scenario.fault is not None:
            x = inject_fault(x, scenario.fault)
        seqs.append(x)
        latents.append(s)
    return (seqs, latents) if return_latent else seqs


def gen_seq_random_walk(scenario, return_latent=False):
    """One (q, T) sequence whose latent state follows a Gaussian random walk."""
    _expect(scenario, ScenarioKind.SEQ_RANDOM_WALK)
    p = scenario.params
    rng = np.random.default_rng(scenario.seed)
    t = scenario.n_samples
    steps = rng.standard_normal((p.r, t))
    s = np.cumsum(steps, axis=1)
    x = p.v_mat @ s + p.c_x[:, None] + _noise(rng, p.lambda_x, t)
    if scenario.fault is not None:
        x = inject_fault(x, scenario.fault)
    return (x, s) if return_latent else x


def inject_fault(data, fault):
    """Copy of ``data`` (variables x samples) with an additive fault."""
    out = np.array(data, dtype=float, copy=True)
    if not 0 <= fault.variable < out.shape[0]:
        raise ValueError(f"fault variable {fault.variable} out of range for {out.shape[0]} variables")
    t = out.shape[1]
    if fault.onset >= t:
        return out
    if fault.kind == "step":
        out[fault.variable, fault.onset:] += fault.magnitude
    else:
        k = np.arange(fault.onset, t) - fault.onset
        out[fault.variable, fault.onset:] += fault.magnitude * k / fault.span
    return out


def generate(scenario):
    """Dispatch on ``scenario.kind``."""
    if scenario.kind is ScenarioKind.RANDOM:
        return gen_random(scenario)
    if scenario.kind is ScenarioKind.SEQ_STATIONARY:
        return gen_seq_stationary(scenario)
    return gen_seq_random_walk(scenario)
