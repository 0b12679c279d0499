"""Seeded, splittable randomness and a Metropolis-adjusted Langevin sampler.

Streams are value-like: deriving a child never mutates the parent, and the
draws produced by a stream are a pure function of (seed, derivation path).
This makes parallel sweeps reproducible independent of scheduling.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .models import ScoredDensity

logger = logging.getLogger(__name__)


class CapabilityError(ValueError):
    """An operation needs a capability (sampler, log density) the input lacks."""


@dataclass(frozen=True)
class RandomStream:
    """Counter-based random stream identified by a seed and a derivation path.

    ``derive(label, index)`` is pure: the same (seed, path) always yields the
    same draws, and distinct paths yield statistically independent Philox keys.
    A stream instance should feed exactly one consumer; callers that need
    several independent draw sequences derive labelled children.
    """

    seed: int
    path: tuple[tuple[str, int], ...] = ()

    def derive(self, label: str, index: int = 0) -> "RandomStream":
        return RandomStream(self.seed, self.path + ((label, int(index)),))

    def generator(self) -> np.random.Generator:
        """Fresh generator keyed by (seed, path). Same stream, same draws."""
        h = hashlib.blake2b(digest_size=16)
        h.update(str(int(self.seed)).encode())
        for label, index in self.path:
            h.update(b"\x00")
            h.update(label.encode())
            h.update(index.to_bytes(8, "little", signed=True))
        key = int.from_bytes(h.digest(), "little")
        return np.random.Generator(np.random.Philox(key=key))


def sample_gaussian(g, n: int, stream: RandomStream) -> np.ndarray:
    """Draw ``n`` i.i.d. vectors mean + sqrt(var) * xi from a diagonal Gaussian.

    Returns an (n, d) array.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = stream.generator()
    xi = rng.standard_normal((n, g.dim))
    return g.mean[None, :] + np.sqrt(g.var)[None, :] * xi


def rademacher(n: int, stream: RandomStream) -> np.ndarray:
    """n i.i.d. uniform signs in {-1.0, +1.0}."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = stream.generator()
    return np.where(rng.random(n) < 0.5, -1.0, 1.0)


@dataclass(frozen=True)
class MalaConfig:
    """MALA tuning knobs.

    ``n_steps`` is the thinning interval: one state is retained after every
    ``n_steps`` chain steps once ``burn_in`` steps have been discarded.
    """

    step_size: float
    n_steps: int = 1
    burn_in: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")


@dataclass(frozen=True)
class MalaRun:
    samples: np.ndarray
    acceptance_rate: float


def _langevin_log_q(y_to: np.ndarray, y_from: np.ndarray, score_from: np.ndarray, tau: float) -> float:
    # log density (up to const) of the proposal N(y_from + tau*score_from, 2*tau*I) at y_to
    resid = y_to - y_from - tau * score_from
    return -float(resid @ resid) / (4.0 * tau)


def run_mala(target: "ScoredDensity", cfg: MalaConfig, init: np.ndarray,
             n_samples: int, stream: RandomStream) -> MalaRun:
    """Run one MALA chain against an unnormalised density and thin it.

    Proposal: y* = y + tau * score(y) + sqrt(2 tau) * xi, Metropolis-corrected
    with the unnormalised log density. Requires ``target.log_unnorm``.
    """
    if target.log_unnorm is None:
        raise CapabilityError("MALA requires a log unnormalised density")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")

    rng = stream.generator()
    tau = cfg.step_size
    y = np.asarray(init, dtype=float).copy()
    log_f = float(target.log_unnorm(y))
    if not math.isfinite(log_f):
        raise ValueError("log density is not finite at the chain initialisation")
    score = np.asarray(target.score(y), dtype=float)

    total_steps = cfg.burn_in + cfg.n_steps * n_samples
    out = np.empty((n_samples, y.shape[0]))
    kept = 0
    accepted = 0
    for step in range(total_steps):
        xi = rng.standard_normal(y.shape[0])
        proposal = y + tau * score + math.sqrt(2.0 * tau) * xi
        log_f_prop = float(target.log_unnorm(proposal))
        score_prop = np.asarray(target.score(proposal), dtype=float)
        log_alpha = (log_f_prop - log_f
                     + _langevin_log_q(y, proposal, score_prop, tau)
                     - _langevin_log_q(proposal, y, score, tau))
        if math.log(rng.random()) < log_alpha:
            y, log_f, score = proposal, log_f_prop, score_prop
            accepted += 1
        if step >= cfg.burn_in and (step - cfg.burn_in + 1) % cfg.n_steps == 0:
            out[kept] = y
            kept += 1
    rate = accepted / total_steps
    return MalaRun(samples=out, acceptance_rate=rate)


def mala_sample(target: "ScoredDensity", cfg: MalaConfig, init: np.ndarray,
                n_samples: int, stream: RandomStream) -> np.ndarray:
    """Thinned MALA samples; logs the acceptance rate at debug level."""
    run = run_mala(target, cfg, init, n_samples, stream)
    logger.debug("MALA acceptance rate: %.3f", run.acceptance_rate)
    return run.samples
