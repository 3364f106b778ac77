"""Metropolis-Hastings chains, Gibbs sweeps, and the permuted serial copy sampler."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "ChainConfig",
    "MHKernel",
    "MHChainResult",
    "mh_chain",
    "gibbs_sweep",
    "CopySet",
    "permuted_serial_sampler",
    "AcceptanceTracker",
    "LOW_ACCEPTANCE",
]

FORWARD = "forward"
BACKWARD = "backward"

# mean MH acceptance below this draws a run-level warning, never an error
LOW_ACCEPTANCE = 0.1


@dataclass
class ChainConfig:
    """Burn-in/thinning schedule for posterior chains; ``init=None`` lets the model choose."""

    burn_in: int = 500
    thin: int = 10
    init: Any = None


@dataclass
class MHKernel:
    """A Metropolis-Hastings move: log target plus proposal sampler/density.

    ``log_proposal(frm, to)`` evaluates the proposal density of ``to`` when
    starting from ``frm``; leave it ``None`` for symmetric proposals.
    """

    log_target: Callable[[Any], float]
    propose: Callable[[Any, np.random.Generator], Any]
    log_proposal: Callable[[Any, Any], float] | None = None


@dataclass
class MHChainResult:
    samples: list
    acceptance_rate: float
    steps: int


def mh_chain(kernel: MHKernel, config: ChainConfig, count: int, rng: np.random.Generator) -> MHChainResult:
    """Run an MH chain and keep ``count`` states, one every ``config.thin`` steps after burn-in.

    Consumes exactly ``config.burn_in + config.thin * count`` steps.
    """
    if count < 0 or config.burn_in < 0 or config.thin < 1:
        raise ValueError("need count >= 0, burn_in >= 0, thin >= 1")
    state = config.init
    lt = float(kernel.log_target(state))
    if not np.isfinite(lt):
        raise ValueError("log target is not finite at the chain's initial state")
    total = config.burn_in + config.thin * count
    accepted = 0
    samples: list = []
    for step in range(1, total + 1):
        prop = kernel.propose(state, rng)
        lp = float(kernel.log_target(prop))
        log_ratio = lp - lt
        if kernel.log_proposal is not None:
            log_ratio += kernel.log_proposal(prop, state) - kernel.log_proposal(state, prop)
        if np.log(rng.random()) < log_ratio:
            state, lt = prop, lp
            accepted += 1
        if step > config.burn_in and (step - config.burn_in) % config.thin == 0:
            samples.append(state)
    rate = accepted / total if total else float("nan")
    if total and rate < LOW_ACCEPTANCE:
        warnings.warn(f"MH acceptance rate {rate:.3f} is below {LOW_ACCEPTANCE}", RuntimeWarning)
    return MHChainResult(samples=samples, acceptance_rate=rate, steps=total)


def gibbs_sweep(samplers: Sequence[Callable], state, direction: str, rng: np.random.Generator):
    """Apply per-coordinate samplers in index order (forward) or reversed (backward)."""
    order = range(len(samplers)) if direction == FORWARD else range(len(samplers) - 1, -1, -1)
    for i in order:
        state = samplers[i](state, rng)
    return state


@dataclass
class CopySet:
    """Generated data copies plus sampler diagnostics.

    ``insertion_index`` is the serial sampler's slot for the observed data;
    it stays ``None`` for samplers that draw copies directly.
    """

    copies: list
    insertion_index: int | None = None
    diagnostics: dict = field(default_factory=dict)


def permuted_serial_sampler(
    data,
    sweep: Callable[[Any, str, np.random.Generator], Any],
    count: int,
    rng: np.random.Generator,
) -> CopySet:
    """Generate ``count`` copies exchangeable with ``data`` under the sweep's target.

    The observed data is inserted at a uniformly random slot ``m0`` among
    ``count + 1``; slots above ``m0`` are filled by forward sweeps of the
    previous slot and slots below by backward (coordinate-reversed) sweeps of
    the next.  The sweep must leave the copy target invariant coordinate by
    coordinate, with the backward direction applying the same coordinate moves
    in reverse order.  The slot holding the original data is discarded.
    """
    if count < 1:
        raise ValueError("need at least one copy")
    m0 = int(rng.integers(0, count + 1))
    slots: list = [None] * (count + 1)
    slots[m0] = data
    state = data
    for t in range(m0 + 1, count + 1):
        state = sweep(state, FORWARD, rng)
        slots[t] = state
    state = data
    for t in range(m0 - 1, -1, -1):
        state = sweep(state, BACKWARD, rng)
        slots[t] = state
    copies = [slots[t] for t in range(count + 1) if t != m0]
    return CopySet(copies=copies, insertion_index=m0)


class AcceptanceTracker:
    """Tallies per-coordinate MH accept/propose counts inside copy sweeps."""

    def __init__(self, n_coords: int):
        self.accepted = np.zeros(n_coords, dtype=np.int64)
        self.proposed = np.zeros(n_coords, dtype=np.int64)

    def record(self, coord: int, accepted: bool) -> None:
        self.proposed[coord] += 1
        if accepted:
            self.accepted[coord] += 1

    def overall_rate(self) -> float:
        total = int(self.proposed.sum())
        return float(self.accepted.sum() / total) if total else float("nan")

    def per_coordinate(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.proposed > 0, self.accepted / np.maximum(self.proposed, 1), np.nan)

    def warn_if_low(self, where: str) -> None:
        rate = self.overall_rate()
        if np.isfinite(rate) and rate < LOW_ACCEPTANCE:
            warnings.warn(
                f"{where}: mean copy-sampler acceptance {rate:.3f} below {LOW_ACCEPTANCE}",
                RuntimeWarning,
            )
