"""Test engine: plugin contract, p-value, copy target, and the run orchestrator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .mcmc import ChainConfig, CopySet
from .rng import substream

__all__ = [
    "ModelPlugin",
    "PosteriorDraws",
    "TestConfig",
    "TestOutcome",
    "StageError",
    "compute_pvalue",
    "log_copy_target",
    "run_test",
]


@runtime_checkable
class ModelPlugin(Protocol):
    """Capabilities a null model exposes to the test engine.

    ``params`` objects are model-specific and opaque to the engine; the engine
    only moves them between the methods below.
    """

    name: str

    def log_likelihood(self, params, data) -> float: ...

    def log_prior(self, params) -> float: ...

    def sample_posterior(
        self, data, count: int, chain: ChainConfig, rng: np.random.Generator
    ) -> "PosteriorDraws": ...

    def log_marginal_hat(self, data) -> float: ...

    def sample_copies(
        self, data, draws: "PosteriorDraws", count: int, rng: np.random.Generator
    ) -> CopySet: ...


@dataclass
class PosteriorDraws:
    """Parameter draws conditioning the copy distribution, plus chain diagnostics."""

    params: list
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # keep pytest from collecting this as a test class

    B: int = 25
    M: int = 300
    burn_in: int = 500
    thin: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if self.M < 0:
            raise ValueError("M must be non-negative")
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("need burn_in >= 0 and thin >= 1")


@dataclass
class TestOutcome:
    __test__ = False

    pval: float
    t_obs: float
    t_copies: np.ndarray
    posterior: PosteriorDraws
    copies: CopySet | None


class StageError(RuntimeError):
    """A test stage failed; ``stage`` is one of posterior, copies, statistic."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage} stage failed: {message}")
        self.stage = stage


def compute_pvalue(t_obs: float, t_copies: Sequence[float]) -> float:
    """Monte-Carlo p-value ``(1 + #{copies with T >= T(X)}) / (M + 1)``, ties inclusive."""
    t_obs = float(t_obs)
    t = np.asarray(t_copies, dtype=float)
    if not np.isfinite(t_obs) or (t.size and not np.all(np.isfinite(t))):
        raise ValueError("statistic values must be finite")
    return float((1 + int(np.sum(t >= t_obs))) / (t.size + 1))


def log_copy_target(model: ModelPlugin, params: Sequence, x) -> float:
    """Unnormalized log density of the copy distribution at ``x``.

    Sums the log likelihood over the conditioning draws and subtracts
    ``(B - 1)`` times the approximate log marginal.
    """
    params = list(params)
    if not params:
        raise ValueError("need at least one conditioning draw")
    total = sum(model.log_likelihood(p, x) for p in params)
    return float(total - (len(params) - 1) * model.log_marginal_hat(x))


def _stage(stage: str, fn: Callable):
    try:
        return fn()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc


def run_test(
    model: ModelPlugin,
    data,
    statistic: Callable[[Any], float],
    config: TestConfig,
) -> TestOutcome:
    """Run the full test: posterior draws, exchangeable copies, Monte-Carlo p-value.

    Reproducible given ``config.seed``; posterior and copy stages consume
    independent named substreams so changing one stage's internals never
    perturbs the other's draws.
    """
    config.validate()
    post_rng = substream(config.seed, "posterior")
    copy_rng = substream(config.seed, "copies")
    chain = ChainConfig(burn_in=config.burn_in, thin=config.thin)

    draws = _stage("posterior", lambda: model.sample_posterior(data, config.B, chain, post_rng))
    if len(draws) != config.B:
        raise StageError("posterior", f"expected {config.B} draws, got {len(draws)}")

    if config.M == 0:
        t_obs = _stage("statistic", lambda: float(statistic(data)))
        if not np.isfinite(t_obs):
            raise StageError("statistic", "statistic is not finite on the observed data")
        return TestOutcome(pval=1.0, t_obs=t_obs, t_copies=np.empty(0), posterior=draws, copies=None)

    copies = _stage("copies", lambda: model.sample_copies(data, draws, config.M, copy_rng))
    if len(copies.copies) != config.M:
        raise StageError("copies", f"expected {config.M} copies, got {len(copies.copies)}")

    def _evaluate():
        t_obs = float(statistic(data))
        t_cop = np.array([float(statistic(c)) for c in copies.copies])
        if not np.isfinite(t_obs) or not np.all(np.isfinite(t_cop)):
            raise ValueError("statistic produced a non-finite value")
        return t_obs, t_cop

    t_obs, t_cop = _stage("statistic", _evaluate)
    pval = compute_pvalue(t_obs, t_cop)
    return TestOutcome(pval=pval, t_obs=t_obs, t_copies=t_cop, posterior=draws, copies=copies)
