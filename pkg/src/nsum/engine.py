"""Generic Metropolis-within-Gibbs machinery: the scalar random-walk step,
pilot-chain proposal tuning, and the chain runner with draw storage.

A *kernel* (see :mod:`nsum.models`) bundles one model with one dataset and
exposes:

* ``initial_state() -> ChainState`` and ``validate_state(state)``
* ``sweep(state, scales, rng, accept)``: one full update cycle, mutating the
  state in place and incrementing ``accept[name] = [accepts, proposals]``
* ``ols_params``: names of low-dimensional Metropolis parameters, tuned by
  regressing their pilot draws on the remaining low-dimensional parameters
* ``vector_params``: names of high-dimensional blocks ("d", "q"), tuned per
  coordinate from marginal pilot standard deviations
* ``ols_values(state)``, ``vector_values(state, name)``,
  ``derived_record(state)`` for recording.

Proposal scales follow the pilot-chain rule: 2.3 times the conditional
posterior spread estimated from a short initial chain (residual standard
error of an ordinary least-squares regression for scalar parameters,
marginal standard deviation for block coordinates), floored at 1e-8.

One chain owns one :class:`RandomStream`; chains of a multi-chain fit use
consecutive stream ids so runs are reproducible and parallelizable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import ChainState, ModelSpec
from .errors import DomainError, NonFiniteDensity, PilotDegenerate
from .numerics import RandomStream, reflect_into

__all__ = [
    "ChainConfig",
    "ProposalScale",
    "PosteriorDraws",
    "default_iterations",
    "mh_step",
    "tune_proposals",
    "run_chain",
    "fit_model",
    "pooled_draws",
]

_SCALE_FLOOR = 1e-8

# Chains of the three simpler models converge well inside this budget; the
# combined model needs far more sweeps because of the q block.
_DEFAULT_ITERATIONS = {
    "random_degree": 30_000,
    "barrier": 30_000,
    "transmission": 30_000,
    "combined": 150_000,
}


def default_iterations(kind: str) -> int:
    """Documented default chain length for a model kind."""
    try:
        return _DEFAULT_ITERATIONS[kind]
    except KeyError:
        raise DomainError(f"unknown model kind {kind!r}") from None


@dataclass(frozen=True)
class ChainConfig:
    """Chain length and bookkeeping knobs.

    ``burn_in=None`` resolves to 10% of ``n_iterations``.  ``store_q_traces``
    keeps the full (n, K) propensity traces of the combined model instead of
    running mean/variance summaries; off by default because those traces
    dominate memory.
    """

    n_iterations: int
    burn_in: Optional[int] = None
    thin: int = 1
    pilot_iterations: int = 1000
    n_chains: int = 1
    seed: int = 0
    store_q_traces: bool = False

    def __post_init__(self):
        if self.n_iterations < 1:
            raise DomainError("n_iterations must be positive")
        if self.thin < 1:
            raise DomainError("thin must be positive")
        if self.pilot_iterations < 1:
            raise DomainError("pilot_iterations must be positive")
        if self.n_chains < 1:
            raise DomainError("n_chains must be positive")
        if self.burn_in is not None and not 0 <= self.burn_in < self.n_iterations:
            raise DomainError("burn_in must be nonnegative and below n_iterations")

    @property
    def resolved_burn_in(self) -> int:
        return self.n_iterations // 10 if self.burn_in is None else self.burn_in

    @property
    def n_stored(self) -> int:
        span = self.n_iterations - self.resolved_burn_in
        return (span + self.thin - 1) // self.thin


@dataclass(frozen=True)
class ProposalScale:
    """Per-parameter standard deviations for the normal random-walk proposals."""

    scalars: dict[str, float]
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        for name, v in self.scalars.items():
            if not v > 0:
                raise DomainError(f"scale for {name!r} must be positive")
        for name, arr in self.vectors.items():
            if np.any(~(np.asarray(arr) > 0)):
                raise DomainError(f"scales for block {name!r} must be positive")

    def as_mapping(self) -> dict:
        out: dict = dict(self.scalars)
        out.update(self.vectors)
        return out


@dataclass
class PosteriorDraws:
    """Stored draws of one chain plus acceptance bookkeeping.

    ``params`` maps parameter names to arrays: scalars are (T,), the degree
    block is (T, n), and combined-model propensities appear either as full
    (T, n, K) traces under ``"q"`` or as running summaries in ``q_mean`` /
    ``q_var``.  Treat instances as immutable once returned.
    """

    params: dict[str, np.ndarray]
    acceptance: dict[str, tuple[int, int]]
    spec: ModelSpec
    config: ChainConfig
    q_mean: Optional[np.ndarray] = None
    q_var: Optional[np.ndarray] = None

    def acceptance_rates(self) -> dict[str, float]:
        return {
            name: (a / p if p else 0.0) for name, (a, p) in self.acceptance.items()
        }

    def size_draws(self) -> np.ndarray:
        """Draws of the unknown size in persons, whatever the model."""
        return self.params["N_K"]

    def tau_draws(self) -> Optional[np.ndarray]:
        return self.params.get("tau")


def mh_step(
    current: float,
    log_density: Callable[[float], float],
    scale: float,
    rng: RandomStream,
    bounds: Optional[tuple[float, float]] = None,
    bound_mode: str = "reject",
) -> tuple[float, bool]:
    """One random-walk Metropolis step with a Normal(0, scale^2) increment.

    Out-of-bounds proposals are rejected outright under ``"reject"`` (the
    state is retained) or folded back inside under ``"reflect"``; reflection
    keeps the proposal symmetric, so the acceptance ratio is unchanged.
    Raises :class:`NonFiniteDensity` if the density is not finite at the
    current point (a -inf proposal is simply never accepted).
    """
    if not scale > 0:
        raise DomainError(f"proposal scale must be positive, got {scale}")
    if bound_mode not in ("reject", "reflect"):
        raise DomainError(f"bound_mode must be 'reject' or 'reflect', got {bound_mode!r}")
    proposal = current + scale * rng.gen.standard_normal()
    if bounds is not None:
        lo, hi = bounds
        if bound_mode == "reject":
            if not lo < proposal < hi:
                return float(current), False
        else:
            proposal = reflect_into(proposal, lo, hi)
    lp_cur = float(log_density(current))
    if not np.isfinite(lp_cur):
        raise NonFiniteDensity(f"log density is {lp_cur} at current value {current!r}")
    lp_new = float(log_density(proposal))
    if math.isnan(lp_new):
        raise NonFiniteDensity(f"log density is NaN at proposal {proposal!r}")
    if np.log(rng.gen.uniform()) < lp_new - lp_cur:
        return float(proposal), True
    return float(current), False


class _Welford:
    """Running mean/variance accumulator for vector blocks."""

    def __init__(self, size: int):
        self.count = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    def update(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def sd(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / (self.count - 1))

    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.count - 1)


def _heuristic_scales(model, state: ChainState) -> dict:
    """Pre-pilot proposal scales: a tenth of the starting magnitude, floored
    at 0.01 (nothing better is available before the pilot runs)."""
    scales: dict = {
        name: max(0.1 * abs(v), 0.01) for name, v in model.ols_values(state).items()
    }
    for name in model.vector_params:
        vec = np.asarray(model.vector_values(state, name), dtype=float)
        scales[name] = np.maximum(0.1 * np.abs(vec), 0.01)
    return scales


def _accept_counters(model) -> dict:
    names = list(model.ols_params) + list(model.vector_params)
    return {name: [0, 0] for name in names}


def tune_proposals(
    model,
    pilot: ChainConfig,
    rng: RandomStream,
    return_pilot: bool = False,
):
    """Run a pilot chain and derive proposal scales from it.

    Each low-dimensional parameter is regressed (OLS, with intercept) on the
    Gibbs parameters mu and sigma plus the other low-dimensional parameters;
    its scale is 2.3 times the residual standard error, approximating 2.3
    conditional posterior standard deviations.  Block coordinates get 2.3
    times their marginal pilot standard deviation.  All scales are floored at
    1e-8.  Raises :class:`PilotDegenerate` if the pilot never accepts a
    single proposal.
    """
    if pilot.pilot_iterations < 200:
        raise DomainError("pilot needs at least 200 iterations")
    state = model.initial_state()
    model.validate_state(state)
    scales = _heuristic_scales(model, state)
    accept = _accept_counters(model)

    total = pilot.pilot_iterations
    warm = total // 10
    names = list(model.ols_params)
    table = np.empty((total - warm, 2 + len(names)))
    welford = {
        name: _Welford(np.asarray(model.vector_values(state, name)).size)
        for name in model.vector_params
    }

    for t in range(total):
        model.sweep(state, scales, rng, accept)
        if t < warm:
            continue
        row = t - warm
        table[row, 0] = state.mu
        table[row, 1] = state.sigma
        vals = model.ols_values(state)
        for j, name in enumerate(names):
            table[row, 2 + j] = vals[name]
        for name, acc in welford.items():
            acc.update(np.asarray(model.vector_values(state, name), dtype=float))

    if sum(a for a, _ in accept.values()) == 0:
        raise PilotDegenerate("pilot chain accepted no proposal; check the starting point")

    tuned: dict[str, float] = {}
    for j, name in enumerate(names):
        yv = table[:, 2 + j]
        others = [c for c in range(2 + len(names)) if c != 2 + j]
        X = np.column_stack([np.ones(table.shape[0])] + [table[:, c] for c in others])
        beta, *_ = np.linalg.lstsq(X, yv, rcond=None)
        resid = yv - X @ beta
        dof = max(table.shape[0] - X.shape[1], 1)
        rse = math.sqrt(float(resid @ resid) / dof)
        tuned[name] = max(2.3 * rse, _SCALE_FLOOR)
    vectors = {
        name: np.maximum(2.3 * acc.sd(), _SCALE_FLOOR) for name, acc in welford.items()
    }
    result = ProposalScale(scalars=tuned, vectors=vectors)
    if return_pilot:
        pilot_table = {"mu": table[:, 0].copy(), "sigma": table[:, 1].copy()}
        pilot_table.update({name: table[:, 2 + j].copy() for j, name in enumerate(names)})
        return result, pilot_table
    return result


def run_chain(
    model,
    config: ChainConfig,
    scales: ProposalScale,
    rng: RandomStream,
    start: Optional[ChainState] = None,
) -> PosteriorDraws:
    """Run one chain and store post-burn-in, thinned draws.

    Deterministic given the stream.  Acceptance counts cover the whole run.
    :class:`NonFiniteDensity` failures propagate with the iteration index and
    parameter name attached.
    """
    state = start.copy() if start is not None else model.initial_state()
    model.validate_state(state)
    burn = config.resolved_burn_in
    if burn >= config.n_iterations:
        raise DomainError("burn_in must be below n_iterations")
    n_stored = config.n_stored
    scale_map = scales.as_mapping()
    accept = _accept_counters(model)

    scalar_names = ["mu", "sigma"] + list(model.ols_params) + list(
        model.derived_record(state).keys()
    )
    store: dict[str, np.ndarray] = {name: np.empty(n_stored) for name in scalar_names}
    n = state.degrees.size
    store_d = np.empty((n_stored, n))
    has_q = "q" in model.vector_params
    q_store = None
    q_acc = None
    if has_q:
        if config.store_q_traces:
            q_store = np.empty((n_stored, *state.q.shape))
        else:
            q_acc = _Welford(state.q.size)

    for t in range(config.n_iterations):
        try:
            model.sweep(state, scale_map, rng, accept)
        except NonFiniteDensity as exc:
            raise NonFiniteDensity(f"iteration {t}: {exc}") from exc
        if t < burn:
            continue
        if q_acc is not None:
            q_acc.update(state.q.ravel())
        offset = t - burn
        if offset % config.thin:
            continue
        row = offset // config.thin
        store["mu"][row] = state.mu
        store["sigma"][row] = state.sigma
        for name, v in model.ols_values(state).items():
            store[name][row] = v
        for name, v in model.derived_record(state).items():
            store[name][row] = v
        store_d[row] = state.degrees
        if q_store is not None:
            q_store[row] = state.q

    params: dict[str, np.ndarray] = dict(store)
    params["d"] = store_d
    if q_store is not None:
        params["q"] = q_store
    q_shape = None if not has_q else state.q.shape
    return PosteriorDraws(
        params=params,
        acceptance={name: (a, p) for name, (a, p) in accept.items()},
        spec=model.spec,
        config=config,
        q_mean=None if q_acc is None else q_acc.mean.reshape(q_shape),
        q_var=None if q_acc is None else q_acc.var().reshape(q_shape),
    )


def fit_model(
    dataset,
    spec: ModelSpec,
    config: ChainConfig,
    stream_base: int = 0,
    seed: Optional[int] = None,
) -> list[PosteriorDraws]:
    """Tune once on a pilot chain, then run ``config.n_chains`` chains.

    Stream allocation: the pilot uses ``(seed, stream_base)`` and chain c uses
    ``(seed, stream_base + 1 + c)``, so harnesses can hand out disjoint
    stream_base values per dataset and model.
    """
    from .models import make_kernel

    if seed is None:
        seed = config.seed
    kernel = make_kernel(dataset, spec)
    scales = tune_proposals(kernel, config, RandomStream(seed, stream_base))
    return [
        run_chain(kernel, config, scales, RandomStream(seed, stream_base + 1 + c))
        for c in range(config.n_chains)
    ]


def pooled_draws(chains: list[PosteriorDraws], name: str) -> np.ndarray:
    """Concatenate one parameter's draws across chains."""
    return np.concatenate([c.params[name] for c in chains])
