"""The four hierarchical size models: starting points, Gibbs updates for the
log-degree parameters, and the unnormalized log conditional posteriors of
every Metropolis-updated parameter.

Model summary (y_ik = reported contacts of respondent i in group k; degrees
d_i are continuous positive reals with a log-normal population law; N is the
total population; column K is the group of unknown size):

* ``random_degree``: y_ik ~ Binom(d_i, N_k/N); the unknown size N_K carries a
  1/N_K prior on (0, N].
* ``barrier``: per-respondent propensities q_ik ~ Beta(m_k, rho_k) replace
  N_k/N and are integrated out analytically (beta-binomial).  Known-group
  means are fixed at m_k = N_k/N; the unknown prevalence m_K carries the 1/m
  prior; each rho_k is uniform on (0, 1).
* ``transmission``: the unknown column reports only a fraction tau of true
  contacts, y_iK ~ Binom(d_i, tau N_K / N), tau ~ Beta(mean, dispersion).
  Because (N_K, tau) are nearly unidentified jointly, the sampler runs on
  w = N_K tau and z = N_K / tau.  ``jacobian_mode`` picks the change-of-
  variables determinant: "exact" uses |d(N,tau)/d(w,z)| = 1/(2z), verified by
  finite differences in the test suite; "paper" reproduces a published
  variant |(1-w)/(4zw)| for comparison runs only.
* ``combined``: both effects, y_ik ~ Binom(d_i, tau_k q_ik).  q cannot be
  integrated out here, so the (n, K) propensity matrix is sampled
  coordinate-wise.

tau_k = 1 is hard-wired for every known group.  All log conditionals are
pure functions of (value, state, dataset, spec); they evaluate to -inf
outside their bounds.  Degree coordinates (and q coordinates) are
conditionally independent given the rest of the state, so the block updates
propose and accept them all at once; the vectorized paths are tested against
the scalar definitions below.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.special import betaln, gammaln

from .data import BetaMR, ChainState, ModelSpec, SurveyDataset, beta_mr_to_shapes
from .engine import mh_step
from .errors import AllZeroResponses, DegenerateScale, DomainError, NonFiniteDensity
from .numerics import (
    RandomStream,
    reflect_into,
    sample_truncated_inverse_gamma,
    sample_truncated_normal,
)
from .postprocess import scaleup_degrees, scaleup_size

__all__ = [
    "LogConditional",
    "gibbs_mu",
    "gibbs_sigma2",
    "logpost_nk_random_degree",
    "logpost_di_random_degree",
    "logpost_mk_barrier",
    "logpost_rhok_barrier",
    "logpost_di_barrier",
    "logpost_wk_transmission",
    "logpost_zk_transmission",
    "logpost_di_transmission",
    "logpost_combined",
    "log_jacobian_wz",
    "initial_state",
    "make_kernel",
]

_NEG_INF = float("-inf")
_OPEN_EPS = 1e-9


@dataclass(frozen=True)
class LogConditional:
    """A scalar parameter's unnormalized log conditional and its bounds."""

    name: str
    get: Callable[[ChainState], float]
    set: Callable[[ChainState, float], None]
    logpost: Callable[[float, ChainState], float]
    bounds: Callable[[ChainState], tuple[float, float]]
    bound_mode: str  # "reject" or "reflect"


# ---------------------------------------------------------------------------
# Gibbs updates shared by every model


def gibbs_mu(state: ChainState, dataset: SurveyDataset, spec: ModelSpec, rng: RandomStream) -> float:
    """Draw the log-degree mean from Normal(mean(log d), sigma^2/n) truncated
    to the prior range."""
    logd = np.log(state.degrees)
    n = logd.size
    return sample_truncated_normal(
        float(logd.mean()), state.sigma / math.sqrt(n), spec.mu_range[0], spec.mu_range[1], rng
    )


def gibbs_sigma2(state: ChainState, dataset: SurveyDataset, spec: ModelSpec, rng: RandomStream) -> float:
    """Draw the log-degree variance from InverseGamma((n-1)/2, SS/2) with
    SS = sum (log d_i - mu)^2, truncated so sigma stays in the prior range."""
    logd = np.log(state.degrees)
    n = logd.size
    if n < 2:
        raise DomainError("the variance update needs at least two respondents")
    ss = float(np.sum((logd - state.mu) ** 2))
    if ss == 0.0:
        raise DegenerateScale("all log degrees equal mu; variance conditional is degenerate")
    lo, hi = spec.sigma_range
    return sample_truncated_inverse_gamma((n - 1) / 2.0, ss / 2.0, lo * lo, hi * hi, rng)


# ---------------------------------------------------------------------------
# Random degree model


def logpost_nk_random_degree(nk: float, state: ChainState, dataset: SurveyDataset) -> float:
    """Unnormalized log conditional of the unknown size N_K."""
    y_k = dataset.responses[:, dataset.unknown_index]
    N = float(dataset.total_population)
    if not float(y_k.max()) < nk < N:
        return _NEG_INF
    s_y = float(y_k.sum())
    s_d = float(state.degrees.sum())
    return s_y * math.log(nk / (N - nk)) + s_d * math.log1p(-nk / N) - math.log(nk)


def _logpost_d_random_degree_vec(
    d: np.ndarray, state: ChainState, dataset: SurveyDataset, nk: float
) -> np.ndarray:
    """Per-respondent log conditional of the degree vector (coordinates are
    conditionally independent)."""
    y = dataset.responses
    N = float(dataset.total_population)
    ymax = y.max(axis=1)
    valid = d > ymax
    safe = np.where(valid, d, ymax + 1.0)

    probs = np.empty(y.shape[1])
    probs[dataset.known_columns] = dataset.known_sizes / N
    probs[dataset.unknown_index] = nk / N
    miss = float(np.log1p(-probs).sum())

    logd = np.log(safe)
    lp = -logd - (logd - state.mu) ** 2 / (2.0 * state.sigma**2)
    lp += y.shape[1] * gammaln(safe + 1.0)
    lp -= gammaln(safe[:, None] - y + 1.0).sum(axis=1)
    lp -= gammaln(y + 1.0).sum(axis=1)
    lp += safe * miss
    return np.where(valid, lp, _NEG_INF)


def logpost_di_random_degree(d: float, i: int, state: ChainState, dataset: SurveyDataset) -> float:
    """Log conditional of degree d_i; -inf at or below the row's max response."""
    vec = state.degrees.copy()
    vec[i] = d
    return float(
        _logpost_d_random_degree_vec(vec, state, dataset, float(state.size_unknown))[i]
    )


# ---------------------------------------------------------------------------
# Barrier effects model (beta-binomial marginal)


def _barrier_means_by_column(state: ChainState, dataset: SurveyDataset) -> np.ndarray:
    m = np.empty(dataset.n_groups)
    m[dataset.known_columns] = dataset.known_sizes / float(dataset.total_population)
    m[dataset.unknown_index] = float(state.size_unknown)
    return m


def _beta_binomial_column_loglik(
    y_col: np.ndarray, d: np.ndarray, m: float, rho: float
) -> float:
    """Sum over respondents of the q-integrated likelihood ratio terms for one
    column (binomial coefficients excluded; they live in the degree update)."""
    r = 1.0 / rho - 1.0
    a = m * r
    b = (1.0 - m) * r
    if a <= 0 or b <= 0:
        raise DomainError("beta shape parameters must be positive")
    upper = d + b - y_col
    if np.any(a + y_col <= 0) or np.any(upper <= 0):
        raise DomainError("beta-binomial arguments nonpositive; degrees below responses?")
    return float(betaln(a + y_col, upper).sum() - y_col.size * betaln(a, b))


def logpost_mk_barrier(mk: float, state: ChainState, dataset: SurveyDataset) -> float:
    """Log conditional of the unknown prevalence m_K (1/m prior)."""
    if not 0.0 < mk < 1.0:
        return _NEG_INF
    uk = dataset.unknown_index
    y_col = dataset.responses[:, uk].astype(float)
    rho_k = float(state.rho[uk])
    return _beta_binomial_column_loglik(y_col, state.degrees, mk, rho_k) - math.log(mk)


def logpost_rhok_barrier(rho: float, k: int, state: ChainState, dataset: SurveyDataset) -> float:
    """Log conditional of the dispersion rho_k (uniform prior, so the prior
    term drops); k ranges over every column including the unknown one."""
    if not 0.0 < rho < 1.0:
        return _NEG_INF
    y_col = dataset.responses[:, k].astype(float)
    m_k = float(_barrier_means_by_column(state, dataset)[k])
    return _beta_binomial_column_loglik(y_col, state.degrees, m_k, rho)


def _logpost_d_barrier_vec(
    d: np.ndarray, state: ChainState, dataset: SurveyDataset
) -> np.ndarray:
    y = dataset.responses
    ymax = y.max(axis=1)
    valid = d > ymax
    safe = np.where(valid, d, ymax + 1.0)

    m = _barrier_means_by_column(state, dataset)
    r = 1.0 / state.rho - 1.0
    b = (1.0 - m) * r

    logd = np.log(safe)
    lp = -logd - (logd - state.mu) ** 2 / (2.0 * state.sigma**2)
    lp += y.shape[1] * gammaln(safe + 1.0)
    lp -= gammaln(safe[:, None] - y + 1.0).sum(axis=1)
    lp -= gammaln(y + 1.0).sum(axis=1)
    lp += gammaln(safe[:, None] + b[None, :] - y).sum(axis=1)
    lp -= gammaln(safe[:, None] + r[None, :]).sum(axis=1)
    return np.where(valid, lp, _NEG_INF)


def logpost_di_barrier(d: float, i: int, state: ChainState, dataset: SurveyDataset) -> float:
    vec = state.degrees.copy()
    vec[i] = d
    return float(_logpost_d_barrier_vec(vec, state, dataset)[i])


# ---------------------------------------------------------------------------
# Transmission bias model on (w, z) = (N_K tau, N_K / tau)


def log_jacobian_wz(w: float, z: float, mode: str = "exact") -> float:
    """Log |determinant| of (w, z) -> (N_K, tau) = (sqrt(wz), sqrt(w/z)).

    "exact" is the analytic determinant 1/(2z).  "paper" reproduces the
    published variant |(1-w)/(4zw)|, which disagrees with finite differences
    and is kept only so comparison runs can be made.
    """
    if mode == "exact":
        return -math.log(2.0 * z)
    if mode == "paper":
        if w == 1.0:
            return _NEG_INF
        return math.log(abs(1.0 - w)) - math.log(4.0 * z * w)
    raise DomainError(f"unknown jacobian mode {mode!r}")


def _tau_prior_shapes(spec: ModelSpec) -> tuple[float, float]:
    if spec.transmission_prior is None:
        raise DomainError("model spec carries no transmission prior")
    return beta_mr_to_shapes(spec.transmission_prior)


def logpost_wk_transmission(
    w: float, state: ChainState, dataset: SurveyDataset, spec: ModelSpec
) -> float:
    """Log conditional of w = N_K tau; carries the full likelihood plus its
    share of the reparameterized priors and the Jacobian term."""
    z = float(state.z)
    N = float(dataset.total_population)
    y_k = dataset.responses[:, dataset.unknown_index]
    if not (float(y_k.max()) < w < N and w < z and w * z < N * N):
        return _NEG_INF
    a, b = _tau_prior_shapes(spec)
    s_y = float(y_k.sum())
    s_d = float(state.degrees.sum())
    lp = s_y * math.log(w / (N - w)) + s_d * math.log1p(-w / N)
    lp += 0.5 * (a - 2.0) * math.log(w)
    lp += (b - 1.0) * math.log1p(-math.sqrt(w / z))
    return lp + log_jacobian_wz(w, z, spec.jacobian_mode)


def logpost_zk_transmission(
    z: float, state: ChainState, dataset: SurveyDataset, spec: ModelSpec
) -> float:
    """Log conditional of z = N_K / tau; prior-only apart from the Jacobian
    (the likelihood depends on w alone)."""
    w = float(state.w)
    N = float(dataset.total_population)
    if not (z > w and w * z < N * N):
        return _NEG_INF
    a, b = _tau_prior_shapes(spec)
    lp = -0.5 * a * math.log(z)
    lp += (b - 1.0) * math.log1p(-math.sqrt(w / z))
    return lp + log_jacobian_wz(w, z, spec.jacobian_mode)


def _logpost_d_transmission_vec(
    d: np.ndarray, state: ChainState, dataset: SurveyDataset
) -> np.ndarray:
    # identical algebra to the random degree case with w in the unknown column
    return _logpost_d_random_degree_vec(d, state, dataset, float(state.w))


def logpost_di_transmission(d: float, i: int, state: ChainState, dataset: SurveyDataset) -> float:
    vec = state.degrees.copy()
    vec[i] = d
    return float(_logpost_d_transmission_vec(vec, state, dataset)[i])


# ---------------------------------------------------------------------------
# Combined barrier + transmission model


def _combined_tau_by_column(state: ChainState, dataset: SurveyDataset) -> np.ndarray:
    tau = np.ones(dataset.n_groups)
    tau[dataset.unknown_index] = float(state.tau)
    return tau


def _combined_logpost_mk(mk: float, state: ChainState, dataset: SurveyDataset) -> float:
    if not 0.0 < mk < 1.0:
        return _NEG_INF
    uk = dataset.unknown_index
    q_col = state.q[:, uk]
    r = 1.0 / float(state.rho[uk]) - 1.0
    a = mk * r
    b = (1.0 - mk) * r
    lp = (a - 1.0) * float(np.log(q_col).sum()) + (b - 1.0) * float(np.log1p(-q_col).sum())
    lp -= q_col.size * float(betaln(a, b))
    return lp - math.log(mk)


def _combined_logpost_rhok(rho: float, k: int, state: ChainState, dataset: SurveyDataset) -> float:
    if not 0.0 < rho < 1.0:
        return _NEG_INF
    q_col = state.q[:, k]
    m_k = float(_barrier_means_by_column(state, dataset)[k])
    r = 1.0 / rho - 1.0
    a = m_k * r
    b = (1.0 - m_k) * r
    lp = (a - 1.0) * float(np.log(q_col).sum()) + (b - 1.0) * float(np.log1p(-q_col).sum())
    return lp - q_col.size * float(betaln(a, b))


def _combined_logpost_tau(tau: float, state: ChainState, dataset: SurveyDataset, spec: ModelSpec) -> float:
    """Log conditional of the reporting fraction: binomial terms of the
    unknown column plus one Beta(mean, dispersion) prior density."""
    if not 0.0 < tau < 1.0:
        return _NEG_INF
    uk = dataset.unknown_index
    y_k = dataset.responses[:, uk]
    q_col = state.q[:, uk]
    a, b = _tau_prior_shapes(spec)
    lp = float(y_k.sum()) * math.log(tau)
    lp += float(((state.degrees - y_k) * np.log1p(-tau * q_col)).sum())
    lp += (a - 1.0) * math.log(tau) + (b - 1.0) * math.log1p(-tau)
    return lp


def _combined_logpost_q_mat(
    q: np.ndarray, state: ChainState, dataset: SurveyDataset
) -> np.ndarray:
    """(n, K) matrix of per-coordinate log conditionals for the propensity
    matrix (coordinates are conditionally independent)."""
    y = dataset.responses
    valid = (q > 0.0) & (q < 1.0)
    safe = np.where(valid, q, 0.5)
    m = _barrier_means_by_column(state, dataset)
    r = 1.0 / state.rho - 1.0
    a = m * r
    b = (1.0 - m) * r
    tau = _combined_tau_by_column(state, dataset)
    lp = (y + a[None, :] - 1.0) * np.log(safe)
    lp += (state.degrees[:, None] - y) * np.log1p(-tau[None, :] * safe)
    lp += (b[None, :] - 1.0) * np.log1p(-safe)
    return np.where(valid, lp, _NEG_INF)


def _logpost_d_combined_vec(d: np.ndarray, state: ChainState, dataset: SurveyDataset) -> np.ndarray:
    y = dataset.responses
    ymax = y.max(axis=1)
    valid = d > ymax
    safe = np.where(valid, d, ymax + 1.0)
    tau = _combined_tau_by_column(state, dataset)
    miss = np.log1p(-tau[None, :] * state.q).sum(axis=1)

    logd = np.log(safe)
    lp = -logd - (logd - state.mu) ** 2 / (2.0 * state.sigma**2)
    lp += y.shape[1] * gammaln(safe + 1.0)
    lp -= gammaln(safe[:, None] - y + 1.0).sum(axis=1)
    lp -= gammaln(y + 1.0).sum(axis=1)
    lp += safe * miss
    return np.where(valid, lp, _NEG_INF)


def logpost_combined(
    param_kind: str,
    value: float,
    state: ChainState,
    dataset: SurveyDataset,
    spec: ModelSpec,
    i: int | None = None,
    k: int | None = None,
) -> float:
    """Log conditional of any Metropolis-updated combined-model parameter.

    ``param_kind`` is one of ``m_K``, ``rho_k`` (needs k), ``q_ik`` (needs i
    and k), ``tau_K``, ``d_i`` (needs i).
    """
    if param_kind == "m_K":
        return _combined_logpost_mk(value, state, dataset)
    if param_kind == "rho_k":
        if k is None:
            raise DomainError("rho_k conditional needs the column index k")
        return _combined_logpost_rhok(value, k, state, dataset)
    if param_kind == "tau_K":
        return _combined_logpost_tau(value, state, dataset, spec)
    if param_kind == "q_ik":
        if i is None or k is None:
            raise DomainError("q_ik conditional needs both indices")
        q = state.q.copy()
        q[i, k] = value
        return float(_combined_logpost_q_mat(q, state, dataset)[i, k])
    if param_kind == "d_i":
        if i is None:
            raise DomainError("d_i conditional needs the respondent index")
        vec = state.degrees.copy()
        vec[i] = value
        return float(_logpost_d_combined_vec(vec, state, dataset)[i])
    raise DomainError(f"unknown combined parameter kind {param_kind!r}")


# ---------------------------------------------------------------------------
# Starting points


def initial_state(spec: ModelSpec, dataset: SurveyDataset) -> ChainState:
    """Build a feasible starting state from the classical scale-up estimates.

    Degrees start at the ratio estimate floored at (max response + 1), the
    unknown size at the scale-up estimate clipped inside its bounds, mu and
    sigma at the moments of the log starting degrees clipped into their prior
    ranges, dispersions at 0.1, the reporting fraction at its prior mean, and
    propensities at their column means.
    """
    y = dataset.responses
    n, K = y.shape
    N = float(dataset.total_population)
    ymax_row = y.max(axis=1).astype(float)

    d_hat = scaleup_degrees(dataset)
    floor = ymax_row + 1.0
    zero_rows = int(np.sum(y.sum(axis=1) == 0))
    if zero_rows and np.any(d_hat < floor):
        warnings.warn(
            f"{zero_rows} respondent row(s) are entirely zero; their starting degrees "
            "were floored at 1",
            AllZeroResponses,
            stacklevel=2,
        )
    d0 = np.maximum(d_hat, floor)

    mu_lo, mu_hi = spec.mu_range
    sg_lo, sg_hi = spec.sigma_range
    logd = np.log(d0)
    if float(y[:, dataset.known_columns].sum()) == 0.0:
        mu0 = 0.5 * (mu_lo + mu_hi)
    else:
        mu0 = float(np.clip(logd.mean(), mu_lo + _OPEN_EPS, mu_hi - _OPEN_EPS))
    sd = float(logd.std())
    if not np.isfinite(sd):
        sd = 0.5 * (sg_lo + sg_hi)
    sigma0 = float(np.clip(sd, sg_lo + _OPEN_EPS, sg_hi - _OPEN_EPS))

    ymax_k = float(y[:, dataset.unknown_index].max())
    lb = ymax_k + 1.0
    ub = N * (1.0 - _OPEN_EPS)
    if lb >= ub:
        lb = 0.5 * (ymax_k + N)
    nk0 = float(np.clip(scaleup_size(dataset, d0), lb, ub))

    state = ChainState(degrees=d0, mu=mu0, sigma=sigma0)
    if spec.kind == "random_degree":
        state.size_unknown = nk0
    elif spec.kind == "barrier":
        state.size_unknown = float(np.clip(nk0 / N, _OPEN_EPS, 1.0 - _OPEN_EPS))
        state.rho = np.full(K, 0.1)
    elif spec.kind == "transmission":
        tau0 = spec.transmission_prior.m
        w0 = nk0 * tau0
        w_ub = N * tau0 * (1.0 - _OPEN_EPS)
        if ymax_k + 1.0 < w_ub:
            w0 = float(np.clip(w0, ymax_k + 1.0, w_ub))
        else:
            w0 = 0.5 * (ymax_k + N * tau0)
        if not (w0 > ymax_k and w0 < N):
            raise DomainError("cannot construct a feasible transmission starting point")
        state.w = w0
        state.z = w0 / (tau0 * tau0)
    elif spec.kind == "combined":
        m0 = float(np.clip(nk0 / N, _OPEN_EPS, 1.0 - _OPEN_EPS))
        state.size_unknown = m0
        state.rho = np.full(K, 0.1)
        state.tau = spec.transmission_prior.m
        q0 = np.empty((n, K))
        q0[:, dataset.known_columns] = dataset.known_sizes / N
        q0[:, dataset.unknown_index] = m0
        state.q = np.clip(q0, _OPEN_EPS, 1.0 - _OPEN_EPS)
    state.validate(dataset, spec)
    return state


# ---------------------------------------------------------------------------
# Sampling kernels: one full sweep per call, vectorized over blocks


class _KernelBase:
    """Shared plumbing: dataset caches, Gibbs steps, and the degree block."""

    kind: str = ""
    ols_params: tuple[str, ...] = ()
    vector_params: tuple[str, ...] = ()

    def __init__(self, dataset: SurveyDataset, spec: ModelSpec):
        if spec.kind != self.kind:
            raise DomainError(f"spec kind {spec.kind!r} does not match kernel {self.kind!r}")
        self.dataset = dataset
        self.spec = spec
        y = dataset.responses
        self._n, self._K = y.shape
        self._N = float(dataset.total_population)
        self._uk = dataset.unknown_index
        self._ymax_row = y.max(axis=1).astype(float)
        self._ymax_k = float(y[:, self._uk].max())

    def initial_state(self) -> ChainState:
        return initial_state(self.spec, self.dataset)

    def validate_state(self, state: ChainState) -> None:
        state.validate(self.dataset, self.spec)

    def _gibbs(self, state: ChainState, rng: RandomStream) -> None:
        state.mu = gibbs_mu(state, self.dataset, self.spec, rng)
        state.sigma = math.sqrt(gibbs_sigma2(state, self.dataset, self.spec, rng))

    def _scalar_step(
        self,
        state: ChainState,
        cond: LogConditional,
        scales: Mapping[str, object],
        rng: RandomStream,
        accept: dict,
    ) -> None:
        try:
            new, ok = mh_step(
                cond.get(state),
                lambda v: cond.logpost(v, state),
                float(scales[cond.name]),
                rng,
                bounds=cond.bounds(state),
                bound_mode=cond.bound_mode,
            )
        except NonFiniteDensity as exc:
            raise NonFiniteDensity(f"parameter {cond.name}: {exc}") from exc
        cond.set(state, new)
        accept[cond.name][0] += int(ok)
        accept[cond.name][1] += 1

    def _update_degrees(
        self,
        state: ChainState,
        logpost_vec,
        scale: np.ndarray,
        rng: RandomStream,
        accept: dict,
    ) -> None:
        d = state.degrees
        prop = d + scale * rng.gen.standard_normal(self._n)
        lp_old = logpost_vec(d, state, self.dataset)
        if not np.all(np.isfinite(lp_old)):
            raise NonFiniteDensity("parameter d: log conditional not finite at current degrees")
        lp_new = logpost_vec(prop, state, self.dataset)
        acc = np.log(rng.gen.uniform(size=self._n)) < lp_new - lp_old
        state.degrees = np.where(acc, prop, d)
        accept["d"][0] += int(acc.sum())
        accept["d"][1] += self._n

    # ---- recording hooks used by the engine ----

    def ols_values(self, state: ChainState) -> dict[str, float]:
        raise NotImplementedError

    def derived_record(self, state: ChainState) -> dict[str, float]:
        return {}

    def vector_values(self, state: ChainState, name: str) -> np.ndarray:
        if name == "d":
            return state.degrees
        if name == "q":
            return state.q.ravel()
        raise DomainError(f"unknown vector block {name!r}")

    def _rho_scale_array(self, scales: Mapping[str, object]) -> np.ndarray:
        return np.array([float(scales[f"rho_{k}"]) for k in range(self._K)])


class RandomDegreeKernel(_KernelBase):
    kind = "random_degree"
    vector_params = ("d",)
    ols_params = ("N_K",)

    def __init__(self, dataset, spec):
        super().__init__(dataset, spec)
        self._nk_cond = LogConditional(
            name="N_K",
            get=lambda s: s.size_unknown,
            set=lambda s, v: setattr(s, "size_unknown", v),
            logpost=lambda v, s: logpost_nk_random_degree(v, s, self.dataset),
            bounds=lambda s: (self._ymax_k, self._N),
            bound_mode="reject",
        )

    def sweep(self, state, scales, rng, accept):
        self._gibbs(state, rng)
        self._scalar_step(state, self._nk_cond, scales, rng, accept)
        self._update_degrees(
            state,
            lambda d, s, ds: _logpost_d_random_degree_vec(d, s, ds, float(s.size_unknown)),
            scales["d"],
            rng,
            accept,
        )

    def ols_values(self, state):
        return {"N_K": float(state.size_unknown)}


class BarrierKernel(_KernelBase):
    kind = "barrier"
    vector_params = ("d",)

    def __init__(self, dataset, spec):
        super().__init__(dataset, spec)
        self.ols_params = ("m_K",) + tuple(f"rho_{k}" for k in range(self._K))
        self._mk_cond = LogConditional(
            name="m_K",
            get=lambda s: s.size_unknown,
            set=lambda s, v: setattr(s, "size_unknown", v),
            logpost=lambda v, s: logpost_mk_barrier(v, s, self.dataset),
            bounds=lambda s: (0.0, 1.0),
            bound_mode="reflect",
        )
        self._y_float = dataset.responses.astype(float)

    def _rho_block_loglik(self, rho_vec: np.ndarray, state: ChainState) -> np.ndarray:
        """Per-column beta-binomial log likelihood for a candidate rho vector."""
        m = _barrier_means_by_column(state, self.dataset)
        r = 1.0 / rho_vec - 1.0
        a = m * r
        b = (1.0 - m) * r
        terms = betaln(a[None, :] + self._y_float, state.degrees[:, None] + b[None, :] - self._y_float)
        return terms.sum(axis=0) - self._n * betaln(a, b)

    def _update_rho_block(self, state, scales, rng, accept):
        rho = state.rho
        scale = self._rho_scale_array(scales)
        prop = reflect_into(rho + scale * rng.gen.standard_normal(self._K), 0.0, 1.0)
        interior = (prop > 0.0) & (prop < 1.0)
        prop = np.where(interior, prop, rho)
        lp_old = self._rho_block_loglik(rho, state)
        if not np.all(np.isfinite(lp_old)):
            raise NonFiniteDensity("parameter rho: log conditional not finite at current state")
        lp_new = self._rho_block_loglik(prop, state)
        acc = (np.log(rng.gen.uniform(size=self._K)) < lp_new - lp_old) & interior
        state.rho = np.where(acc, prop, rho)
        for k in range(self._K):
            accept[f"rho_{k}"][0] += int(acc[k])
            accept[f"rho_{k}"][1] += 1

    def sweep(self, state, scales, rng, accept):
        self._gibbs(state, rng)
        self._scalar_step(state, self._mk_cond, scales, rng, accept)
        self._update_rho_block(state, scales, rng, accept)
        self._update_degrees(state, _logpost_d_barrier_vec, scales["d"], rng, accept)

    def ols_values(self, state):
        vals = {"m_K": float(state.size_unknown)}
        vals.update({f"rho_{k}": float(state.rho[k]) for k in range(self._K)})
        return vals

    def derived_record(self, state):
        return {"N_K": float(state.size_unknown) * self._N}


class TransmissionKernel(_KernelBase):
    kind = "transmission"
    vector_params = ("d",)
    ols_params = ("w", "z")

    def __init__(self, dataset, spec):
        super().__init__(dataset, spec)
        self._w_cond = LogConditional(
            name="w",
            get=lambda s: s.w,
            set=lambda s, v: setattr(s, "w", v),
            logpost=lambda v, s: logpost_wk_transmission(v, s, self.dataset, self.spec),
            bounds=lambda s: (self._ymax_k, min(self._N, s.z, self._N * self._N / s.z)),
            bound_mode="reject",
        )
        self._z_cond = LogConditional(
            name="z",
            get=lambda s: s.z,
            set=lambda s, v: setattr(s, "z", v),
            logpost=lambda v, s: logpost_zk_transmission(v, s, self.dataset, self.spec),
            bounds=lambda s: (s.w, self._N * self._N / s.w),
            bound_mode="reject",
        )

    def sweep(self, state, scales, rng, accept):
        self._gibbs(state, rng)
        self._scalar_step(state, self._w_cond, scales, rng, accept)
        self._scalar_step(state, self._z_cond, scales, rng, accept)
        self._update_degrees(state, _logpost_d_transmission_vec, scales["d"], rng, accept)

    def ols_values(self, state):
        return {"w": float(state.w), "z": float(state.z)}

    def derived_record(self, state):
        return {
            "N_K": math.sqrt(state.w * state.z),
            "tau": math.sqrt(state.w / state.z),
        }


class CombinedKernel(_KernelBase):
    kind = "combined"
    vector_params = ("d", "q")

    def __init__(self, dataset, spec):
        super().__init__(dataset, spec)
        self.ols_params = ("m_K",) + tuple(f"rho_{k}" for k in range(self._K)) + ("tau",)
        self._mk_cond = LogConditional(
            name="m_K",
            get=lambda s: s.size_unknown,
            set=lambda s, v: setattr(s, "size_unknown", v),
            logpost=lambda v, s: _combined_logpost_mk(v, s, self.dataset),
            bounds=lambda s: (0.0, 1.0),
            bound_mode="reflect",
        )
        self._tau_cond = LogConditional(
            name="tau",
            get=lambda s: s.tau,
            set=lambda s, v: setattr(s, "tau", v),
            logpost=lambda v, s: _combined_logpost_tau(v, s, self.dataset, self.spec),
            bounds=lambda s: (0.0, 1.0),
            bound_mode="reflect",
        )

    def _rho_block_loglik(self, rho_vec: np.ndarray, state: ChainState) -> np.ndarray:
        m = _barrier_means_by_column(state, self.dataset)
        r = 1.0 / rho_vec - 1.0
        a = m * r
        b = (1.0 - m) * r
        sum_log_q = np.log(state.q).sum(axis=0)
        sum_log1m_q = np.log1p(-state.q).sum(axis=0)
        return (a - 1.0) * sum_log_q + (b - 1.0) * sum_log1m_q - self._n * betaln(a, b)

    def _update_rho_block(self, state, scales, rng, accept):
        rho = state.rho
        scale = self._rho_scale_array(scales)
        prop = reflect_into(rho + scale * rng.gen.standard_normal(self._K), 0.0, 1.0)
        interior = (prop > 0.0) & (prop < 1.0)
        prop = np.where(interior, prop, rho)
        lp_old = self._rho_block_loglik(rho, state)
        if not np.all(np.isfinite(lp_old)):
            raise NonFiniteDensity("parameter rho: log conditional not finite at current state")
        lp_new = self._rho_block_loglik(prop, state)
        acc = (np.log(rng.gen.uniform(size=self._K)) < lp_new - lp_old) & interior
        state.rho = np.where(acc, prop, rho)
        for k in range(self._K):
            accept[f"rho_{k}"][0] += int(acc[k])
            accept[f"rho_{k}"][1] += 1

    def _update_q_block(self, state, scale, rng, accept):
        q = state.q
        prop = reflect_into(q + scale.reshape(q.shape) * rng.gen.standard_normal(q.shape), 0.0, 1.0)
        interior = (prop > 0.0) & (prop < 1.0)
        prop = np.where(interior, prop, q)
        lp_old = _combined_logpost_q_mat(q, state, self.dataset)
        if not np.all(np.isfinite(lp_old)):
            raise NonFiniteDensity("parameter q: log conditional not finite at current state")
        lp_new = _combined_logpost_q_mat(prop, state, self.dataset)
        acc = (np.log(rng.gen.uniform(size=q.shape)) < lp_new - lp_old) & interior
        state.q = np.where(acc, prop, q)
        accept["q"][0] += int(acc.sum())
        accept["q"][1] += acc.size

    def sweep(self, state, scales, rng, accept):
        self._gibbs(state, rng)
        self._scalar_step(state, self._mk_cond, scales, rng, accept)
        self._update_rho_block(state, scales, rng, accept)
        self._scalar_step(state, self._tau_cond, scales, rng, accept)
        self._update_degrees(state, _logpost_d_combined_vec, scales["d"], rng, accept)
        self._update_q_block(state, scales["q"], rng, accept)

    def ols_values(self, state):
        vals = {"m_K": float(state.size_unknown)}
        vals.update({f"rho_{k}": float(state.rho[k]) for k in range(self._K)})
        vals["tau"] = float(state.tau)
        return vals

    def derived_record(self, state):
        return {"N_K": float(state.size_unknown) * self._N}


_KERNELS = {
    "random_degree": RandomDegreeKernel,
    "barrier": BarrierKernel,
    "transmission": TransmissionKernel,
    "combined": CombinedKernel,
}


def make_kernel(dataset: SurveyDataset, spec: ModelSpec):
    """Build the sampling kernel for a model spec."""
    return _KERNELS[spec.kind](dataset, spec)
