"""Domain types: survey data, the mean/dispersion Beta parameterization,
model specifications, and the mutable chain state.

``SurveyDataset``, ``BetaMR`` and ``ModelSpec`` are immutable value objects
and safe to share across threads.  ``ChainState`` is the one mutable type;
it is owned by a single chain and mutated only inside that chain's sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateSamples,
    DomainError,
    KnownSizeExceedsTotal,
    NegativeResponse,
    ShapeMismatch,
)

__all__ = [
    "BetaMR",
    "SurveyDataset",
    "ModelSpec",
    "ChainState",
    "MODEL_KINDS",
    "validate_dataset",
    "beta_mr_to_shapes",
    "beta_mr_from_shapes",
    "fit_beta_mr_moments",
]

MODEL_KINDS = ("random_degree", "barrier", "transmission", "combined")

_RHO_CLAMP = 1e-6  # keeps moment-fitted dispersions away from invalid shapes


@dataclass(frozen=True)
class BetaMR:
    """Beta distribution parameterized by mean ``m`` and dispersion ``rho``.

    The density is proportional to x^(alpha-1) (1-x)^(beta-1) with
    m = alpha/(alpha+beta) and rho = 1/(1+alpha+beta), so the variance is
    m(1-m)rho.
    """

    m: float
    rho: float

    def __post_init__(self):
        if not 0.0 < self.m < 1.0:
            raise DomainError(f"mean must lie in (0, 1), got {self.m}")
        if not 0.0 < self.rho < 1.0:
            raise DomainError(f"dispersion must lie in (0, 1), got {self.rho}")


def beta_mr_to_shapes(p: BetaMR) -> tuple[float, float]:
    """Convert (m, rho) to the usual (alpha, beta) Beta shape parameters."""
    s = 1.0 / p.rho - 1.0
    return p.m * s, (1.0 - p.m) * s


def beta_mr_from_shapes(alpha: float, beta: float) -> BetaMR:
    """Inverse of :func:`beta_mr_to_shapes`."""
    if not (alpha > 0 and beta > 0):
        raise DomainError("shape parameters must be positive")
    return BetaMR(m=alpha / (alpha + beta), rho=1.0 / (1.0 + alpha + beta))


def fit_beta_mr_moments(samples: Sequence[float]) -> BetaMR:
    """Fit (m, rho) by moments from samples strictly inside (0, 1).

    m is the sample mean and rho = Var / (m(1-m)), the exact Beta identity,
    with rho clamped to (1e-6, 1-1e-6) so near-degenerate bootstrap samples
    cannot produce invalid shapes.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise DegenerateSamples("need at least two samples")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("samples must lie strictly inside (0, 1)")
    m = float(arr.mean())
    var = float(arr.var(ddof=1))
    if var == 0.0:
        raise DegenerateSamples("samples have zero variance")
    if not 0.0 < m < 1.0:
        raise DegenerateSamples(f"sample mean {m} outside (0, 1)")
    rho = var / (m * (1.0 - m))
    rho = min(max(rho, _RHO_CLAMP), 1.0 - _RHO_CLAMP)
    return BetaMR(m=m, rho=rho)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SurveyDataset:
    """Validated survey responses with known subpopulation sizes.

    Attributes
    ----------
    responses : (n, K) int array
        Counts of contacts reported by each of n respondents in each of K
        groups.
    known_sizes : (K-1,) int array
        Sizes of the known groups, in column order with the unknown column
        skipped.
    total_population : int
    group_labels : tuple of K strings
    unknown_index : int
        Column of the group whose size is being estimated.
    """

    responses: np.ndarray
    known_sizes: np.ndarray
    total_population: int
    group_labels: tuple[str, ...]
    unknown_index: int

    @property
    def n_respondents(self) -> int:
        return self.responses.shape[0]

    @property
    def n_groups(self) -> int:
        return self.responses.shape[1]

    @property
    def known_columns(self) -> np.ndarray:
        cols = [k for k in range(self.n_groups) if k != self.unknown_index]
        return np.asarray(cols, dtype=int)

    def known_prevalences(self) -> np.ndarray:
        """N_k / N for the known groups, in known-column order."""
        return self.known_sizes / float(self.total_population)

    def size_of_column(self, col: int) -> int:
        """Known size of a column; raises for the unknown column."""
        if col == self.unknown_index:
            raise DomainError(f"column {col} is the unknown group")
        known = list(self.known_columns)
        return int(self.known_sizes[known.index(col)])


def validate_dataset(
    responses,
    known_sizes,
    total_population: int,
    group_labels: Optional[Sequence[str]] = None,
    unknown_index: Optional[int] = None,
) -> SurveyDataset:
    """Validate raw inputs and build a :class:`SurveyDataset`.

    The input table must be rectangular with nonnegative integer counts,
    every known size must be strictly below the total population, and
    exactly one column is designated unknown (the last one by default).
    Inputs are copied, never mutated.
    """
    try:
        resp = np.array(responses, dtype=float, copy=True)
    except ValueError as exc:
        raise ShapeMismatch(f"response table is not rectangular: {exc}") from None
    if resp.ndim != 2:
        raise ShapeMismatch(f"response table must be 2-D, got {resp.ndim}-D")
    n, K = resp.shape
    if n < 1:
        raise ShapeMismatch("need at least one respondent row")
    if K < 2:
        raise ShapeMismatch("need at least two groups (one known, one unknown)")
    bad = np.argwhere(~np.isfinite(resp) | (resp != np.floor(resp)))
    if bad.size:
        i, j = bad[0]
        raise ShapeMismatch(f"response at row {i}, column {j} is not an integer count")
    neg = np.argwhere(resp < 0)
    if neg.size:
        i, j = neg[0]
        raise NegativeResponse(f"negative response at row {i}, column {j}")

    if unknown_index is None:
        unknown_index = K - 1
    if not 0 <= unknown_index < K:
        raise ShapeMismatch(f"unknown_index {unknown_index} out of range for {K} columns")

    sizes = np.array(known_sizes, dtype=float, copy=True).ravel()
    if sizes.size != K - 1:
        raise ShapeMismatch(f"expected {K - 1} known sizes, got {sizes.size}")
    if np.any(sizes != np.floor(sizes)) or np.any(sizes <= 0):
        k = int(np.argwhere((sizes != np.floor(sizes)) | (sizes <= 0))[0, 0])
        raise ShapeMismatch(f"known size #{k} must be a positive integer, got {sizes[k]}")

    total = int(total_population)
    if total <= 0:
        raise DomainError(f"total population must be positive, got {total}")
    over = np.argwhere(sizes >= total)
    if over.size:
        k = int(over[0, 0])
        raise KnownSizeExceedsTotal(
            f"known size #{k} ({int(sizes[k])}) must be strictly below the total population {total}"
        )

    if group_labels is None:
        group_labels = tuple(f"group_{j}" for j in range(K))
    else:
        group_labels = tuple(str(g) for g in group_labels)
        if len(group_labels) != K:
            raise ShapeMismatch(f"expected {K} group labels, got {len(group_labels)}")

    return SurveyDataset(
        responses=_readonly(resp.astype(np.int64)),
        known_sizes=_readonly(sizes.astype(np.int64)),
        total_population=total,
        group_labels=group_labels,
        unknown_index=int(unknown_index),
    )


@dataclass(frozen=True)
class ModelSpec:
    """Which model to fit and its prior settings.

    ``transmission_prior`` is the Beta(mean, dispersion) prior on the
    reporting fraction of the unknown group and must be present exactly when
    the model involves transmission.  ``jacobian_mode`` selects the change-of-
    variables determinant used by the transmission sampler: ``"exact"`` is the
    analytically correct 1/(2z); ``"paper"`` reproduces a published variant,
    |(1-w)/(4zw)|, kept for comparison runs only.
    """

    kind: str
    mu_range: tuple[float, float] = (3.0, 8.0)
    sigma_range: tuple[float, float] = (0.25, 2.0)
    transmission_prior: Optional[BetaMR] = None
    jacobian_mode: str = "exact"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DomainError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        for name, rng in (("mu_range", self.mu_range), ("sigma_range", self.sigma_range)):
            lo, hi = rng
            if not lo < hi:
                raise DomainError(f"{name} must be a nonempty interval, got {rng}")
        if self.sigma_range[0] <= 0:
            raise DomainError("sigma_range must be positive")
        needs_tau = self.kind in ("transmission", "combined")
        if needs_tau and self.transmission_prior is None:
            raise DomainError(f"model {self.kind!r} requires a transmission_prior")
        if not needs_tau and self.transmission_prior is not None:
            raise DomainError(f"model {self.kind!r} does not take a transmission_prior")
        if self.jacobian_mode not in ("exact", "paper"):
            raise DomainError(f"jacobian_mode must be 'exact' or 'paper', got {self.jacobian_mode!r}")


@dataclass
class ChainState:
    """Current parameter values of one chain.  Owned by a single chain.

    Which fields are populated depends on the model kind:

    * all models: ``degrees`` (n,), ``mu``, ``sigma``
    * random_degree: ``size_unknown`` is N_K in persons
    * barrier / combined: ``size_unknown`` is the unknown prevalence m_K in
      (0, 1); ``rho`` is the (K,) dispersion vector
    * transmission: ``w`` = N_K * tau and ``z`` = N_K / tau (N_K and tau are
      derived)
    * combined: ``tau`` plus the (n, K) propensity matrix ``q``
    """

    degrees: np.ndarray
    mu: float
    sigma: float
    size_unknown: Optional[float] = None
    rho: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    tau: Optional[float] = None
    w: Optional[float] = None
    z: Optional[float] = None

    def copy(self) -> "ChainState":
        return ChainState(
            degrees=self.degrees.copy(),
            mu=self.mu,
            sigma=self.sigma,
            size_unknown=self.size_unknown,
            rho=None if self.rho is None else self.rho.copy(),
            q=None if self.q is None else self.q.copy(),
            tau=self.tau,
            w=self.w,
            z=self.z,
        )

    def validate(self, dataset: SurveyDataset, spec: ModelSpec) -> None:
        """Raise :class:`DomainError` if any chain-state invariant is broken."""
        y = dataset.responses
        n, K = y.shape
        if self.degrees.shape != (n,):
            raise DomainError(f"degrees must have shape ({n},)")
        ymax = y.max(axis=1)
        if np.any(self.degrees <= ymax):
            i = int(np.argwhere(self.degrees <= ymax)[0, 0])
            raise DomainError(f"degree {i} must exceed the max response of respondent {i}")
        if not spec.mu_range[0] <= self.mu <= spec.mu_range[1]:
            raise DomainError(f"mu {self.mu} outside {spec.mu_range}")
        if not spec.sigma_range[0] <= self.sigma <= spec.sigma_range[1]:
            raise DomainError(f"sigma {self.sigma} outside {spec.sigma_range}")
        N = dataset.total_population
        yK_max = float(y[:, dataset.unknown_index].max())
        if spec.kind == "random_degree":
            if self.size_unknown is None or not yK_max < self.size_unknown < N:
                raise DomainError("N_K must lie in (max unknown response, N)")
        elif spec.kind in ("barrier", "combined"):
            if self.size_unknown is None or not 0.0 < self.size_unknown < 1.0:
                raise DomainError("unknown prevalence m_K must lie in (0, 1)")
            if self.rho is None or self.rho.shape != (K,) or np.any(
                (self.rho <= 0) | (self.rho >= 1)
            ):
                raise DomainError("rho must be a (K,) vector inside (0, 1)")
        if spec.kind == "transmission":
            if self.w is None or self.z is None:
                raise DomainError("transmission state needs w and z")
            if not (self.w > yK_max and self.w < N):
                raise DomainError("w must lie in (max unknown response, N)")
            if not self.z >= self.w:
                raise DomainError("z must be >= w (reporting fraction at most 1)")
            if not self.w * self.z < float(N) ** 2:
                raise DomainError("sqrt(w z) must stay below the total population")
        if spec.kind == "combined":
            if self.tau is None or not 0.0 < self.tau <= 1.0:
                raise DomainError("tau must lie in (0, 1]")
            if self.q is None or self.q.shape != (n, K) or np.any((self.q <= 0) | (self.q >= 1)):
                raise DomainError("q must be an (n, K) matrix inside (0, 1)")
