"""Classical scale-up estimators, posterior summaries, recall-bias
post-adjustment, and convergence diagnostics.

Everything here is a pure function over immutable arrays.

Conventions fixed for reproducibility:

* quantiles use linear interpolation on order statistics (numpy's default,
  "type 7"), so intervals are bit-for-bit reproducible;
* the potential scale reduction factor is the non-split variant
  sqrt((((T-1)/T) W + B/T) / W) with W the mean within-chain variance and
  B = T Var(chain means), both with ddof=1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sp_fft
from scipy import optimize

from .data import SurveyDataset
from .errors import (
    DomainError,
    FitDiverged,
    RecallAdjustmentSuspect,
    TooFewDraws,
    ZeroDegreeSum,
    ZeroWithinVariance,
)
from .numerics import RandomStream

__all__ = [
    "PosteriorSummary",
    "RecallCalibration",
    "scaleup_degrees",
    "scaleup_size",
    "summarize",
    "gelman_rubin",
    "effective_sample_size",
    "fit_recall_calibration",
    "recall_adjust_draws",
    "check_recall_applicability",
]


def scaleup_degrees(dataset: SurveyDataset) -> np.ndarray:
    """Ratio degree estimates: d_i = N * (sum of known responses) / (sum of known sizes).

    Sums run over the known groups only.
    """
    y_known = dataset.responses[:, dataset.known_columns]
    total_known = float(dataset.known_sizes.sum())
    if not total_known > 0:
        raise DomainError("known sizes sum to zero")
    return dataset.total_population * y_known.sum(axis=1) / total_known


def scaleup_size(dataset: SurveyDataset, degrees: Optional[np.ndarray] = None) -> float:
    """Ratio size estimate: N * (sum of unknown-column responses) / (sum of degrees)."""
    if degrees is None:
        degrees = scaleup_degrees(dataset)
    denom = float(np.sum(degrees))
    if not denom > 0:
        raise ZeroDegreeSum("cannot scale up: estimated degrees sum to zero")
    num = float(dataset.responses[:, dataset.unknown_index].sum())
    return dataset.total_population * num / denom


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    median: float
    sd: float
    ci80: tuple[float, float]
    ci95: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "median": self.median,
            "sd": self.sd,
            "ci80": list(self.ci80),
            "ci95": list(self.ci95),
        }


def summarize(draws, transform: str = "size", total_population: Optional[int] = None) -> PosteriorSummary:
    """Mean/median/SD and central 80%/95% intervals of posterior draws.

    ``transform="prevalence"`` divides by the total population, which must
    then be supplied.  Requires at least 100 draws.
    """
    arr = np.asarray(draws, dtype=float).ravel()
    if arr.size < 100:
        raise TooFewDraws(f"need at least 100 draws, got {arr.size}")
    if transform == "prevalence":
        if total_population is None:
            raise DomainError("prevalence transform requires total_population")
        arr = arr / float(total_population)
    elif transform != "size":
        raise DomainError(f"unknown transform {transform!r}")
    q = np.quantile(arr, [0.025, 0.10, 0.50, 0.90, 0.975])
    return PosteriorSummary(
        mean=float(arr.mean()),
        median=float(q[2]),
        sd=float(arr.std(ddof=1)),
        ci80=(float(q[1]), float(q[3])),
        ci95=(float(q[0]), float(q[4])),
    )


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor over two or more equal-length chains.

    Computes sqrt(V / W) with V = ((T-1)/T) W + B/T, where W is the mean of
    the within-chain variances and B = T Var(chain means) (no chain
    splitting).  Values near 1 indicate convergence.
    """
    arr = np.asarray(chains, dtype=float)
    if arr.ndim != 2:
        try:
            arr = np.vstack([np.asarray(c, dtype=float).ravel() for c in chains])
        except ValueError:
            raise DomainError("chains must be equal-length 1-D arrays") from None
    m, T = arr.shape
    if m < 2:
        raise DomainError("need at least two chains")
    if T < 10:
        raise DomainError("chains must have length >= 10")
    W = float(arr.var(axis=1, ddof=1).mean())
    if W == 0.0:
        raise ZeroWithinVariance("within-chain variance is zero")
    B = T * float(arr.mean(axis=1).var(ddof=1))
    v_hat = (T - 1.0) / T * W + B / T
    return float(np.sqrt(v_hat / W))


def effective_sample_size(draws) -> float:
    """Autocorrelation-adjusted effective sample size of one chain.

    Uses the FFT autocovariance with Geyer's initial monotone positive
    sequence truncation.  Returns the raw length for constant or very short
    chains.
    """
    x = np.asarray(draws, dtype=float).ravel()
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var0 = float(np.dot(x, x)) / n
    if var0 == 0.0:
        return float(n)
    nf = sp_fft.next_fast_len(2 * n)
    f = sp_fft.rfft(x, nf)
    acov = sp_fft.irfft(f * np.conj(f), nf)[:n].real / n
    rho = acov / acov[0]
    # pair sums of consecutive autocorrelations
    n_pairs = n // 2
    pair = rho[0 : 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    pos = pair > 0
    if not pos.all():
        pair = pair[: int(np.argmin(pos))]
    if pair.size == 0:
        return float(n)
    pair = np.minimum.accumulate(pair)  # enforce monotone decrease
    tau = max(-1.0 + 2.0 * float(pair.sum()), 1.0 / n)
    return float(min(max(n / tau, 1.0), float(n)))


@dataclass(frozen=True)
class RecallCalibration:
    """Fitted errors-in-variables recall line on the log-size scale.

    log(estimate_k) = a + b log(true size_k) + delta_k + eps_k, with
    delta_k ~ N(0, s_k^2) the posterior spread of estimate k and
    eps_k ~ N(0, sigma_eps^2) the residual scatter.
    """

    a: float
    b: float
    sigma_eps: float

    def __post_init__(self):
        if not 0.0 <= self.a <= 15.0:
            raise DomainError(f"intercept {self.a} outside [0, 15]")
        if not 0.0 < self.b <= 1.0:
            raise DomainError(f"slope {self.b} outside (0, 1]")
        if not 0.0 <= self.sigma_eps <= 1.0:
            raise DomainError(f"sigma_eps {self.sigma_eps} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "sigma_eps": self.sigma_eps}


_B_FLOOR = 1e-9
# fixed restarts spread over the (a, b, sigma_eps) box
_CAL_STARTS = (
    (2.0, 0.25, 0.10),
    (7.5, 0.50, 0.30),
    (12.0, 0.90, 0.10),
    (1.0, 0.10, 0.50),
    (10.0, 0.70, 0.05),
    (5.0, 0.95, 0.20),
)


def fit_recall_calibration(back_estimates: Sequence[tuple[float, float, float]]) -> RecallCalibration:
    """Maximum-likelihood fit of the recall line from back estimates.

    Parameters
    ----------
    back_estimates : sequence of (estimate, s, true_size)
        ``estimate`` is the posterior mean size of a known group refit as
        unknown, ``s`` the posterior SD of its log size, ``true_size`` the
        known size.  At least three groups are required.

    Maximizes the product of Normal(log estimate; a + b log true,
    s^2 + sigma_eps^2) densities over the box (0,15) x (0,1] x [0,1) by
    Nelder-Mead from several fixed restarts plus a least-squares start.
    """
    pts = list(back_estimates)
    if len(pts) < 3:
        raise DomainError(f"need at least 3 back estimates, got {len(pts)}")
    est = np.array([p[0] for p in pts], dtype=float)
    s = np.array([p[1] for p in pts], dtype=float)
    true = np.array([p[2] for p in pts], dtype=float)
    if np.any(est <= 0) or np.any(true <= 0):
        raise DomainError("estimates and true sizes must be positive")
    if np.any(s < 0):
        raise DomainError("posterior SDs must be nonnegative")
    ylog = np.log(est)
    xlog = np.log(true)
    s2 = s**2

    def nll(theta):
        a, b, se = theta
        var = s2 + se * se + 1e-18
        resid = ylog - a - b * xlog
        return 0.5 * float(np.sum(np.log(2.0 * np.pi * var) + resid * resid / var))

    # least-squares start, clipped into the box
    vx = float(np.var(xlog))
    b0 = float(np.cov(xlog, ylog)[0, 1] / vx) if vx > 0 else 0.5
    b0 = min(max(b0, 0.05), 1.0)
    a0 = min(max(float(np.mean(ylog - b0 * xlog)), 0.0), 15.0)
    r0 = float(np.std(ylog - a0 - b0 * xlog))
    starts = [(a0, b0, min(max(r0, 0.0), 1.0))] + list(_CAL_STARTS)

    bounds = [(0.0, 15.0), (_B_FLOOR, 1.0), (0.0, 1.0)]
    results = []
    for start in starts:
        res = optimize.minimize(
            nll, np.asarray(start, dtype=float), method="Nelder-Mead", bounds=bounds,
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000},
        )
        results.append(res)
    best = min(results, key=lambda r: r.fun)
    # the slope collapsing onto its lower wall means the regression carries no
    # signal; all restarts railing there is the typical symptom
    if best.x[1] <= _B_FLOOR * 2:
        raise FitDiverged("the calibration slope collapsed onto its lower boundary")
    a, b, se = (float(v) for v in best.x)
    return RecallCalibration(a=a, b=max(b, _B_FLOOR), sigma_eps=max(se, 0.0))


def recall_adjust_draws(log_size_draws, cal: RecallCalibration, rng: RandomStream) -> np.ndarray:
    """Invert the recall line draw by draw: (Y - a)/b plus N(0, sigma_eps^2/b^2) noise.

    Applied strictly after sampling; the sampler never sees the calibration.
    """
    y = np.asarray(log_size_draws, dtype=float).ravel()
    if not cal.b > 0:
        raise DomainError("calibration slope must be positive")
    z = rng.gen.normal(0.0, cal.sigma_eps / cal.b, size=y.size)
    return (y - cal.a) / cal.b + z


def check_recall_applicability(dataset: SurveyDataset, unadjusted_size_mean: float) -> bool:
    """Warn loudly when the target group is larger than every known group.

    The recall line is a regression over the known groups; a target
    prevalence above the largest known prevalence is an extrapolation.
    Returns True when the adjustment is suspect.
    """
    target_prev = unadjusted_size_mean / float(dataset.total_population)
    max_known_prev = float(dataset.known_sizes.max()) / float(dataset.total_population)
    if target_prev > max_known_prev:
        warnings.warn(
            f"unadjusted target prevalence {target_prev:.4f} exceeds the largest known-group "
            f"prevalence {max_known_prev:.4f}; the recall regression is extrapolating and the "
            "adjusted estimate should not be trusted",
            RecallAdjustmentSuspect,
            stacklevel=2,
        )
        return True
    return False
