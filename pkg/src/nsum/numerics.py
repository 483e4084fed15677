"""Special functions and seeded samplers shared by every model.

All randomness flows through :class:`RandomStream`.  The generator algorithm
is fixed per release and documented here so that published seeds reproduce
results: numpy's PCG64 bit generator keyed by
``SeedSequence(entropy=seed, spawn_key=(stream_id,))``.  Identical
``(seed, stream_id)`` pairs reproduce identical draw sequences; distinct
``stream_id`` values give statistically independent streams.

Log-gamma and friends are evaluated through scipy's Lanczos-class
implementations, which are far inside the 1e-10 absolute accuracy this
package needs (Monte Carlo error dominates).
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import special

from .errors import DomainError, TruncationTooTight

__all__ = [
    "RandomStream",
    "log_gamma",
    "log_beta",
    "log_choose",
    "sample_truncated_normal",
    "sample_truncated_inverse_gamma",
    "reflect_into",
]

# Untruncated mass below which rejection sampling is hopeless and the
# inverse-CDF construction is used directly.
_MASS_FLOOR = 1e-12

_TWO64 = 2**64


class RandomStream:
    """A deterministic, independently-keyed random stream.

    Parameters
    ----------
    seed : int
        Base seed, 0 <= seed < 2**64.
    stream_id : int
        Substream key, 0 <= stream_id < 2**64.  One stream per chain;
        streams must not be shared between threads.
    """

    __slots__ = ("seed", "stream_id", "gen")

    def __init__(self, seed: int, stream_id: int = 0):
        seed = int(seed)
        stream_id = int(stream_id)
        if not 0 <= seed < _TWO64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if not 0 <= stream_id < _TWO64:
            raise DomainError(f"stream_id must be a 64-bit unsigned integer, got {stream_id}")
        self.seed = seed
        self.stream_id = stream_id
        self.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,)))
        )

    def __repr__(self) -> str:  # pragma: no cover
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"


def _as_float_array(x, name: str):
    arr = np.asarray(x, dtype=float)
    return arr, np.isscalar(x) or arr.ndim == 0


def log_gamma(x):
    """Natural log of the gamma function for x > 0.

    Accepts scalars or arrays.  Raises :class:`DomainError` for any
    nonpositive argument.
    """
    arr, scalar = _as_float_array(x, "x")
    if np.any(~(arr > 0)):
        raise DomainError(f"log_gamma requires x > 0, got {arr[~(arr > 0)].flat[0]!r}")
    out = special.gammaln(arr)
    return float(out) if scalar else out


def log_beta(a, b):
    """log B(a, b) = log Gamma(a) + log Gamma(b) - log Gamma(a+b), for a, b > 0."""
    aa, sa = _as_float_array(a, "a")
    bb, sb = _as_float_array(b, "b")
    if np.any(~(aa > 0)) or np.any(~(bb > 0)):
        raise DomainError("log_beta requires positive arguments")
    out = special.betaln(aa, bb)
    return float(out) if (sa and sb) else out


def log_choose(d, y):
    """Log of the generalized binomial coefficient C(d, y) with real d >= y.

    y must be a nonnegative integer count; d may be any real >= y.
    """
    dd, sd = _as_float_array(d, "d")
    yy, sy = _as_float_array(y, "y")
    if np.any(yy < 0) or np.any(yy != np.floor(yy)):
        raise DomainError("log_choose requires nonnegative integer y")
    if np.any(dd < yy):
        raise DomainError("log_choose requires d >= y")
    out = special.gammaln(dd + 1.0) - special.gammaln(yy + 1.0) - special.gammaln(dd - yy + 1.0)
    return float(out) if (sd and sy) else out


def _trunc_norm_inverse(mean: float, sd: float, lo: float, hi: float, rng: RandomStream) -> float:
    """Inverse-CDF draw from Normal(mean, sd^2) restricted to (lo, hi).

    Works in the tail whose CDF values are best conditioned; when both
    endpoints underflow the normal CDF entirely, falls back to a truncated
    exponential tail approximation, which is asymptotically exact there.
    """
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    flip = False
    if b <= 0.0:  # work in the upper tail
        a, b = -b, -a
        flip = True
    if a <= 0.0:
        u = rng.gen.uniform(special.ndtr(a), special.ndtr(b))
        z = special.ndtri(u)
    else:
        # both endpoints positive: use complementary CDF for accuracy
        ua = special.ndtr(-b)
        ub = special.ndtr(-a)
        if ub > 0.0 and ub > ua:
            u = rng.gen.uniform(ua, ub)
            z = -special.ndtri(u)
        else:
            # CDF underflowed; truncated exponential with rate a on (a, b)
            span = -np.expm1(-a * (b - a))
            u = rng.gen.uniform()
            z = a - np.log1p(-u * span) / a
    if flip:
        z = -z
    x = mean + sd * z
    # keep strictly inside the open interval
    return float(min(max(x, np.nextafter(lo, hi)), np.nextafter(hi, lo)))


def sample_truncated_normal(mean, sd, lo, hi, rng: RandomStream, max_rejects: int = 1000) -> float:
    """Draw from Normal(mean, sd^2) truncated to the open interval (lo, hi).

    Rejection sampling first; after ``max_rejects`` misses, or when the
    interval holds less than 1e-12 of the untruncated mass (warned as
    :class:`TruncationTooTight`), the draw switches to the inverse-CDF
    construction so the call always terminates.
    """
    if not sd > 0:
        raise DomainError(f"sd must be positive, got {sd}")
    if not lo < hi:
        raise DomainError(f"empty interval ({lo}, {hi})")
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    if a > 0:
        mass = special.ndtr(-a) - special.ndtr(-b)
    else:
        mass = special.ndtr(b) - special.ndtr(a)
    if mass >= _MASS_FLOOR:
        for _ in range(max_rejects):
            x = mean + sd * rng.gen.standard_normal()
            if lo < x < hi:
                return float(x)
    else:
        warnings.warn(
            f"truncation ({lo}, {hi}) holds {mass:.3g} of the normal mass; "
            "using inverse-CDF construction",
            TruncationTooTight,
            stacklevel=2,
        )
    return _trunc_norm_inverse(mean, sd, lo, hi, rng)


def sample_truncated_inverse_gamma(
    shape, rate, lo, hi, rng: RandomStream, max_rejects: int = 1000
) -> float:
    """Draw from InverseGamma(shape, rate) truncated to (lo, hi).

    ``lo`` and ``hi`` bound the variate itself (for a variance draw they are
    bounds on sigma^2).  Rejection sampling against the untruncated inverse
    gamma, with an inverse-CDF fallback after ``max_rejects`` rejections, so
    the call always terminates.
    """
    if not (shape > 0 and rate > 0):
        raise DomainError("shape and rate must be positive")
    if not 0 < lo < hi:
        raise DomainError(f"bounds must satisfy 0 < lo < hi, got ({lo}, {hi})")
    for _ in range(max_rejects):
        g = rng.gen.gamma(shape, 1.0 / rate)
        if g > 0.0:
            x = 1.0 / g
            if lo < x < hi:
                return float(x)
    # inverse CDF: F(x) = Q(shape, rate/x), the regularized upper gamma integral
    f_lo = special.gammaincc(shape, rate / lo)
    f_hi = special.gammaincc(shape, rate / hi)
    if f_hi > f_lo:
        u = rng.gen.uniform(f_lo, f_hi)
        x = rate / special.gammainccinv(shape, u)
    else:
        # interval mass underflowed; sit next to the bound nearest the mode
        mode = rate / (shape + 1.0)
        x = lo if mode <= lo else hi
    return float(min(max(x, np.nextafter(lo, hi)), np.nextafter(hi, lo)))


def reflect_into(x, lo: float, hi: float):
    """Fold x into [lo, hi] by repeated reflection at the boundaries.

    Identity for points already inside; the induced random-walk proposal
    kernel is symmetric, so Metropolis acceptance needs no correction.
    Accepts scalars or arrays.
    """
    if not lo < hi:
        raise DomainError(f"empty interval ({lo}, {hi})")
    arr, scalar = _as_float_array(x, "x")
    width = hi - lo
    t = np.mod(arr - lo, 2.0 * width)
    folded = lo + (width - np.abs(t - width))
    out = np.where((arr >= lo) & (arr <= hi), arr, folded)
    return float(out) if scalar else out
