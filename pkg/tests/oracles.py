"""Independent oracles for the test suite.

Everything here deliberately avoids the package's own likelihood code paths:
marginals come from adaptive quadrature or dense grid integration of the
generative densities written out directly, so agreement with the sampler is
evidence, not tautology.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln, logsumexp

# ---------------------------------------------------------------------------
# quadrature marginals


def beta_binomial_marginal_quad(y: int, d: float, m: float, rho: float) -> float:
    """P(Y = y | d, m, rho) with Y | q ~ Binom(d, q), q ~ Beta(m, rho), by
    adaptive quadrature over q.  d may be any real > y."""
    s = 1.0 / rho - 1.0
    a = m * s
    b = (1.0 - m) * s
    log_c = gammaln(d + 1.0) - gammaln(y + 1.0) - gammaln(d - y + 1.0)
    log_norm = gammaln(a) + gammaln(b) - gammaln(a + b)

    def f(q):
        return np.exp(
            log_c
            + (y + a - 1.0) * np.log(q)
            + (d - y + b - 1.0) * np.log1p(-q)
            - log_norm
        )

    val, _ = quad(f, 0.0, 1.0, limit=300)
    return float(val)


def combined_q_density_quad(y: int, d: float, tau: float, a: float, b: float):
    """Normalized density of one propensity coordinate given everything else:
    proportional to q^(y+a-1) (1 - tau q)^(d-y) (1-q)^(b-1).

    Returns (pdf callable, normalizing constant)."""

    def unnorm(q):
        return q ** (y + a - 1.0) * (1.0 - tau * q) ** (d - y) * (1.0 - q) ** (b - 1.0)

    norm, _ = quad(unnorm, 0.0, 1.0, limit=300)

    def pdf(q):
        return unnorm(q) / norm

    return pdf, float(norm)


# ---------------------------------------------------------------------------
# brute-force grid posteriors
#
# Both models below share the structure: respondents are conditionally
# independent given (mu, sigma) and the unknown-column success probability,
# so the unknown-size marginal is
#
#   p(target) ∝ prior(target) * sum_{mu, sigma} prod_i ∫ LogNormal(d; mu,
#       sigma) * prod_k C(d, y_ik) p_k^y_ik (1-p_k)^(d-y_ik) dd
#
# integrated on dense grids (Simpson over mu/sigma/target, trapezoid over
# log-spaced degree grids).


def _simpson_weights(n_points: int, h: float) -> np.ndarray:
    if n_points < 3 or n_points % 2 == 0:
        raise ValueError("Simpson needs an odd number of points >= 3")
    w = np.ones(n_points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def _log_trapz(log_f: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log of trapezoid integrals along the last axis, stable in log space."""
    m = log_f.max(axis=-1, keepdims=True)
    vals = np.trapezoid(np.exp(log_f - m), x, axis=-1)
    return np.squeeze(m, axis=-1) + np.log(np.maximum(vals, 1e-300))


class UnknownColumnGridOracle:
    """Grid integration over (mu, sigma, degrees) of the binomial-response
    model, leaving the unknown-column success probability free.

    ``log_evidence(p_unknown)`` returns, for each supplied probability, the
    log of sum_{mu,sigma} prod_i ∫ ... dd with the unknown column's binomial
    probability set to that value.  Callers multiply in the prior of their
    parameterization and integrate over their own grids.
    """

    def __init__(
        self,
        y: np.ndarray,
        known_sizes,
        total_population: float,
        mu_range: tuple[float, float],
        sigma_range: tuple[float, float],
        n_mu: int = 17,
        n_sigma: int = 13,
        n_d: int = 360,
        d_upper: float = 6000.0,
    ):
        y = np.asarray(y, dtype=float)
        self.n, K = y.shape
        self.y_unknown = y[:, -1]
        y_known = y[:, :-1]
        p_known = np.asarray(known_sizes, dtype=float) / total_population
        self.N = float(total_population)

        mu_grid = np.linspace(mu_range[0], mu_range[1], n_mu)
        sg_grid = np.linspace(sigma_range[0], sigma_range[1], n_sigma)
        w_mu = _simpson_weights(n_mu, mu_grid[1] - mu_grid[0])
        w_sg = _simpson_weights(n_sigma, sg_grid[1] - sg_grid[0])
        self.mu_sigma = [
            (mu, sg, w1 * w2)
            for mu, w1 in zip(mu_grid, w_mu)
            for sg, w2 in zip(sg_grid, w_sg)
        ]

        ymax = y.max(axis=1)
        # per-respondent log-spaced degree grids above the row maximum
        self.d_grids = np.stack(
            [np.geomspace(ymax[i] + 1e-6, d_upper, n_d) for i in range(self.n)]
        )
        # degree-only part: log C(d, y_ik) for all columns + known-column terms
        self.g = np.zeros_like(self.d_grids)
        for i in range(self.n):
            d = self.d_grids[i]
            for k in range(K):
                self.g[i] += (
                    gammaln(d + 1.0) - gammaln(y[i, k] + 1.0) - gammaln(d - y[i, k] + 1.0)
                )
            for k, p in enumerate(p_known):
                self.g[i] += y_known[i, k] * np.log(p) + (d - y_known[i, k]) * np.log1p(-p)

    def log_evidence(self, p_unknown: np.ndarray) -> np.ndarray:
        """For each unknown-column probability, the log mu/sigma-integrated
        likelihood with degrees integrated out."""
        p = np.asarray(p_unknown, dtype=float)
        out = np.full((len(self.mu_sigma), p.size), -np.inf)
        logp = np.log(p)
        log1mp = np.log1p(-p)
        for j, (mu, sg, wgt) in enumerate(self.mu_sigma):
            log_i_total = np.zeros(p.size)
            for i in range(self.n):
                d = self.d_grids[i]
                log_prior_d = (
                    -np.log(d) - np.log(sg) - (np.log(d) - mu) ** 2 / (2.0 * sg * sg)
                )
                base = log_prior_d + self.g[i]  # (n_d,)
                contrib = (
                    self.y_unknown[i] * logp[:, None]
                    + (d[None, :] - self.y_unknown[i]) * log1mp[:, None]
                )
                log_i_total += _log_trapz(base[None, :] + contrib, d)
            out[j] = np.log(wgt) + log_i_total
        return logsumexp(out, axis=0)


def degree_model_nk_cell_masses(
    y, known_sizes, total_population, mu_range, sigma_range, nk_edges
) -> np.ndarray:
    """Brute-force cell masses of the unknown-size marginal of the binomial
    model with a 1/N_K prior, Simpson-integrated within each grid cell."""
    oracle = UnknownColumnGridOracle(y, known_sizes, total_population, mu_range, sigma_range)
    edges = np.asarray(nk_edges, dtype=float)
    mids = 0.5 * (edges[:-1] + edges[1:])
    pts = np.sort(np.concatenate([edges, mids]))
    log_f = oracle.log_evidence(pts / oracle.N) - np.log(pts)
    f = np.exp(log_f - log_f.max())
    lo, mid, hi = f[0:-1:2], f[1::2], f[2::2]
    masses = (edges[1:] - edges[:-1]) / 6.0 * (lo + 4.0 * mid + hi)
    return masses / masses.sum()


def transmission_model_cell_masses(
    y,
    known_sizes,
    total_population,
    mu_range,
    sigma_range,
    tau_alpha,
    tau_beta,
    nk_edges,
    tau_edges,
) -> np.ndarray:
    """Brute-force 2-D cell masses of the (unknown size, reporting fraction)
    posterior: likelihood through w = size * fraction, 1/size prior, Beta
    prior on the fraction.  Product Simpson rule per cell."""
    oracle = UnknownColumnGridOracle(y, known_sizes, total_population, mu_range, sigma_range)
    N = oracle.N
    y_unknown_max = float(np.max(np.asarray(y, dtype=float)[:, -1]))

    # tabulate the log evidence on a dense w grid once, interpolate after
    w_grid = np.geomspace(max(y_unknown_max, 0.5) * 1.0000001, N * 0.999999, 900)
    log_ev_w = oracle.log_evidence(w_grid / N)

    def log_joint(nk: np.ndarray, tau: np.ndarray) -> np.ndarray:
        w = nk * tau
        out = np.full(w.shape, -np.inf)
        ok = (w > y_unknown_max) & (w < N)
        if np.any(ok):
            ev = np.interp(np.log(w[ok]), np.log(w_grid), log_ev_w)
            out[ok] = (
                ev
                - np.log(nk[ok])
                + (tau_alpha - 1.0) * np.log(tau[ok])
                + (tau_beta - 1.0) * np.log1p(-tau[ok])
            )
        return out

    nk_edges = np.asarray(nk_edges, dtype=float)
    tau_edges = np.asarray(tau_edges, dtype=float)
    nk_pts = np.sort(np.concatenate([nk_edges, 0.5 * (nk_edges[:-1] + nk_edges[1:])]))
    tau_pts = np.sort(np.concatenate([tau_edges, 0.5 * (tau_edges[:-1] + tau_edges[1:])]))
    nk_mesh, tau_mesh = np.meshgrid(nk_pts, tau_pts, indexing="ij")
    log_f = log_joint(nk_mesh, tau_mesh)
    f = np.exp(log_f - log_f[np.isfinite(log_f)].max())

    w_nk = np.tile([1.0, 4.0, 1.0], (nk_edges.size - 1, 1))
    w_tau = np.tile([1.0, 4.0, 1.0], (tau_edges.size - 1, 1))
    masses = np.zeros((nk_edges.size - 1, tau_edges.size - 1))
    for a in range(nk_edges.size - 1):
        ia = 2 * a
        dn = nk_edges[a + 1] - nk_edges[a]
        for c in range(tau_edges.size - 1):
            ic = 2 * c
            block = f[ia : ia + 3, ic : ic + 3]
            dt = tau_edges[c + 1] - tau_edges[c]
            masses[a, c] = (
                dn * dt / 36.0 * float(w_nk[a] @ block @ w_tau[c])
            )
    return masses / masses.sum()


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
