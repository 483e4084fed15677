"""Shared fixtures: toy datasets, toy chain states, and the two expensive
MCMC-versus-grid stationarity checks (session scoped so the model tests and
the acceptance gate share one run)."""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nsum.data import BetaMR, ChainState, ModelSpec, validate_dataset
from nsum.engine import ChainConfig, run_chain, tune_proposals
from nsum.models import make_kernel
from nsum.numerics import RandomStream

import oracles


@pytest.fixture
def tiny_dataset():
    """The minimal well-formed example: 2 respondents, 3 groups."""
    return validate_dataset(
        [[1, 0, 2], [0, 0, 1]], [100, 200], 1000, ["a", "b", "x"], unknown_index=2
    )


@pytest.fixture
def small_dataset():
    """A 6-respondent, 3-group dataset for conditional-density oracles."""
    y = [[4, 1, 2], [2, 0, 1], [6, 2, 3], [1, 0, 0], [3, 1, 1], [5, 1, 2]]
    return validate_dataset(y, [500, 150], 5000, ["g1", "g2", "hidden"], unknown_index=2)


def barrier_state_for(dataset, rho=0.30, m_unknown=0.05, mu=4.0, sigma=1.0):
    rng = RandomStream(5, 0)
    ymax = dataset.responses.max(axis=1)
    d = ymax + 1.0 + rng.gen.uniform(5.0, 60.0, dataset.n_respondents)
    return ChainState(
        degrees=d,
        mu=mu,
        sigma=sigma,
        size_unknown=m_unknown,
        rho=np.full(dataset.n_groups, rho),
    )


@pytest.fixture
def degree_grid_toy():
    """3-respondent toy for the unknown-size stationarity check."""
    y = np.array([[4, 2], [2, 1], [6, 2]])
    dataset = validate_dataset(y, [500], 5000, ["known", "hidden"], unknown_index=1)
    return dataset, ModelSpec(kind="random_degree")


@pytest.fixture(scope="session")
def degree_grid_check():
    """MCMC marginal of the unknown size versus brute-force grid integration.

    Returns (total variation distance, wall seconds spent).
    """
    t0 = time.perf_counter()
    y = np.array([[4, 2], [2, 1], [6, 2]])
    dataset = validate_dataset(y, [500], 5000, ["known", "hidden"], unknown_index=1)
    spec = ModelSpec(kind="random_degree")

    edges = np.linspace(2.0, 5000.0, 201)
    masses = oracles.degree_model_nk_cell_masses(
        y, [500], 5000, spec.mu_range, spec.sigma_range, edges
    )

    kernel = make_kernel(dataset, spec)
    config = ChainConfig(n_iterations=120_000, pilot_iterations=1000, seed=11)
    scales = tune_proposals(kernel, config, RandomStream(11, 0))
    draws = run_chain(kernel, config, scales, RandomStream(11, 1))
    hist, _ = np.histogram(draws.params["N_K"], bins=edges)
    tv = oracles.total_variation(hist / hist.sum(), masses)
    return tv, time.perf_counter() - t0


@pytest.fixture(scope="session")
def transmission_grid_check():
    """Joint (size, fraction) MCMC posterior versus 2-D grid integration.

    Returns (joint TV, size-marginal TV, fraction-marginal TV, seconds).
    """
    t0 = time.perf_counter()
    y = np.array([[5, 3], [3, 2]])
    prior = BetaMR(0.542, 0.011)
    dataset = validate_dataset(y, [500], 5000, ["known", "hidden"], unknown_index=1)
    spec = ModelSpec(kind="transmission", transmission_prior=prior, jacobian_mode="exact")
    from nsum.data import beta_mr_to_shapes

    alpha, beta = beta_mr_to_shapes(prior)
    nk_edges = np.linspace(3.0, 5000.0, 41)
    tau_edges = np.linspace(0.0, 1.0, 26)
    masses = oracles.transmission_model_cell_masses(
        y, [500], 5000, spec.mu_range, spec.sigma_range, alpha, beta, nk_edges, tau_edges
    )

    kernel = make_kernel(dataset, spec)
    config = ChainConfig(n_iterations=150_000, pilot_iterations=1000, seed=13)
    scales = tune_proposals(kernel, config, RandomStream(13, 0))
    draws = run_chain(kernel, config, scales, RandomStream(13, 1))
    nk = draws.params["N_K"]
    tau = draws.params["tau"]
    hist, _, _ = np.histogram2d(nk, tau, bins=[nk_edges, tau_edges])
    hist = hist / hist.sum()
    tv_joint = oracles.total_variation(hist.ravel(), masses.ravel())
    tv_nk = oracles.total_variation(hist.sum(axis=1), masses.sum(axis=1))
    tv_tau = oracles.total_variation(hist.sum(axis=0), masses.sum(axis=0))
    return tv_joint, tv_nk, tv_tau, time.perf_counter() - t0
