import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_bundle.coefficient_hull import random_periodic, sample_hull
from parabolic_bundle.evolution import time_one
from parabolic_bundle.green_kernel import green
from parabolic_bundle.order_cone import (
    BOUNDARY_NEGATIVE,
    BOUNDARY_POSITIVE,
    INTERIOR_NEGATIVE,
    INTERIOR_POSITIVE,
    NEITHER,
    ConeContext,
    ConeError,
    boundary_gauge_fit,
    column_gammas,
    cone_position,
    e_norm,
    e_operator_norm,
    focusing_check,
    focusing_gamma,
    focusing_inequalities,
    gamma_from_kernels,
    lower_gauge_m,
    m_values,
    projective_distance,
)


@pytest.fixture(scope="module")
def heat_kernel(heat):
    return green(heat.op, heat.b0, 1.0, heat.cfg)


def test_context_rejects_nonpositive_unit():
    with pytest.raises(ConeError):
        ConeContext(np.array([1.0, 0.0]), np.ones(2))


def test_e_norm_examples(heat):
    e = heat.ctx.e
    assert e_norm(e, heat.ctx) == 1.0
    assert e_norm(np.zeros_like(e), heat.ctx) == 0.0
    u = np.zeros_like(e)
    u[::2] = 3 * e[::2]
    assert e_norm(u, heat.ctx) == pytest.approx(3.0)


def test_cone_positions(heat):
    ctx = heat.ctx
    e = ctx.e
    basis = np.zeros_like(e)
    basis[5] = 1.0
    assert cone_position(e, ctx) == INTERIOR_POSITIVE
    assert cone_position(-e, ctx) == INTERIOR_NEGATIVE
    assert cone_position(basis, ctx) == BOUNDARY_POSITIVE
    assert cone_position(-basis, ctx) == BOUNDARY_NEGATIVE
    assert cone_position(e - 2 * (2 * e[5]) * basis, ctx) == NEITHER
    assert cone_position(np.zeros_like(e), ctx) == NEITHER


def test_e_operator_norm_identity(heat):
    assert e_operator_norm(np.eye(heat.grid.n_free), heat.ctx) == pytest.approx(1.0)


def test_lower_gauge_central_and_boundary(heat, heat_kernel):
    ctx = heat.ctx
    mid = heat.grid.n_free // 2
    m_mid = lower_gauge_m(heat_kernel, mid, ctx)
    scan = min(heat_kernel.K[i, mid] / ctx.e[i] for i in range(heat.grid.n_free))
    assert m_mid == pytest.approx(scan) and m_mid > 0
    m_edge = lower_gauge_m(heat_kernel, 0, ctx)
    assert 0 < m_edge < m_mid
    fit = boundary_gauge_fit(heat_kernel, ctx)
    assert fit["holds"]
    dist = heat.grid.dirichlet_distance()
    assert np.all(m_values(heat_kernel, ctx) >= fit["eps1"] * dist * (1 - 1e-12))


def test_self_ratio_is_one(heat, heat_kernel):
    col = heat_kernel.K[:, 7]
    ctx = ConeContext(col / col.max(), heat.ctx.weights)
    assert lower_gauge_m(heat_kernel, 7, ctx) / e_norm(col, ctx) == pytest.approx(1.0, rel=1e-14)


def test_gamma_single_node():
    ctx = ConeContext(np.array([1.0]), np.array([1.0]))
    kernel = SimpleNamespace(K=np.array([[0.37]]))
    assert gamma_from_kernels([kernel], ctx) == 1.0


def test_focusing_gamma_is_min_over_samples(small):
    spec = random_periodic(small.grid, np.random.default_rng(2), R=1.0)
    samples = sample_hull(spec, 8)
    report = focusing_gamma(small.op, samples, small.cfg, small.ctx)
    assert len(report.per_sample) == 8
    assert report.gamma_hat == min(report.per_sample) and report.positive
    single = [float(column_gammas(green(small.op, b, 1.0, small.cfg), small.ctx).min()) for b in samples]
    np.testing.assert_allclose(report.per_sample, single)
    with pytest.raises(ConeError):
        focusing_gamma(small.op, [], small.cfg, small.ctx)


def test_focusing_check_examples(heat, heat_kernel):
    gamma = float(column_gammas(heat_kernel, heat.ctx).min())
    basis = np.zeros(heat.grid.n_free)
    basis[0] = 1.0
    for u in (heat.ctx.e, basis, np.zeros(heat.grid.n_free)):
        assert focusing_check(u, heat.b0, heat.op, heat.cfg, heat.ctx, gamma)
    with pytest.raises(ConeError):
        focusing_check(-basis, heat.b0, heat.op, heat.cfg, heat.ctx, gamma)
    # a slightly larger gamma must fail on the worst column
    worst = int(np.argmin(column_gammas(heat_kernel, heat.ctx)))
    basis = np.zeros(heat.grid.n_free)
    basis[worst] = 1.0
    assert not focusing_check(basis, heat.b0, heat.op, heat.cfg, heat.ctx, gamma * 1.01)


def test_focusing_panel_and_diameter(small, rng):
    spec = random_periodic(small.grid, rng, R=1.0)
    samples = sample_hull(spec, 4)
    gamma = focusing_gamma(small.op, samples, small.cfg, small.ctx).gamma_hat
    panel = rng.uniform(0, 1, (small.grid.n_free, 25))
    for b in samples:
        images = time_one(small.op, b, panel, small.cfg)
        for k in range(panel.shape[1]):
            assert focusing_inequalities(images[:, k], small.ctx, gamma)
            assert projective_distance(images[:, k], small.ctx.e) <= -math.log(gamma) + 1e-12


def test_projective_examples(heat):
    rng = np.random.default_rng(0)
    e = heat.ctx.e
    u = e * rng.uniform(0.5, 2, e.size)
    assert projective_distance(u, 2 * u) == pytest.approx(0.0, abs=1e-15)
    r = np.linspace(1, 2, e.size)
    assert projective_distance(r * e, e, heat.ctx) == pytest.approx(math.log(2))
    basis = np.zeros_like(e)
    basis[0] = 1.0
    with pytest.raises(ConeError):
        projective_distance(basis, e, heat.ctx)
    with pytest.raises(ConeError):
        projective_distance(-e, e)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_birkhoff_contraction(small, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.uniform(0.01, 1, (2, small.grid.n_free))
    pu = time_one(small.op, small.b0, u, small.cfg)
    pv = time_one(small.op, small.b0, v, small.cfg)
    assert projective_distance(pu, pv) <= projective_distance(u, v) + 1e-12


@given(seed=st.integers(0, 10_000), alpha=st.floats(-5, 5))
@settings(max_examples=40, deadline=None)
def test_norm_axioms(heat, seed, alpha):
    rng = np.random.default_rng(seed)
    ctx = heat.ctx
    u, v = rng.standard_normal((2, heat.grid.n_free))
    assert e_norm(alpha * u, ctx) == pytest.approx(abs(alpha) * e_norm(u, ctx), rel=1e-12, abs=1e-300)
    assert e_norm(u + v, ctx) <= e_norm(u, ctx) + e_norm(v, ctx) + 1e-12
    assert np.abs(u).max() <= e_norm(u, ctx)
    low = np.abs(u)
    high = low + np.abs(v)
    assert e_norm(low, ctx) <= e_norm(high, ctx)
