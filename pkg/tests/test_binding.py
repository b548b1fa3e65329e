from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from towerdyn.critical import build_table
from towerdyn.errors import NonHyperbolicSample, NoValidDelta
from towerdyn.inducing.binding import (binding_distortion, binding_period, contraction_constant,
                                       estimate_bbc_kappa, estimate_outside_expansion,
                                       estimate_tau, fix_delta, quantile_line, sobol_points)
from towerdyn.maps import make_map


def test_fix_delta_full_quadratic(binding_cfg):
    # oracle: the a=4 run measured delta = 0.1 * 2^-2 with p_delta = 4
    assert binding_cfg.delta == pytest.approx(0.025)
    assert binding_cfg.p_delta == 4
    assert binding_cfg.kappa == pytest.approx(1.0)
    assert binding_cfg.eps == pytest.approx(binding_cfg.dprime / 100)
    assert max(binding_cfg.selection_sums) <= 1.0
    assert binding_cfg.Gamma == pytest.approx(11.30, rel=0.01)


def test_tau_full_quadratic(full):
    # f'(x) = 4 - 8x is linear: |f'(x) - f'(y)| |x - c| / (|f'(x)| |x - y|) = 1
    assert estimate_tau(full) == pytest.approx(1.0, abs=1e-9)


def test_binding_period_outside_delta(full, binding_cfg):
    assert binding_period(full, 0.5 + 2 * binding_cfg.delta, binding_cfg).p == 0
    assert binding_period(full, 0.1, binding_cfg) == (0, False)


def test_binding_period_at_critical_point_hits_cap(full, binding_cfg):
    assert binding_period(full, 0.5, binding_cfg).cap_hit


def test_binding_period_at_delta_edge(full, binding_cfg):
    d = binding_cfg.delta
    edge = min(binding_period(full, 0.5 + s * d, binding_cfg).p for s in (-1, 1))
    assert edge == binding_cfg.p_delta


def test_binding_period_monotone_towards_c(full, binding_cfg):
    hs = binding_cfg.delta * 2.0 ** -np.arange(0, 30)
    ps = [binding_period(full, 0.5 + h, binding_cfg).p for h in hs]
    assert all(b >= a for a, b in zip(ps, ps[1:]))
    assert ps[-1] > ps[0]


def test_level_sets_cover_delta(full, binding_cfg, levels):
    # the components of I_p for p >= p_edge tile (c - delta, c + delta) down to the floor
    h = levels.h[0]
    for s in range(2):
        assert h[s, levels.p_edge[0, s]] >= binding_cfg.delta
        assert np.all(np.diff(h[s, 1:]) <= 0)
    assert levels.depth >= 30
    for p in (levels.p_edge[0, 1] + 1, 10, 20):
        for lo, hi in levels.intervals(0, p, 0.5):
            mid = 0.5 * (lo + hi)
            assert binding_period(full, mid, binding_cfg).p == p


def test_level_derivative_constant(levels):
    assert levels.C0 > 0
    assert levels.intervals(0, 0, 0.5) == []


def test_binding_distortion_bounded(full, binding_cfg):
    xs = 0.5 + binding_cfg.delta * np.linspace(-1, 1, 41)
    for x in xs:
        assert binding_distortion(full, float(x), binding_cfg) <= binding_cfg.Gamma * 1.05


def test_contraction_constant_full(full):
    # the images of (c - delta, c) grow until they cover [0, 1]
    d = contraction_constant(full, 0.025)
    assert 0 < d <= 0.025


def test_kappa_full_quadratic(full):
    k0 = estimate_bbc_kappa(full, 0.05, 2000, seed=0)
    k1 = estimate_bbc_kappa(full, 0.05, 2000, seed=1)
    assert k0.kappa == pytest.approx(1.0) and k1.kappa == pytest.approx(1.0)
    assert k0.skipped == 0


def test_no_valid_delta_at_period_doubling():
    m = make_map("logistic", [3.0])
    with pytest.raises(NoValidDelta):
        fix_delta(m, build_table(m, 0.5, 1000))


def test_fix_delta_needs_long_table(full):
    with pytest.raises(ValueError):
        fix_delta(full, build_table(full, 0.5, 100))


def test_outside_expansion_full(expansion):
    assert 0 < expansion.lam <= math.log(4) + 1e-9
    assert expansion.C > 0


def test_outside_expansion_attracting_map():
    m = make_map("logistic", [2.9])
    with pytest.raises(NonHyperbolicSample):
        estimate_outside_expansion(m, 0.025)


def test_quantile_line_recovers_line():
    k = np.arange(50, dtype=float)
    a, b = quantile_line(k, 1.0 + 0.5 * k, 0.1)
    assert a == pytest.approx(1.0, abs=1e-8) and b == pytest.approx(0.5, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 2000), st.integers(0, 100))
def test_sobol_points_in_unit_interval(n, seed):
    xs = sobol_points(n, seed)
    assert xs.shape == (n,)
    assert np.all((xs >= 0) & (xs < 1))
