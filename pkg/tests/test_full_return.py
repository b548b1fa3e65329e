from __future__ import annotations

import math

import numpy as np
import pytest

from towerdyn.errors import HypothesisViolation, Renormalizable
from towerdyn.full_return import (check_holder_distortion, choose_omega0, conditional_tail_check,
                                  holder_constant, renormalization_test, return_step,
                                  separation_time, tail_of_R, verify_markov, xi_by_depth)
from towerdyn.inducing import kernel as K
from towerdyn.inducing.binding import build_level_sets, fix_delta
from towerdyn.critical import build_table
from towerdyn.inducing.construction import InducingContext, piece_distortion
from towerdyn.maps import make_map


@pytest.mark.parametrize("a, period", [(3.2, 2), (3.83, 3), (4.0, None)])
def test_renormalization_period(a, period):
    v = renormalization_test(make_map("logistic", [a]))
    assert v.renormalizable == (period is not None)
    assert v.period == period


def test_renormalizable_map_rejected(ctx):
    m = make_map("logistic", [3.2])
    fake = InducingContext(m, ctx.cfg, ctx.levels)
    with pytest.raises(Renormalizable):
        choose_omega0(fake)


def test_omega0_full_quadratic(ctx, omega0):
    # oracle: critical preimages of depth <= 11 leave no gap above (delta' - 2 eps) / 5
    assert omega0.t0 == 11
    lo, hi = omega0.omega0
    assert lo < 0.5 < hi
    assert omega0.length <= ctx.cfg.dprime / 15
    assert omega0.max_gap <= (ctx.cfg.dprime - 2 * ctx.cfg.eps) / 5
    widths = omega0.preimages.whi - omega0.preimages.wlo
    assert np.all(widths <= ctx.cfg.dprime / 15 * (1 + 1e-12))
    assert omega0.markov_error <= 1e-8


def test_preimage_table_depths(full, omega0):
    pre = omega0.preimages
    assert pre.t0 == omega0.t0
    assert np.all(np.diff(pre.off) >= 0)
    for t in range(1, 4):
        xs = pre.x[pre.off[t]: pre.off[t + 1]]
        # each depth-t preimage lands on c after t steps
        for x in xs:
            y = float(x)
            for _ in range(t):
                y = full.f(y)
            assert y == pytest.approx(0.5, abs=1e-9)


def test_return_map_invariants(Q):
    assert Q.violations() == []
    assert Q.markov_error <= 1e-8
    assert Q.resolved_mass + Q.unresolved_mass == pytest.approx(Q.length, rel=1e-9)
    assert all(p.t <= Q.t0 for p in Q.pieces)
    assert all(p.additivity_ok() for p in Q.pieces)


def test_markov_round_trip(full, Q):
    p = max(Q.pieces, key=lambda q: q.mass)
    assert verify_markov(full, Q.words[p.key], Q.omega0, p.R) <= 1e-8


def test_q_csv_columns(Q):
    rows = Q.csv_rows()
    assert rows and all(len(r) == 5 for r in rows)
    assert all(r[2] >= 1 for r in rows)


def test_R_tail_exponential(Q):
    tail = tail_of_R(Q)
    assert tail.fit is not None, tail.fit_error
    assert tail.fit.kind == "exponential"
    assert tail.fit.params["beta"] > 0 and tail.fit.fit_quality >= 0.9


def test_xi_by_depth_fractions(Q):
    xi = xi_by_depth(Q)
    ok = xi[np.isfinite(xi)]
    assert ok.size and np.all((ok >= 0) & (ok <= 1))


def _shortest_return(Q):
    """Resolved sample with the least R: its element is wide enough for a float x."""
    res = np.flatnonzero(Q.run.resolved)
    return int(res[np.argmin(Q.run.time[res])])


def test_return_step_matches_sample(ctx, Q):
    i = _shortest_return(Q)
    x = Q.omega0[0] + Q.run.thetas[i] * Q.length
    st = return_step(ctx, Q, x)
    assert st.status == K.OK
    assert st.key == Q.run.key[i] and st.R == Q.run.time[i]
    assert Q.omega0[0] <= st.image <= Q.omega0[1]


def test_separation_symmetric(ctx, Q):
    res = np.flatnonzero(Q.run.resolved)
    xs = Q.omega0[0] + Q.run.thetas[res[::max(1, res.size // 6)]] * Q.length
    for x, y in zip(xs, xs[1:]):
        assert separation_time(ctx, Q, x, y, 5) == separation_time(ctx, Q, y, x, 5)
    x0 = Q.omega0[0] + Q.run.thetas[_shortest_return(Q)] * Q.length
    assert separation_time(ctx, Q, x0, x0, 0).capped


@pytest.mark.parametrize("K_dist, L, d, expected", [(1.0, 1.0, 1.0, 15.0),
                                                     (2.0, 1.0, 1.0, 48.0),
                                                     (0.0, 1.0, 1.0, 0.0)])
def test_holder_constant(K_dist, L, d, expected):
    assert holder_constant(K_dist, L, d) == pytest.approx(expected)


def test_holder_envelope_small(ctx, Q):
    rep = check_holder_distortion(ctx, Q, 4.6, sample_pairs=500, seed=1)
    assert rep.n_pairs > 0
    assert rep.violation_rate <= 0.01
    assert 0 < rep.beta < 1


def test_conditional_tail(Q, ctx, net_parts, phat_tail):
    K_dist = piece_distortion(net_parts).K
    reps = conditional_tail_check(Q, phat_tail.m, K_dist, ctx.cfg.dprime)
    assert [r.depth for r in reps] == [1, 2, 3]
    assert all(math.isnan(r.ratio) or r.ratio >= 0 for r in reps)


def test_period_doubling_has_no_delta():
    m = make_map("logistic", [3.2])
    with pytest.raises(HypothesisViolation):
        cfg = fix_delta(m, build_table(m, 0.5, 1000))
        choose_omega0(InducingContext(m, cfg, build_level_sets(m, cfg)))
