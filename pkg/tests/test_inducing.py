from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from towerdyn.inducing import kernel as K
from towerdyn.inducing.construction import (_lost_horizon, _suffix_tail, check_size_lemma,
                                            core_interval, delta_net, fit_tail,
                                            induce_to_large_scale, Itinerary, piece_distortion,
                                            size_lemma_pass_rate, split_tail, tail_of_phat,
                                            trace_sample)
from towerdyn.maps import pullback


@pytest.fixture(scope="module")
def net(ctx, omega0):
    return delta_net(core_interval(ctx.m), ctx.delta2(omega0.length))


@pytest.fixture(scope="module")
def part(ctx):
    # centred on c: every piece starts with a deep return
    d2 = ctx.delta2()
    return induce_to_large_scale(ctx, (0.5 - d2 / 2, 0.5 + d2 / 2), 1000, samples=4096)


@pytest.fixture(scope="module")
def plain_part(ctx, omega0, net):
    return induce_to_large_scale(ctx, net[3], 1000, samples=4096, omega0_len=omega0.length,
                                 tail_samples=None)


def test_core_interval_full(full):
    assert core_interval(full) == (0.0, 1.0)


def test_delta_net_lengths():
    net = delta_net((0.0, 1.0), 0.1, size=5)
    assert len(net) == 5
    assert all(hi - lo == pytest.approx(0.1) and 0 <= lo and hi <= 1 for lo, hi in net)


def test_short_interval_rejected(ctx):
    d2 = ctx.delta2()
    with pytest.raises(ValueError):
        induce_to_large_scale(ctx, (0.2, 0.2 + d2 / 2), 100)
    with pytest.raises(ValueError):
        induce_to_large_scale(ctx, (0.2, 0.2 + d2), 0)


def test_partition_mass_conserved(part):
    assert part.resolved_mass + part.unresolved_mass == pytest.approx(part.length, rel=1e-9)
    assert sum(part.status_mass.values()) == pytest.approx(part.length, rel=1e-9)


def test_partition_invariants(part):
    assert part.violations() == []
    assert len(part.pieces) > 10
    assert part.resolved_mass / part.length > 0.95
    assert all(p.itinerary.n_deep >= 1 for p in part.pieces)


def test_piece_geometry_matches_word(ctx, part):
    # pulling the image back along the recorded word lands on the piece
    p = max(part.pieces, key=lambda q: q.mass)
    assert part.J[0] - 1e-12 <= p.lo < p.hi <= part.J[1] + 1e-12
    assert p.image_length >= ctx.cfg.dprime - 2 * ctx.cfg.eps - 1e-9
    theta = (0.5 * (p.lo + p.hi) - part.J[0]) / part.length
    out_i, _, _, word = trace_sample(ctx, part.J, theta, part.n_max)
    assert out_i[K.I_STATUS] == K.OK and out_i[K.I_TIME] == p.p_hat
    lo, _ = pullback(ctx.m, word, p.image[0])
    assert min(abs(lo - p.lo), abs(lo - p.hi)) < 1e-9


def test_first_piece_has_small_time(part):
    assert min(p.p_hat for p in part.pieces) >= 1


def test_csv_rows_sorted(part):
    rows = part.csv_rows()
    assert [r[0] for r in rows] == sorted(r[0] for r in rows)
    assert all(len(r) == 5 for r in rows)


def test_tail_starts_at_one(part):
    _, m = part.tail()
    assert m[0] == pytest.approx(1.0)
    assert np.all(np.diff(m) <= 1e-15)


def test_phat_tail_exponential(part):
    tail = tail_of_phat([part])
    assert tail.fit is not None, tail.fit_error
    assert tail.fit.kind == "exponential"
    assert tail.fit.params["beta"] > 0


def test_split_tail_mass(ctx, net):
    s = split_tail(ctx, net[0], 300, samples=32)
    total = float(s.weights.sum()) + s.open_mass
    assert total == pytest.approx(s.length, rel=1e-9)
    _, mass = s.tail()
    assert mass[0] == pytest.approx(s.length, rel=1e-9)
    assert 0 <= s.horizon <= 300


def test_itinerary_from_kernel(ctx, part):
    for p in part.pieces[:20]:
        assert p.itinerary.violations() == []
        assert p.itinerary.terminal == "large-scale"


def test_itinerary_violations_detected():
    bad = Itinerary(((5, 3, "deep"), (6, 0, "shallow")), "large-scale", 9, 1, 1, 0, 3)
    msgs = bad.violations()
    assert any("binding period" in m for m in msgs)
    mislabel = Itinerary(((5, 0, "deep"),), "large-scale", 9, 1, 0, 0, 0)
    assert any("label" in m for m in mislabel.violations())


def test_itinerary_format():
    it = Itinerary(((2, 4, "deep"), (9, 0, "shallow")), "large-scale", 12, 1, 1, 0, 4)
    assert it.format() == "2:4:deep;9:0:shallow"
    assert (it.S_d, it.S_s, it.S_ss) == (1, 1, 0)


def test_size_lemma_for_pieces_without_returns(ctx, part, plain_part, expansion):
    # no returns: the bound is C^0 e^(-lambda m) against a uniformly expanding branch
    plain = [p for p in plain_part.pieces if p.itinerary.n_deep == 0 and p.itinerary.n_shallow == 0]
    assert plain
    rep = check_size_lemma(plain[0], ctx, expansion)
    assert math.isfinite(rep.margin)
    assert 0.0 <= size_lemma_pass_rate([part], ctx, expansion) <= 1.0


def test_piece_distortion_bounded(part):
    d = piece_distortion([part])
    assert d.n_pieces > 0 and 1.0 <= d.K < 16.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.floats(0.0, 1.0)), min_size=1, max_size=40))
def test_suffix_tail_matches_direct(entries):
    t = np.array([e[0] for e in entries], dtype=np.int64)
    w = np.array([e[1] for e in entries])
    c = np.ones(t.size, dtype=np.int64)
    n = np.arange(55)
    count, mass = _suffix_tail(t, w, c, n)
    for k in n:
        assert count[k] == int((t > k).sum())
        assert mass[k] == pytest.approx(float(w[t > k].sum()), abs=1e-12)


def test_lost_horizon():
    times = np.arange(1, 101, dtype=np.int64)
    weights = 0.5 ** times
    counts = np.ones(100, dtype=np.int64)
    # nothing lost: the horizon is n_max
    assert _lost_horizon(times, weights, counts, np.zeros(0, np.int64), np.zeros(0), 50) == 50
    # a tiny loss at time 10 spoils the tail once it exceeds 1% of it
    h = _lost_horizon(times, weights, counts, np.array([10]), np.array([1e-6]), 50)
    assert 0.5 ** h > 100 * 1e-6 * 0.5 and h >= 10


def test_fit_tail_exponential_oracle():
    n = np.arange(200)
    m = np.exp(-0.3 * n)
    count = np.full(200, 10 ** 6)
    fit, err = fit_tail(m, count, 100)
    assert err == "" and fit.kind == "exponential"
    assert fit.params["beta"] == pytest.approx(0.3, rel=1e-6)
