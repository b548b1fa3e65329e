from __future__ import annotations

import pytest

from towerdyn.critical import build_table
from towerdyn.full_return import build_return_map, choose_omega0
from towerdyn.inducing.binding import build_level_sets, estimate_outside_expansion, fix_delta
from towerdyn.inducing.construction import (core_interval, delta_net, induce_to_large_scale,
                                            InducingContext, tail_of_phat)
from towerdyn.maps import make_map
from towerdyn.tower import invariant_density

ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""
    store = request.config.stash[ACCEPTANCE_KEY]

    def record(k: int, passed: bool, detail: str) -> bool:
        line = f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        store[k] = line
        print(line)
        return passed

    return record


@pytest.fixture(scope="session")
def full():
    return make_map("logistic", [4.0])


@pytest.fixture(scope="session")
def full_table(full):
    return build_table(full, 0.5, 10_000)


@pytest.fixture(scope="session")
def binding_cfg(full, full_table):
    return fix_delta(full, full_table)


@pytest.fixture(scope="session")
def levels(full, binding_cfg, full_table):
    return build_level_sets(full, binding_cfg, full_table.b)


@pytest.fixture(scope="session")
def ctx(full, binding_cfg, levels):
    return InducingContext(full, binding_cfg, levels)


@pytest.fixture(scope="session")
def expansion(full, binding_cfg):
    return estimate_outside_expansion(full, binding_cfg)


@pytest.fixture(scope="session")
def omega0(ctx):
    return choose_omega0(ctx)


@pytest.fixture(scope="session")
def Q(ctx, omega0):
    return build_return_map(ctx, omega0, 2000, samples=1 << 14)


@pytest.fixture(scope="session")
def net_parts(ctx, omega0):
    net = delta_net(core_interval(ctx.m), ctx.delta2(omega0.length))
    return [induce_to_large_scale(ctx, J, 1000, omega0_len=omega0.length) for J in net]


@pytest.fixture(scope="session")
def phat_tail(net_parts):
    return tail_of_phat(net_parts)


@pytest.fixture(scope="session")
def mu_full(full):
    return invariant_density(full, n_samples=10 ** 7, seed=0)
