import numpy as np
import pytest

from stratnet.model import LatentParams, ModelSpec, Primitives, ShockLaw, SparsityScale


def dyadic_spec(**kw):
    base = dict(d=1, T=0, kappa=1.0)
    base.update(kw)
    return ModelSpec(**base)


def strategic_spec(T=1, kappa=1.0, b0=0.3, b=1.0, s_kind="lagged_link_and_common_max", intercept=-0.5, **kw):
    dim = 1 if s_kind in ("lagged_link", "common_neighbor_max", "common_neighbor_count") else 2
    return ModelSpec(d=1, T=T, kappa=kappa, s_kind=s_kind,
                     v_params=LatentParams((b,) * dim, (), intercept),
                     v0_params=LatentParams((b0,) * dim, (), intercept), **kw)


def four_node():
    """Period 0 links {1-3, 2-3}; in period 1 only pair (1,2) forms, and only
    because it had a common neighbour (node 3) in period 0."""
    spec = ModelSpec(d=1, T=1, kappa=1.0, s_kind="lagged_link_and_common_max",
                     v_params=LatentParams((0.0, 2.0)), v0_params=LatentParams((0.0, 0.0)))
    ids = [1, 2, 3, 4]
    zeta = {}
    for a in ids:
        for b in ids:
            if a < b:
                zeta[(a, b, 0)] = 5.0 if (a, b) in [(1, 3), (2, 3)] else -5.0
                zeta[(a, b, 1)] = -1.0 if (a, b) == (1, 2) else -10.0
    prims = Primitives.pinned(spec, ids, np.full((4, 1), 0.5), zeta)
    return spec, prims, SparsityScale.from_spec(spec, 4)


@pytest.fixture
def four_node_case():
    return four_node()


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"acceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
