from __future__ import annotations

import numpy as np
import pytest

import flexagg.coordination as coordination
import flexagg.distflow as distflow
from flexagg import RadialNetwork, exact_flex_cloud, tutorial_network
from flexagg.matpower import load_bundled

TUTORIAL = ("case10ba", "case33mg", "case118zh")
CONSERVATION_TOL = 1e-8


class ConservationAudit:
    """Wraps the batch sweep so every converged power flow of the run is checked."""

    def __init__(self):
        self.checked = 0
        self.worst = 0.0
        self._orig = distflow.sweep_batch

    def __call__(self, net, pg, qg, *args, **kwargs):
        out = self._orig(net, pg, qg, *args, **kwargs)
        pg_b, qg_b = np.broadcast_arrays(np.atleast_1d(np.asarray(pg, dtype=float)),
                                         np.atleast_1d(np.asarray(qg, dtype=float)))
        pg_b, qg_b = pg_b.ravel(), qg_b.ravel()
        ok = out.converged
        if ok.any():
            pd, qd = net.total_demand
            rp = out.p_pcc[ok] + pg_b[ok] - pd - out.L[ok] @ net.r
            rq = out.q_pcc[ok] + qg_b[ok] - qd - out.L[ok] @ net.x
            self.worst = max(self.worst, float(np.max(np.abs(rp))), float(np.max(np.abs(rq))))
            self.checked += int(ok.sum())
        return out

    def install(self):
        distflow.sweep_batch = self
        coordination.sweep_batch = self


AUDIT = ConservationAudit()


class AcceptanceLog:
    """One verdict per criterion; a criterion passes only if every recorded clause passes."""

    def __init__(self):
        self.clauses: dict[int, list[tuple[bool, str]]] = {}

    def __call__(self, criterion: int, ok: bool, detail: str, echo: bool = True) -> bool:
        self.clauses.setdefault(criterion, []).append((bool(ok), detail))
        if echo:
            print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)

    def lines(self) -> list[str]:
        out = []
        for k in sorted(self.clauses):
            ok = all(c[0] for c in self.clauses[k])
            out.append(f"criterion {k}: {'PASS' if ok else 'FAIL'}  " + "; ".join(
                d if c else f"[failed] {d}" for c, d in self.clauses[k]))
        return out


ACCEPTANCE = AcceptanceLog()


def pytest_configure(config):
    AUDIT.install()


def pytest_collection_modifyitems(session, config, items):
    # acceptance runs last so the conservation audit has seen the whole suite
    items.sort(key=lambda it: it.module.__name__.endswith("test_acceptance"))


def pytest_terminal_summary(terminalreporter):
    terminalreporter.section("acceptance criteria")
    final = AUDIT.worst <= CONSERVATION_TOL
    if 3 in ACCEPTANCE.clauses:
        ACCEPTANCE(3, final, f"end of run: {AUDIT.checked} converged power flows, "
                             f"worst residual {AUDIT.worst:.3e} (limit {CONSERVATION_TOL:g})", echo=False)
    for line in ACCEPTANCE.lines():
        terminalreporter.write_line(line)
    terminalreporter.write_line(
        f"conservation audit: {AUDIT.checked} converged power flows, worst residual {AUDIT.worst:.3e}")


def pytest_sessionfinish(session, exitstatus):
    if AUDIT.worst > CONSERVATION_TOL:
        session.exitstatus = 1


@pytest.fixture(scope="session")
def audit():
    return AUDIT


@pytest.fixture(scope="session")
def acceptance():
    return ACCEPTANCE


def make_two_bus(p=0.5, q=0.2, r=0.01, x=0.02, fraction=0.5, u_bounds=None, **kw) -> RadialNetwork:
    """One line from the PCC (bus 1) to bus 2 carrying the load and the DER."""
    return RadialNetwork.build(
        [(1, 2, r, x)], {1: 0.0, 2: p}, {1: 0.0, 2: q}, root=1, der_bus=2,
        der_bounds=(-fraction * p, fraction * p, -fraction * q, fraction * q),
        u_bounds=u_bounds, name="two-bus", **kw)


@pytest.fixture
def two_bus():
    return make_two_bus


@pytest.fixture(scope="session")
def tutorial():
    return {name: tutorial_network(name) for name in TUTORIAL}


@pytest.fixture(scope="session")
def raw_cases():
    return {name: load_bundled(name) for name in TUTORIAL}


@pytest.fixture(scope="session")
def clouds(tutorial):
    """Exact clouds at the default resolution, computed once per session."""
    cache = {}

    def get(name, resolution=101):
        key = (name, resolution)
        if key not in cache:
            cache[key] = exact_flex_cloud(tutorial[name], resolution)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def case30():
    with pytest.warns(UserWarning, match="shunts"):
        return load_bundled("case30")


@pytest.fixture(scope="session")
def experiment(case30):
    return coordination.build_experiment(case30)


@pytest.fixture(scope="session")
def experiment_results(experiment):
    return coordination.run_experiment(experiment)


@pytest.fixture(scope="session")
def price_sweeps(tutorial, clouds):
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = coordination.run_price_sweep(tutorial[name], cloud=clouds(name))
        return cache[name]

    return get
