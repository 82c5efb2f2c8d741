import re
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexagg import MalformedMatrix, MissingSection, NoLeaf, parse_case, to_radial_network
from flexagg.errors import MalformedCase
from flexagg.matpower import (BranchRow, BusRow, GencostRow, GenRow, RawCase, bundled_path,
                              format_case, load_bundled)
from oracles import depth_first_deepest_leaf

TWO_BUS = """
function mpc = tiny
%% two buses, one line
mpc.version = '2';
mpc.baseMVA = 10;
mpc.bus = [
    1   3   0    0    0 0 1 1 0 12.66 1 1.05 0.95;
    2   1   4.0  1.5  0 0 1 1 0 12.66 1 1.05 0.95;   % load bus
];
mpc.gen = [
    1   0 0 10 -10 1 10 1 20 -20;
];
mpc.branch = [
    1   2   0.01  0.02  0 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
    2 0 0 3 0.01 20 0;
];
"""


def matrix_rows(text: str, name: str) -> int:
    """Rows of a matrix literal, counted straight from the file text."""
    body = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, re.S).group(1)
    lines = [ln.split("%")[0].strip() for ln in body.splitlines()]
    return sum(1 for ln in lines if ln and ln[0].isdigit())


def test_minimal_two_bus_case():
    case = parse_case(TWO_BUS)
    assert len(case.bus_rows) == 2
    assert len(case.branch_rows) == 1
    assert case.base_mva == 10
    assert case.bus_rows[1] == BusRow(2, 1, 4.0, 1.5, 1.05, 0.95)
    assert case.gen_rows[0] == GenRow(1, 20.0, -20.0, 10.0, -10.0)
    assert case.gencost_rows[0] == GencostRow(2, 0.01, 20.0, 0.0)


@pytest.mark.parametrize("name", ["case10ba", "case33mg", "case118zh", "case30"])
def test_bundled_row_counts_match_file(name):
    text = bundled_path(name).read_text()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        case = load_bundled(name)
    assert len(case.bus_rows) == matrix_rows(text, "bus")
    assert len(case.branch_rows) == matrix_rows(text, "branch")


def test_case10ba_counts():
    case = load_bundled("case10ba")
    assert (len(case.bus_rows), len(case.branch_rows)) == (10, 9)


def test_missing_branch_section():
    text = re.sub(r"mpc\.branch = \[.*?\];", "", TWO_BUS, flags=re.S)
    with pytest.raises(MissingSection, match="branch"):
        parse_case(text)


def test_missing_base_mva():
    with pytest.raises(MissingSection, match="baseMVA"):
        parse_case(TWO_BUS.replace("mpc.baseMVA = 10;", ""))


def test_non_numeric_token_reports_line():
    text = TWO_BUS.replace("0.01  0.02", "0.01  oops")
    with pytest.raises(MalformedMatrix) as err:
        parse_case(text)
    expected = next(k for k, ln in enumerate(text.splitlines(), 1) if "oops" in ln)
    assert err.value.line == expected


def test_unbalanced_brackets():
    text = TWO_BUS.replace("0 0 0 0 0 0 1 -360 360;\n];", "0 0 0 0 0 0 1 -360 360;\n")
    with pytest.raises(MalformedMatrix, match="unbalanced"):
        parse_case(text)


def test_ragged_rows_rejected():
    with pytest.raises(MalformedMatrix):
        parse_case(TWO_BUS.replace("4.0  1.5  0 0 1 1 0 12.66 1 1.05 0.95", "4.0  1.5"))


def test_branch_to_unknown_bus():
    with pytest.raises(MalformedCase, match="unknown bus"):
        parse_case(TWO_BUS.replace("1   2   0.01", "1   7   0.01"))


def test_nonzero_shunt_warns():
    text = TWO_BUS.replace("4.0  1.5  0 0", "4.0  1.5  0 0.3")
    with pytest.warns(UserWarning, match="shunts"):
        parse_case(text)


def data_rows(text: str, name: str) -> list[list[float]]:
    body = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, re.S).group(1)
    lines = (ln.split("%")[0].strip().rstrip(";") for ln in body.splitlines())
    return [[float(v) for v in ln.split()] for ln in lines if ln and ln[0].isdigit()]


def test_distribution_unit_conversions():
    """Ohm impedances and kW loads are brought to p.u. and MW."""
    case = load_bundled("case10ba")
    raw = bundled_path("case10ba").read_text()
    bus, branch = data_rows(raw, "bus"), data_rows(raw, "branch")
    z_base = bus[0][9] ** 2 / case.base_mva
    for row, parsed in zip(branch, case.branch_rows):
        assert parsed.r == pytest.approx(row[2] / z_base, rel=1e-12)
        assert parsed.x == pytest.approx(row[3] / z_base, rel=1e-12)
    for row, parsed in zip(bus, case.bus_rows):
        assert (parsed.pd, parsed.qd) == pytest.approx((row[2] / 1e3, row[3] / 1e3), rel=1e-12)


bus_rows = st.lists(
    st.tuples(st.floats(0, 50, allow_nan=False), st.floats(-20, 20, allow_nan=False),
              st.floats(1.0, 1.2), st.floats(0.8, 1.0)),
    min_size=2, max_size=8)


@given(rows=bus_rows, data=st.data())
@settings(max_examples=60, deadline=None)
def test_format_parse_round_trip(rows, data):
    n = len(rows)
    buses = tuple(BusRow(i + 1, 3 if i == 0 else 1, pd, qd, vmax, vmin)
                  for i, (pd, qd, vmax, vmin) in enumerate(rows))
    parents = [data.draw(st.integers(1, i)) for i in range(1, n)]
    branches = tuple(BranchRow(p, i + 2, data.draw(st.floats(0, 1)), data.draw(st.floats(0, 1)),
                               data.draw(st.integers(0, 1)), data.draw(st.floats(0, 500)))
                     for i, p in enumerate(parents))
    gens = (GenRow(1, 100.0, -100.0, 50.0, -50.0),)
    costs = (GencostRow(2, data.draw(st.floats(0, 1)), data.draw(st.floats(0, 50)), 0.0),)
    case = RawCase(data.draw(st.floats(0.5, 1000)), buses, branches, gens, costs, name="rt")
    assert parse_case(format_case(case), name="rt") == case


@pytest.mark.parametrize("name", ["case10ba", "case33mg", "case118zh"])
def test_per_unit_round_trip(name):
    case = load_bundled(name)
    net = to_radial_network(case)
    by_id = {b.bus_id: b for b in case.bus_rows}
    for i, bus in enumerate(net.bus_ids):
        pd, qd = by_id[int(bus)].pd, by_id[int(bus)].qd
        assert net.demand_p[i] * case.base_mva == pytest.approx(pd, rel=1e-12, abs=1e-300)
        assert net.demand_q[i] * case.base_mva == pytest.approx(qd, rel=1e-12, abs=1e-300)


def test_der_sizing_rule():
    text = TWO_BUS.replace("4.0  1.5", "10.0  4.0")
    case = parse_case(text)
    assert case.total_demand == (10.0, 4.0)
    net = to_radial_network(case, der_fraction=0.5)
    d = net.der
    assert (d.p_min * case.base_mva, d.p_max * case.base_mva) == pytest.approx((-5.0, 5.0))
    assert (d.q_min * case.base_mva, d.q_max * case.base_mva) == pytest.approx((-2.0, 2.0))


def test_separate_q_fraction():
    net = to_radial_network(parse_case(TWO_BUS), der_fraction=0.5, q_fraction=0.25)
    assert net.der.q_max == pytest.approx(0.25 * 0.15)


@pytest.mark.parametrize("name", ["case10ba", "case33mg", "case118zh"])
def test_der_at_deepest_leaf(name):
    case = load_bundled(name)
    root = next(b.bus_id for b in case.bus_rows if b.type_code == 3)
    expected = depth_first_deepest_leaf([(br.from_bus, br.to_bus) for br in case.branch_rows
                                         if br.status], root)
    net = to_radial_network(case)
    assert net.bus_ids[net.der.bus] == expected
    assert net.bus_ids[net.pcc_bus] == root


def test_zero_fraction_gives_zero_bounds():
    net = to_radial_network(parse_case(TWO_BUS), der_fraction=0.0)
    d = net.der
    assert (d.p_min, d.p_max, d.q_min, d.q_max) == (0.0, 0.0, 0.0, 0.0)


def test_out_of_service_branches_dropped():
    extra = "    2   1   0.05  0.05  0 0 0 0 0 0 0 -360 360;\n"
    text = TWO_BUS.replace("0 0 0 0 0 0 1 -360 360;\n", "0 0 0 0 0 0 1 -360 360;\n" + extra)
    case = parse_case(text)
    assert len(case.branch_rows) == 2
    assert to_radial_network(case).n_line == 1


def test_single_bus_has_no_leaf():
    text = re.sub(r"mpc\.bus = \[.*?\];", "mpc.bus = [1 3 1 0 0 0 1 1 0 12.66 1 1.05 0.95;];",
                  TWO_BUS, flags=re.S)
    text = re.sub(r"mpc\.branch = \[.*?\];", "mpc.branch = [];", text, flags=re.S)
    with pytest.raises(NoLeaf):
        to_radial_network(parse_case(text))


def test_vmin_override():
    net = to_radial_network(load_bundled("case118zh"), vmin=0.85)
    assert np.allclose(net.u_min, 0.85 ** 2)
