"""MATPOWER ``.m`` case reader.

Only the fields the distribution and DC transmission models use are kept.
The distribution cases shipped with MATPOWER store impedances in ohms and
loads in kW and convert them with two trailing MATLAB statements; those
two statements are recognized and applied, any other indexed assignment
to ``mpc`` is ignored with a warning.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import MalformedCase, MalformedMatrix, MissingSection, NoLeaf
from .network import RadialNetwork

# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD, QD, GS, BS, BASE_KV, VMAX, VMIN = 0, 1, 2, 3, 4, 5, 9, 11, 12
F_BUS, T_BUS, BR_R, BR_X, RATE_A, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 5, 8, 9, 10
GEN_BUS, QMAX, QMIN, PMAX, PMIN = 0, 3, 4, 8, 9
REF = 3

BUNDLED_CASES = ("case10ba", "case33mg", "case118zh", "case30")


class BusRow(NamedTuple):
    bus_id: int
    type_code: int
    pd: float
    qd: float
    vmax: float
    vmin: float


class BranchRow(NamedTuple):
    from_bus: int
    to_bus: int
    r: float
    x: float
    status: int
    rate_a: float = 0.0


class GenRow(NamedTuple):
    bus_id: int
    pmax: float
    pmin: float
    qmax: float
    qmin: float


class GencostRow(NamedTuple):
    model: int
    c2: float
    c1: float
    c0: float


@dataclass(frozen=True)
class RawCase:
    base_mva: float
    bus_rows: tuple[BusRow, ...]
    branch_rows: tuple[BranchRow, ...]
    gen_rows: tuple[GenRow, ...] = ()
    gencost_rows: tuple[GencostRow, ...] = ()
    name: str = ""

    def __post_init__(self):
        if not self.base_mva > 0:
            raise MalformedCase(f"baseMVA must be positive, got {self.base_mva}")
        ids = {b.bus_id for b in self.bus_rows}
        if len(ids) != len(self.bus_rows):
            raise MalformedCase("duplicate bus ids")
        for br in self.branch_rows:
            for end in (br.from_bus, br.to_bus):
                if end not in ids:
                    raise MalformedCase(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
        for g in self.gen_rows:
            if g.bus_id not in ids:
                raise MalformedCase(f"generator at unknown bus {g.bus_id}")
        if len(self.gen_rows) != len(self.gencost_rows):
            raise MalformedCase(
                f"{len(self.gen_rows)} generators but {len(self.gencost_rows)} cost rows")

    @property
    def total_demand(self) -> tuple[float, float]:
        """Total (Pd, Qd) in MW / MVAr."""
        return sum(b.pd for b in self.bus_rows), sum(b.qd for b in self.bus_rows)


_ASSIGN = re.compile(r"\bmpc\.(\w+)\s*=\s*")
_INDEXED = re.compile(r"^\s*mpc\.(\w+)\s*\([^=\n]*\)\s*=", re.MULTILINE)
_OHMS = re.compile(
    r"mpc\.branch\(\s*:\s*,\s*\[\s*BR_R[\s,]+BR_X\s*\]\s*\)\s*=\s*"
    r"mpc\.branch\(\s*:\s*,\s*\[\s*BR_R[\s,]+BR_X\s*\]\s*\)\s*/\s*\(\s*Vbase\s*\^\s*2\s*/\s*Sbase\s*\)")
_VBASE = re.compile(r"Vbase\s*=\s*mpc\.bus\(\s*1\s*,\s*BASE_KV\s*\)\s*\*\s*1e3")
_SBASE = re.compile(r"Sbase\s*=\s*mpc\.baseMVA\s*\*\s*1e6")
_KW = re.compile(
    r"mpc\.bus\(\s*:\s*,\s*\[\s*PD[\s,]+QD\s*\]\s*\)\s*=\s*"
    r"mpc\.bus\(\s*:\s*,\s*\[\s*PD[\s,]+QD\s*\]\s*\)\s*/\s*1e3")


def _strip_comments(text: str) -> str:
    out = []
    for line in text.splitlines():
        in_str = False
        for k, ch in enumerate(line):
            if ch == "'":
                in_str = not in_str
            elif ch == "%" and not in_str:
                line = line[:k]
                break
        out.append(line)
    return "\n".join(out)


def _lineno(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _parse_matrix(text: str, start: int, name: str) -> tuple[np.ndarray, int]:
    """Decode the bracketed literal opening at ``text[start] == '['``."""
    end = text.find("]", start + 1)
    nested = text.find("[", start + 1)
    next_assign = _ASSIGN.search(text, start + 1)
    if end < 0 or (next_assign is not None and next_assign.start() < end):
        raise MalformedMatrix(f"unbalanced brackets in mpc.{name}", _lineno(text, start))
    if 0 <= nested < end:
        raise MalformedMatrix(f"nested bracket in mpc.{name}", _lineno(text, nested))
    body = text[start + 1:end]
    first_line = _lineno(text, start)
    rows: list[list[float]] = []
    current: list[float] = []
    for offset, line in enumerate(body.replace("...\n", " \n").split("\n")):
        for seg_no, seg in enumerate(line.split(";")):
            if seg_no > 0 and current:
                rows.append(current)
                current = []
            for tok in seg.replace(",", " ").split():
                try:
                    current.append(float(tok))
                except ValueError:
                    raise MalformedMatrix(
                        f"non-numeric token {tok!r} in mpc.{name}", first_line + offset) from None
        if current:
            rows.append(current)
            current = []
    if not rows:
        return np.zeros((0, 0)), end
    width = len(rows[0])
    for k, row in enumerate(rows):
        if len(row) != width:
            raise MalformedMatrix(
                f"mpc.{name} row {k + 1} has {len(row)} columns, expected {width}", first_line)
    return np.array(rows, dtype=float), end


def _need_cols(mat: np.ndarray, n: int, name: str):
    if mat.size and mat.shape[1] < n:
        raise MalformedMatrix(f"mpc.{name} has {mat.shape[1]} columns, need at least {n}")


def _gencost_row(row: np.ndarray) -> GencostRow:
    model = int(row[0])
    if model != 2:
        warnings.warn("piecewise-linear gencost rows are not supported; cost set to zero",
                      stacklevel=3)
        return GencostRow(model, 0.0, 0.0, 0.0)
    n = int(row[3])
    coef = list(row[4:4 + n])
    if len(coef) != n:
        raise MalformedMatrix(f"gencost row declares {n} coefficients but has {len(coef)}")
    if n > 3 and any(c != 0 for c in coef[:-3]):
        raise MalformedCase("gencost polynomials above degree 2 are not supported")
    coef = [0.0] * max(0, 3 - n) + coef[-3:]
    return GencostRow(model, *map(float, coef))


def parse_case(text: str, name: str = "") -> RawCase:
    """Parse MATPOWER case text into a :class:`RawCase`."""
    clean = _strip_comments(text)
    matrices: dict[str, np.ndarray] = {}
    scalars: dict[str, float] = {}
    pos = 0
    while (m := _ASSIGN.search(clean, pos)) is not None:
        field_name = m.group(1)
        rhs = m.end()
        if clean.startswith("[", rhs):
            matrices[field_name], pos = _parse_matrix(clean, rhs, field_name)
            continue
        stmt = re.match(r"([^;\n]*)", clean[rhs:]).group(1).strip()
        try:
            scalars[field_name] = float(stmt)
        except ValueError:
            pass  # strings such as mpc.version = '2'
        pos = rhs

    if "baseMVA" not in scalars:
        raise MissingSection("mpc.baseMVA")
    for section in ("bus", "branch"):
        if section not in matrices:
            raise MissingSection(f"mpc.{section}")

    bus = matrices["bus"]
    branch = matrices["branch"]
    gen = matrices.get("gen", np.zeros((0, 10)))
    gencost = matrices.get("gencost", np.zeros((0, 4)))
    _need_cols(bus, 13, "bus")
    _need_cols(branch, 11, "branch")
    _need_cols(gen, 10, "gen")
    base_mva = scalars["baseMVA"]

    # unit conversions carried by the MATPOWER distribution cases
    if _OHMS.search(clean):
        if not (_VBASE.search(clean) and _SBASE.search(clean)):
            raise MalformedCase("impedance conversion found without Vbase/Sbase definitions")
        z_base = bus[0, BASE_KV] ** 2 / base_mva
        branch = branch.copy()
        branch[:, [BR_R, BR_X]] /= z_base
    if _KW.search(clean):
        bus = bus.copy()
        bus[:, [PD, QD]] /= 1e3
    for m in _INDEXED.finditer(clean):
        stmt = clean[m.start():clean.find(";", m.start())].strip()
        if not (_OHMS.match(stmt) or _KW.match(stmt)):
            warnings.warn(f"ignoring unsupported statement: {stmt.strip()}", stacklevel=2)

    ignored = []
    if bus.size and np.any(bus[:, [GS, BS]] != 0):
        ignored.append("bus shunts")
    if branch.size and np.any((branch[:, TAP] != 0) & (branch[:, TAP] != 1)):
        ignored.append("tap ratios")
    if branch.size and np.any(branch[:, SHIFT] != 0):
        ignored.append("phase shifts")
    if ignored:
        warnings.warn(f"{name or 'case'}: ignoring nonzero {', '.join(ignored)}", stacklevel=2)

    # MATPOWER allows 2*ngen cost rows (reactive costs); keep the active part
    if "gencost" in matrices:
        gencost_rows = tuple(_gencost_row(row) for row in gencost[: len(gen)])
    else:
        gencost_rows = tuple(GencostRow(2, 0.0, 0.0, 0.0) for _ in gen)
    return RawCase(
        base_mva=base_mva,
        bus_rows=tuple(BusRow(int(r[BUS_I]), int(r[BUS_TYPE]), float(r[PD]), float(r[QD]),
                              float(r[VMAX]), float(r[VMIN])) for r in bus),
        branch_rows=tuple(BranchRow(int(r[F_BUS]), int(r[T_BUS]), float(r[BR_R]), float(r[BR_X]),
                                    int(r[BR_STATUS]), float(r[RATE_A])) for r in branch),
        gen_rows=tuple(GenRow(int(r[GEN_BUS]), float(r[PMAX]), float(r[PMIN]),
                              float(r[QMAX]), float(r[QMIN])) for r in gen),
        gencost_rows=gencost_rows,
        name=name,
    )


def read_case(path: str | Path) -> RawCase:
    path = Path(path)
    return parse_case(path.read_text(), name=path.stem)


def load_bundled(name: str) -> RawCase:
    """Load one of the MATPOWER cases shipped in ``flexagg/data``."""
    ref = resources.files("flexagg") / "data" / f"{name}.m"
    return parse_case(ref.read_text(), name=name)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("flexagg") / "data" / f"{name}.m"))


def format_case(case: RawCase) -> str:
    """Serialize to MATPOWER text that :func:`parse_case` reads back identically."""
    fmt = repr
    lines = [f"function mpc = {case.name or 'case'}", "mpc.version = '2';",
             f"mpc.baseMVA = {fmt(case.base_mva)};", "", "mpc.bus = ["]
    for b in case.bus_rows:
        lines.append("\t" + "\t".join(
            [str(b.bus_id), str(b.type_code), fmt(b.pd), fmt(b.qd), "0", "0", "1", "1", "0",
             "0", "1", fmt(b.vmax), fmt(b.vmin)]) + ";")
    lines += ["];", "", "mpc.gen = ["]
    for g in case.gen_rows:
        lines.append("\t" + "\t".join(
            [str(g.bus_id), "0", "0", fmt(g.qmax), fmt(g.qmin), "1", fmt(case.base_mva), "1",
             fmt(g.pmax), fmt(g.pmin)]) + ";")
    lines += ["];", "", "mpc.branch = ["]
    for br in case.branch_rows:
        lines.append("\t" + "\t".join(
            [str(br.from_bus), str(br.to_bus), fmt(br.r), fmt(br.x), "0", fmt(br.rate_a), "0", "0",
             "0", "0", str(br.status), "-360", "360"]) + ";")
    lines += ["];", "", "mpc.gencost = ["]
    for c in case.gencost_rows:
        lines.append("\t" + "\t".join([str(c.model), "0", "0", "3", fmt(c.c2), fmt(c.c1), fmt(c.c0)]) + ";")
    lines += ["];", ""]
    return "\n".join(lines)


def _root_bus(case: RawCase, branches) -> int:
    refs = [b.bus_id for b in case.bus_rows if b.type_code == REF]
    if len(refs) == 1:
        return refs[0]
    if len(refs) > 1:
        raise MalformedCase(f"multiple reference buses {refs}")
    # fall back to the unique bus never listed as a receiving end
    receiving = {br.to_bus for br in branches}
    roots = [b.bus_id for b in case.bus_rows if b.bus_id not in receiving]
    if len(roots) != 1:
        raise MalformedCase(f"cannot identify a unique substation bus (candidates {roots})")
    return roots[0]


def deepest_leaf(net: RadialNetwork) -> int:
    """Internal index of the deepest leaf, ties broken by lowest original bus id."""
    leaves = net.leaves()
    if not leaves:
        raise NoLeaf(f"{net.name or 'network'} has no leaf bus")
    depth = net.depth()
    return min(leaves, key=lambda i: (-depth[i], net.bus_ids[i]))


def to_radial_network(
    case: RawCase,
    der_fraction: float = 0.5,
    q_fraction: float | None = None,
    der_cost: tuple[float, float, float] = (0.0, 0.0, 0.0),
    pcc_p_bounds: tuple[float, float] | None = None,
    pcc_q_bounds: tuple[float, float] | None = None,
    vmin: float | None = None,
) -> RadialNetwork:
    """Build the per-unit radial feeder with one DER at the deepest leaf.

    DER bounds are ``±der_fraction`` of total active demand for ``p`` and
    ``±q_fraction`` (defaulting to ``der_fraction``) of total reactive
    demand for ``q``. PCC bounds are in p.u.; ``None`` selects twice the
    total demand. ``vmin`` overrides every bus's lower voltage limit.
    """
    if not 0.0 <= der_fraction <= 1.0:
        raise ValueError("der_fraction must lie in [0, 1]")
    q_fraction = der_fraction if q_fraction is None else q_fraction
    branches = [br for br in case.branch_rows if br.status != 0]
    if len(case.bus_rows) < 2 or not branches:
        raise NoLeaf(f"{case.name or 'case'} has a single bus; nothing to aggregate")
    root = _root_bus(case, branches)
    base = case.base_mva
    pd = {b.bus_id: b.pd / base for b in case.bus_rows}
    qd = {b.bus_id: b.qd / base for b in case.bus_rows}
    u_bounds = {b.bus_id: ((vmin or b.vmin) ** 2, b.vmax ** 2)
                for b in case.bus_rows if b.vmax > 0 and (vmin or b.vmin) > 0}
    tot_p, tot_q = sum(pd.values()), sum(qd.values())
    bounds = (-der_fraction * tot_p, der_fraction * tot_p, -q_fraction * tot_q, q_fraction * tot_q)

    # placement needs the relabeled tree, so build once with a root placeholder
    args = dict(root=root, der_bounds=bounds, der_cost=der_cost, u_bounds=u_bounds,
                pcc_p_bounds=pcc_p_bounds, pcc_q_bounds=pcc_q_bounds, base_mva=base, name=case.name)
    edges = [(br.from_bus, br.to_bus, br.r, br.x) for br in branches]
    probe = RadialNetwork.build(edges, pd, qd, der_bus=root, **args)
    leaf = deepest_leaf(probe)
    return probe.with_der(bus=leaf)


# The largest tutorial feeder has a lateral below 0.9 p.u. at zero DER
# output that its single DER cannot lift; a lower floor keeps it usable.
TUTORIAL_VMIN = {"case118zh": 0.85}


def tutorial_network(name: str, der_fraction: float = 0.5, **kwargs) -> RadialNetwork:
    """Bundled feeder with its DER placed and any tutorial voltage floor applied."""
    kwargs.setdefault("vmin", TUTORIAL_VMIN.get(name))
    return to_radial_network(load_bundled(name), der_fraction, **kwargs)
