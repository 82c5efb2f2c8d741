"""Command-line entry point: ``flexagg aggregate | sweep | coordinate``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import coordination as coord
from .distflow import exact_flex_cloud
from .errors import EmptyRegion, FlexAggError, Infeasible, MalformedCase, MalformedMatrix, MissingSection, NotRadial
from .geometry import Box
from .lindistflow import assemble, flexibility_polygon
from .losses import compensate_polygon, loss_map_for
from .matpower import BUNDLED_CASES, TUTORIAL_VMIN, load_bundled, read_case, to_radial_network
from .svg import Plot, bar_chart

log = logging.getLogger("flexagg")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
SEED_BOX_ENV = "FLEXAGG_SEED_BOX"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    cases: list[str] = field(default_factory=lambda: ["case10ba"])
    der_fraction: float = 0.5
    resolution: int = 101
    thresholds: tuple[float, float] = (5.0, 15.0)
    prices: list[float] | None = None
    methods: list[str] = field(default_factory=lambda: list(coord.METHODS))
    out: Path = Path("flexagg-out")
    denominator: str = "sending"
    cloud_csv: bool = False
    max_edge: float = 0.01
    seed_box: Box | None = None

    def validate(self):
        for c in self.cases:
            if c not in BUNDLED_CASES and not Path(c).is_file():
                raise ConfigError(f"case file not found: {c}")
        if not 0.0 <= self.der_fraction <= 1.0:
            raise ConfigError(f"der fraction must lie in [0, 1], got {self.der_fraction}")
        if self.resolution < 2:
            raise ConfigError(f"resolution must be at least 2, got {self.resolution}")
        lo, hi = self.thresholds
        if not 0 <= lo <= hi:
            raise ConfigError(f"thresholds must satisfy 0 <= low <= high, got {self.thresholds}")
        bad = [m for m in self.methods if m not in coord.METHODS]
        if bad:
            raise ConfigError(f"unknown method(s): {', '.join(bad)}")
        if self.denominator not in ("sending", "difference"):
            raise ConfigError(f"unknown denominator {self.denominator!r}")
        if self.prices is not None and any(p < 0 for p in self.prices):
            raise ConfigError("price multipliers must be nonnegative")
        if self.max_edge <= 0:
            raise ConfigError("max edge must be positive")
        return self


def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return vals


def _words(text: str) -> list[str]:
    return [w.strip() for w in str(text).split(",") if w.strip()]


_PARSERS = {
    "cases": _words,
    "der_fraction": float,
    "resolution": int,
    "thresholds": lambda t: tuple(_floats(t, 2)),
    "prices": _floats,
    "methods": _words,
    "out": Path,
    "denominator": str,
    "cloud_csv": lambda t: str(t).strip().lower() in ("1", "true", "yes", "on"),
    "max_edge": float,
    "seed_box": lambda t: Box(*_floats(t, 4)),
}
_ALIASES = {"case": "cases", "method": "methods", "resolutions": "resolution", "cloud": "cloud_csv"}


def read_config(path: str | Path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Keys use dashes or underscores."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    out = {}
    for k, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{k}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_").lower()
        key = _ALIASES.get(key, key)
        if key not in _PARSERS:
            raise ConfigError(f"{p}:{k}: unknown key {key!r}")
        try:
            out[key] = _PARSERS[key](val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{p}:{k}: bad value for {key}: {val!r}") from exc
    return out


def build_config(args: argparse.Namespace, defaults: RunConfig | None = None) -> RunConfig:
    cfg = defaults or RunConfig()
    if args.config:
        cfg = replace(cfg, **read_config(args.config))
    env = os.environ.get(SEED_BOX_ENV)
    if env:
        cfg = replace(cfg, seed_box=Box(*_floats(env, 4)))
    overrides = {}
    for f in fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = _PARSERS[f.name](val) if isinstance(val, str) else val
    return replace(cfg, **overrides).validate()


def _load(case: str):
    return load_bundled(case) if case in BUNDLED_CASES else read_case(case)


def _network(case: str, der_fraction: float):
    raw = _load(case)
    return to_radial_network(raw, der_fraction, vmin=TUTORIAL_VMIN.get(raw.name))


def _num(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.10g}"


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


# --------------------------------------------------------------------------- aggregate

def cmd_aggregate(cfg: RunConfig) -> list[Path]:
    cfg.out.mkdir(parents=True, exist_ok=True)
    written = []
    for case in cfg.cases:
        net = _network(case, cfg.der_fraction)
        name = net.name or Path(case).stem
        model = assemble(net)
        lds = flexibility_polygon(model, net, cfg.seed_box)
        if lds.is_empty:
            raise EmptyRegion(f"{name}: lossless flexibility set is empty")
        lmap = loss_map_for(net, "distflow", cfg.denominator)
        slc = compensate_polygon(lmap, lds, cfg.max_edge)
        cloud = exact_flex_cloud(net, cfg.resolution, cfg.denominator)

        stem = cfg.out / name
        written.append(_write_csv(stem.with_name(f"{name}_lds_vertices.csv"), ["p_pcc", "q_pcc"],
                                  map(tuple, lds.vertices)))
        p = stem.with_name(f"{name}_loss_map.json")
        p.write_text(lmap.to_json() + "\n")
        written.append(p)
        written.append(_write_csv(stem.with_name(f"{name}_slc_boundary.csv"), ["p_pcc", "q_pcc"],
                                  map(tuple, slc.vertices)))
        plot = Plot(title=f"{name}: PCC flexibility (p.u.)", xlabel="p_pcc", ylabel="q_pcc")
        plot.polygon(lds.vertices, "#d62728", "#d62728", "lossless")
        plot.polygon(slc.vertices, "#2ca02c", "#2ca02c", "loss-compensated")
        plot.line(cloud.hull.vertices, "black", "exact hull", closed=True, dash="4 3")
        p = stem.with_name(f"{name}_overlay.svg")
        p.write_text(plot.render())
        written.append(p)
        if cfg.cloud_csv:
            rows = ((d[0], d[1], e[0], e[1], int(f), "|".join(t), int(it), r)
                    for d, e, f, t, it, r in zip(cloud.der, cloud.exchange, cloud.feasible, cloud.tags,
                                                 cloud.iterations, cloud.residual))
            written.append(_write_csv(stem.with_name(f"{name}_cloud.csv"),
                                      ["pg", "qg", "p_pcc", "q_pcc", "feasible", "tags", "iterations",
                                       "residual"], rows))
        print(f"{name}: lossless polygon {len(lds)} vertices, area {abs(lds.area):.6g}; "
              f"{int(cloud.feasible.sum())}/{len(cloud)} exact samples feasible")
    return written


# --------------------------------------------------------------------------- sweep

def _violation_text(vs, tol=coord.VERIFY_TOL) -> str:
    return "|".join(sorted({v.tag for v in vs if v.magnitude > tol}))


def cmd_sweep(cfg: RunConfig) -> list[Path]:
    cfg.out.mkdir(parents=True, exist_ok=True)
    written = []
    mult = cfg.prices if cfg.prices is not None else coord.default_price_multipliers()
    colors = {"reference": "black", "lds": "#d62728", "slc": "#2ca02c"}
    shapes = {"reference": "circle", "lds": "square", "slc": "triangle"}
    for case in cfg.cases:
        net = _network(case, cfg.der_fraction)
        name = net.name or Path(case).stem
        cloud = exact_flex_cloud(net, cfg.resolution, cfg.denominator) if "reference" in cfg.methods else None
        res = coord.run_price_sweep(net, mult, cfg.methods, cloud, cfg.denominator, cfg.seed_box)
        prices = coord.sweep_prices(net, coord.sweep_tso_cost(net), mult)
        rows = []
        for m in cfg.methods:
            for k, r in enumerate(res[m]):
                gap = r.cost_gap[0] if r.cost_gap is not None else float("nan")
                rows.append((m, float(mult[k]), float(prices[k]), *map(float, r.exchanges[0] / net.base_mva),
                             *map(float, r.der_setpoints[0]), float(r.max_violation()[0]),
                             _violation_text(r.violations[0]), float(gap)))
        written.append(_write_csv(cfg.out / f"{name}_sweep.csv",
                                  ["method", "multiplier", "der_price", "p_pcc", "q_pcc", "der_p", "der_q",
                                   "max_violation", "violations", "cost_gap"], rows))
        fd = coord.prepare_feeder(net, denominator=cfg.denominator, seed_box=cfg.seed_box)
        plot = Plot(title=f"{name}: dispatch per DER price (p.u.)", xlabel="p_pcc", ylabel="q_pcc")
        plot.polygon(fd.polygon.vertices, "#d62728", "#d62728", "lossless")
        plot.polygon(compensate_polygon(fd.loss_map, fd.polygon, cfg.max_edge).vertices, "#2ca02c", "#2ca02c",
                     "loss-compensated")
        if cloud is not None:
            plot.line(cloud.hull.vertices, "black", "exact hull", closed=True, dash="4 3")
        for m in cfg.methods:
            plot.markers(np.array([r.exchanges[0] for r in res[m]]) / net.base_mva, colors[m], shapes[m], m)
        p = cfg.out / f"{name}_sweep.svg"
        p.write_text(plot.render())
        written.append(p)
        for m in cfg.methods:
            bad = sum(1 for r in res[m] if r.max_violation()[0] > coord.VERIFY_TOL)
            print(f"{name} {m}: {bad}/{len(res[m])} dispatches violate limits after verification")
    return written


# --------------------------------------------------------------------------- coordinate

def cmd_coordinate(cfg: RunConfig) -> list[Path]:
    cfg.out.mkdir(parents=True, exist_ok=True)
    case = cfg.cases[0]
    exp = coord.build_experiment(_load(case), cfg.thresholds, cfg.der_fraction,
                                 denominator=cfg.denominator, seed_box=cfg.seed_box)
    results = coord.run_experiment(exp, cfg.methods)
    rows = []
    for m, r in results.items():
        for i, (a, fd) in enumerate(zip(exp.attachments, exp.feeders)):
            gap = r.cost_gap[i] if r.cost_gap is not None else float("nan")
            rows.append((m, fd.name, a.bus_id, a.feeder, float(r.exchanges[i, 0]), float(r.exchanges[i, 1]),
                         float(r.der_setpoints[i, 0]), float(r.der_setpoints[i, 1]), float(r.feeder_costs[i]),
                         float(gap), float(r.max_violation()[i]), _violation_text(r.violations[i])))
    written = [_write_csv(cfg.out / "dispatch.csv",
                          ["method", "feeder", "bus", "template", "p_pcc_mw", "q_pcc_mvar", "der_p", "der_q",
                           "feeder_cost", "cost_gap", "max_violation", "violations"], rows)]
    summary = []
    for m, r in results.items():
        counts = r.violation_counts()
        summary.append((m, float(r.cost_total), len(r.feeders), sum(counts.values()),
                        "|".join(f"{t}:{c}" for t, c in sorted(counts.items()))))
    written.append(_write_csv(cfg.out / "summary.csv",
                              ["method", "cost_total", "feeders", "violations", "by_tag"], summary))
    names = [fd.name for fd in exp.feeders]
    colors = {"reference": "black", "lds": "#d62728", "slc": "#2ca02c"}
    gaps = {m: r.cost_gap for m, r in results.items() if m != "reference" and r.cost_gap is not None}
    if gaps:
        p = cfg.out / "cost_gap.svg"
        p.write_text(bar_chart(names, gaps, colors, "Relative feeder cost gap to reference", "|f - f*| / f*",
                               log_scale=True))
        written.append(p)
    viol = {m: r.max_violation() for m, r in results.items()}
    p = cfg.out / "violations.svg"
    p.write_text(bar_chart(names, viol, colors, "Largest limit violation after verification", "p.u.",
                           log_scale=True, threshold=coord.VERIFY_TOL))
    written.append(p)
    for row in summary:
        print(f"{row[0]}: total cost {row[1]:.4f}, {row[3]} violations {row[4]}")
    return written


# --------------------------------------------------------------------------- main

COMMANDS = {"aggregate": cmd_aggregate, "sweep": cmd_sweep, "coordinate": cmd_coordinate}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flexagg", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--case", dest="cases", help="bundled case name or MATPOWER file (comma list)")
        sp.add_argument("--der-fraction", type=float)
        sp.add_argument("--resolution", type=int, help="exact-cloud grid points per DER axis")
        sp.add_argument("--thresholds", help="low,high feeder assignment thresholds in MW")
        sp.add_argument("--prices", help="DER price multipliers of the TSO marginal price")
        sp.add_argument("--method", dest="methods", help="comma list of reference, lds, slc")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--denominator", choices=["sending", "difference"])
        sp.add_argument("--max-edge", type=float, help="boundary densification step for the compensated set")
        sp.add_argument("--cloud", dest="cloud_csv", action="store_true", default=None,
                        help="also write the exact-cloud CSV")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    defaults = RunConfig(cases=["case30"]) if args.command == "coordinate" else RunConfig()
    try:
        cfg = build_config(args, defaults)
        written = COMMANDS[args.command](cfg)
    except (ConfigError, FileNotFoundError, MalformedMatrix, MissingSection, MalformedCase, NotRadial) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Infeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        for c in exc.constraints:
            print(f"  {c}", file=sys.stderr)
        return EXIT_NUMERIC
    except FlexAggError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
