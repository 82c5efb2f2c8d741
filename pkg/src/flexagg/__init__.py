"""Aggregation of distribution-feeder flexibility at the PCC with quadratic loss compensation."""

from .coordination import (Cost, DispatchResult, Feeder, TsoModel, attach_feeders, coordinate,
                           post_verify, prepare_feeder, price_sweep_dispatch, tso_from_case)
from .distflow import ExactFlexCloud, check_feasible, exact_flex_cloud, invert_pcc, sweep_batch, sweep_solve
from .errors import *  # noqa: F401,F403
from .geometry import Box, FlexPolygon, HalfSpace, intersect_halfspaces, polygon_metrics
from .lindistflow import LinDistFlow, assemble, flexibility_polygon
from .losses import QuadLossMap, compensate, compensate_polygon, loss_map_for
from .matpower import load_bundled, parse_case, read_case, to_radial_network, tutorial_network
from .network import DER, RadialNetwork, validate_radial

__version__ = "0.1.0"
