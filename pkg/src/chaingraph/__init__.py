"""Chain-recurrence graphs of dynamical systems from box-map outer approximations."""

__version__ = "0.1.0"

from .geometry import Box, Grid, GridError, set_distance
from .systems import (
    DiscreteMap, Escape, IntegratorConfig, NoReturn, PoincareReturn, SectionConfig,
    SystemInputError, SystemSpec, TimeTMap, evaluate, flow_time_T,
)
from .boxmap import (
    BoxMap, ChainGraph, SamplingConfig, adjacency_reduction, build_box_map, chain_graph,
    classify_top_bottom, connectedness_check, prune_to_chain_recurrent, refine, scc_condensation,
)
from .attractor import (
    AttractorApprox, PreconditionError, TrappingVerdict, global_attractor_outer, invariant_part,
    time_T_graph_equality, verify_trapping,
)
from .oracle import PointCloud, classify_edge, downstream_oracle, omega_limit
from .config import PRESETS, ConfigError, RegionBox, RunConfig, parse_config, preset_config, serialize_config
from .pipeline import run, run_with_graph
