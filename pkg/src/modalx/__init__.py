"""Symmetry structure of finite Kripke frames and modally exchangeable measures."""

__version__ = "0.1.0"

from .frame import Frame, FrameClass, accessible_cluster, classify, load_frame, parse_frame, serialize_frame
from .hierspec import DirectingMeasure, HierarchicalSpec, OrbitPrior, load_spec, parse_spec
from .measure import (
    AtomSet,
    ErgodicDecomposition,
    ExactMeasure,
    act,
    check_invariance_exact,
    ergodic_decompose,
    exact_hier_measure,
    marginal,
    pushforward,
    symmetrize,
)
from .sampler import Dataset, draw_latents, sample_replicates, sample_valuation
from .symmetry import (
    ExtReport,
    OrbitPartition,
    PermGroup,
    analyze,
    automorphism_group,
    check_ext,
    is_point_homogeneous,
    orbit_partition,
    restrict,
    stabilizer,
)

__all__ = [
    "AtomSet", "Dataset", "DirectingMeasure", "ErgodicDecomposition", "ExactMeasure", "ExtReport",
    "Frame", "FrameClass", "HierarchicalSpec", "OrbitPartition", "OrbitPrior", "PermGroup",
    "accessible_cluster", "act", "analyze", "automorphism_group", "check_ext",
    "check_invariance_exact", "classify", "draw_latents", "ergodic_decompose", "exact_hier_measure",
    "is_point_homogeneous", "load_frame", "load_spec", "marginal", "orbit_partition", "parse_frame",
    "parse_spec", "pushforward", "restrict", "sample_replicates", "sample_valuation",
    "serialize_frame", "stabilizer", "symmetrize",
]
