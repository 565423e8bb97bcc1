"""Refined Sobolev scales and elliptic pseudodifferential systems on the torus."""

from .fredholm import (
    AmbiguousRank,
    FredholmReport,
    GalerkinOperator,
    Unsolvable,
    apriori_constant,
    apriori_report,
    fredholm_report,
    index_invariance_experiment,
    projectors,
    solvability_test,
    solve,
    truncate,
)
from .pdo_calculus import ClassicalSymbol, HomogeneousTerm, PdoSystem, apply, apply_system, petrovskii_check
from .refined_spaces import FourierField, ManifoldSpec, RefinedIndex, multiplier_norm, norm
from .regularity import continuity_check, flat_top_cutoff, lifting_experiment, localize, smoothness_fit
from .slowly_varying import (
    CONSTANT_ONE,
    SlowlyVaryingFunction,
    check_slow_variation,
    embedding_criterion,
    make_standard_phi,
    octave_ratio_verdict,
)

__version__ = "0.1.0"
