"""curvatlas - regularity, crossing and capacity analysis of random curve systems."""

from importlib.metadata import version

try:
    __version__ = version("curvatlas")
except Exception:
    __version__ = "0.1.0"  # Fallback for development

# Re-export public API
from curvatlas.capacity import (
    CapacityResult,
    DiscreteMeasure,
    FractalHierarchy,
    build_hierarchy,
    capacity_lower_bound,
    capacity_qp,
    dimension_lower_bound,
    energy,
    hierarchy_measure,
)
from curvatlas.crossings import (
    Cylinder,
    ScaleLadder,
    SeparationError,
    Shell,
    cylinder_traversal,
    detect_straight_runs,
    estimate_lambda,
    estimate_rho,
    min_kfold_scale,
    shell_traversals,
    sparsity_check,
)
from curvatlas.curves import (
    Box,
    CurveConfig,
    PolyCurve,
    box_count,
    diameter,
    packing_count,
    partition_count,
)
from curvatlas.experiments import (
    ConfigError,
    ExperimentConfig,
    ResultRecord,
    emit_table,
    run_experiment,
)
from curvatlas.generators import (
    ExperimentAborted,
    GeneratorSpec,
    StepCapExceeded,
    gen_fixture,
    gen_lerw,
    gen_mst_path,
    gen_rw_frontier,
)
from curvatlas.lattice import LatticeField, gen_bond_percolation, gen_site_percolation
from curvatlas.metrics import MetricParams, config_distance, curve_distance
from curvatlas.regularity import (
    ExponentFit,
    FitError,
    Parametrization,
    fit_exponent,
    reparametrize_holder,
    verify_modulus,
)
from curvatlas.storage import SQLiteStorage

__all__ = [
    # Version
    "__version__",
    # Curves
    "PolyCurve",
    "CurveConfig",
    "Box",
    "diameter",
    "partition_count",
    "packing_count",
    "box_count",
    # Regularity
    "ExponentFit",
    "FitError",
    "Parametrization",
    "fit_exponent",
    "reparametrize_holder",
    "verify_modulus",
    # Crossings
    "Shell",
    "Cylinder",
    "ScaleLadder",
    "SeparationError",
    "shell_traversals",
    "min_kfold_scale",
    "cylinder_traversal",
    "detect_straight_runs",
    "sparsity_check",
    "estimate_lambda",
    "estimate_rho",
    # Capacity
    "FractalHierarchy",
    "DiscreteMeasure",
    "CapacityResult",
    "build_hierarchy",
    "hierarchy_measure",
    "energy",
    "capacity_qp",
    "capacity_lower_bound",
    "dimension_lower_bound",
    # Metrics
    "MetricParams",
    "curve_distance",
    "config_distance",
    # Generators
    "GeneratorSpec",
    "LatticeField",
    "StepCapExceeded",
    "gen_bond_percolation",
    "gen_site_percolation",
    "gen_lerw",
    "gen_mst_path",
    "gen_rw_frontier",
    "gen_fixture",
    # Experiments
    "ExperimentConfig",
    "ExperimentAborted",
    "ConfigError",
    "ResultRecord",
    "run_experiment",
    "emit_table",
    # Storage
    "SQLiteStorage",
]
