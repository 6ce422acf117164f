"""Degree-based detection of self-interpenetration in discretized thin plates.

The package is organized around a handful of kernels:

- ``geometry``: simplicial meshes, prism extrusions, piecewise-affine maps,
  pixel sets, seeded sampling.
- ``degree``: Brouwer degree of piecewise-affine maps by Jacobian-sign sum,
  boundary winding / solid angle, and the integral formula, plus degree
  fields of cylinder extensions.
- ``elasticity``: scaled gradients, distance to SO(3), geometric rigidity
  fits, stored-energy integrals, and plate constraint residuals.
- ``truncation``: Lipschitz truncation with certified mismatch bounds.
- ``measure``: covering pre-measure, perimeter, 1-capacity and
  isoperimetric estimators on pixel grids.
- ``interpenetration``: a.e.-invertibility checks, the simple
  interpenetration test, far-coincidence sets and the non-invertibility
  volume pipeline.
- ``pathology``: generators for the cavitation strip sequence and for
  bending recovery sequences.
"""

__version__ = "0.1.0"

from .geometry import (
    TriangulatedDomain,
    PrismMesh,
    PiecewiseAffineMap,
    PixelSet,
    build_grid_domain,
    extrude_cylinder,
    sample_interior,
    measure_of,
)
from .degree import (
    DegreeResult,
    DegreeField,
    degree_jacobian,
    degree_boundary,
    degree_integral,
    degree_field,
    level_set_boundary_check,
)
from .elasticity import (
    ScaledDeformation,
    RigidityFit,
    StoredEnergyDensity,
    rigidity_fit,
    rigidity_constant_scan,
    scaling_check,
    midplane_average,
    dist2_energy,
    vk_extract,
    vk_constraint_residual,
)
from .truncation import TruncationResult, lipschitz_truncate
from .measure import (
    CoverEstimate,
    premeasure,
    comparability_check,
    perimeter,
    cap1_estimate,
    isoperimetric_check,
)
from .interpenetration import (
    ExtensionSpec,
    InterpenetrationReport,
    FhReport,
    invertibility_ae_check,
    build_extension,
    check_simple_interpenetration,
    find_far_coincidences,
    noninvertibility_volume,
    PINNED_C,
)
from .pathology import (
    MSParams,
    RecoverySequence,
    cavitation_block,
    ms_element,
    ms_limit,
    ms_discrepancy,
    thicken,
    kirchhoff_ansatz,
    crossing_scenario,
)

__all__ = [
    "TriangulatedDomain",
    "PrismMesh",
    "PiecewiseAffineMap",
    "PixelSet",
    "build_grid_domain",
    "extrude_cylinder",
    "sample_interior",
    "measure_of",
    "DegreeResult",
    "DegreeField",
    "degree_jacobian",
    "degree_boundary",
    "degree_integral",
    "degree_field",
    "level_set_boundary_check",
    "ScaledDeformation",
    "RigidityFit",
    "StoredEnergyDensity",
    "rigidity_fit",
    "rigidity_constant_scan",
    "scaling_check",
    "midplane_average",
    "dist2_energy",
    "vk_extract",
    "vk_constraint_residual",
    "TruncationResult",
    "lipschitz_truncate",
    "CoverEstimate",
    "premeasure",
    "comparability_check",
    "perimeter",
    "cap1_estimate",
    "isoperimetric_check",
    "ExtensionSpec",
    "InterpenetrationReport",
    "FhReport",
    "invertibility_ae_check",
    "build_extension",
    "check_simple_interpenetration",
    "find_far_coincidences",
    "noninvertibility_volume",
    "PINNED_C",
    "MSParams",
    "RecoverySequence",
    "cavitation_block",
    "ms_element",
    "ms_limit",
    "ms_discrepancy",
    "thicken",
    "kirchhoff_ansatz",
    "crossing_scenario",
]
