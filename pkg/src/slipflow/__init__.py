"""slipflow: Stokes flow with Navier slip conditions on rough graph domains.

The package builds and property-tests every constructive ingredient of the
slip-boundary well-posedness machinery at desk scale: fractional boundary
seminorms, boundary-flattening shear maps, divergence-preserving field
transport, a Taylor-Hood slip/friction solver with rigid-motion handling,
reflection checks on a truncated half-space, and integrability-exponent
ladders.
"""

__version__ = "0.1.0"

from . import exponents, flatten, fracgeom, halfspace, mesh, piola, stokes  # noqa: F401

from .exponents import (  # noqa: F401
    ExponentLadder,
    check_embedding_chain,
    friction_exponent_gate,
    navier_ladder,
    slip_ladder,
)
from .flatten import (  # noqa: F401
    Diffeomorphism,
    ExtensionField,
    build_diffeomorphism,
    compact_support_graph,
    flatten_graph,
    full_extension,
    harmonic_extension,
    jacobian_gap,
)
from .fracgeom import (  # noqa: F401
    BoundaryGraph,
    CutoffFunction,
    gagliardo_seminorm,
    graph_from_profile,
    make_cutoff,
    normalize_graph,
    verify_graph_estimates,
)
from .halfspace import (  # noqa: F401
    ReflectionPair,
    fold_solution,
    reflect_data,
    verify_reflection_consistency,
)
from .mesh import (  # noqa: F401
    QuadratureRule,
    TriMesh,
    boundary_normals,
    mesh_domain,
    read_mesh,
    refine,
    triangle_rule,
    write_mesh,
)
from .piola import (  # noqa: F401
    FieldPair,
    PiolaMap,
    gradient_decomposition,
    localize,
    symmetric_parts,
    verify_piola_identities,
)
from .stokes import (  # noqa: F401
    RigidMotionBasis,
    SolveReport,
    StokesProblem,
    convergence_study,
    estimate_infsup,
    estimate_korn,
    kernel_basis,
    lift_boundary_data,
    solve,
)
