"""Divergence-conforming interior-penalty Stokes solver on ellipsoidal surfaces."""
import os as _os

# thread count has to be fixed before numpy loads its BLAS
_threads = _os.environ.get("SURFACE_STOKES_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .assembly import FeSystem, assemble  # noqa: E402
from .experiments import (  # noqa: E402
    ErrorReport,
    RunConfig,
    convergence_study,
    eigen_study,
    killing_filter_study,
    measure_errors,
)
from .fem import DofMap, FaceBasis, FeFunction, interpolate_bdm  # noqa: E402
from .geometry import SurfaceGeometry, closest_point, exact_fields, killing_basis  # noqa: E402
from .killing import FilterPolicy, FilterReport, filter_velocity, forcing_filter_pipeline, threshold_select  # noqa: E402
from .mesh import TriSurfaceMesh, icosphere  # noqa: E402
from .solver import (  # noqa: E402
    EigenSet,
    SaddleFactorization,
    StokesSolution,
    project_analytic_killing,
    project_discrete_killing,
    solve_eigen,
    solve_stokes,
)

__version__ = "0.1.0"
