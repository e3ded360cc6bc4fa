"""Two-level overlapping Schwarz preconditioners with GenEO coarse spaces
for the 2D Helmholtz and Poisson model problems."""
from .coarse import CoarseKind, CoarseSpace, build_coarse_space, export_eigenfunction
from .decomposition import Decomposition, build_decomposition
from .errors import *  # noqa: F401,F403
from .krylov import GmresConfig, SolveReport, gmres
from .problem import CoefficientField, MeshGrid, Profile, assemble, build_mesh, evaluate_coefficient
from .schwarz import CoarseVariant, LocalVariant, PrecondConfig, Preconditioner, build_preconditioner
from .workbench import ExperimentSpec, SweepPoint, dump_spec, emit_table, load_spec, run_single, run_sweep

__version__ = "0.1.0"
