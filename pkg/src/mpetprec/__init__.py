"""Parameter-robust block preconditioning for multi-network poroelastic flow.

The package exposes four layers: dense congruence transforms of the
network coupling matrices (congruence), a P1/P2 finite-element kernel on
structured unit-square meshes (meshfem), block system assembly in original
and transformed variables (systems), preconditioned MinRes with exact
block factorizations (solvers), plus spectral robustness verification
(analysis) and the experiment CLI (cli).
"""

from .congruence import (
    CongruenceError,
    CongruenceResult,
    MpetParameters,
    build_coupling_matrix,
    build_exchange_matrix,
    diagonalize_by_congruence,
    eigenvalue_cluster,
    read_matrix,
    symmetric_eig,
    transform_parameters,
    write_matrix,
)
from .meshfem import (
    DofMap,
    MeshError,
    StructuredMesh,
    apply_dirichlet,
    assemble_divergence_p2_p1,
    assemble_elasticity_p2,
    assemble_mass_p1,
    assemble_stiffness_p1,
    build_unit_square_mesh,
)
from .systems import (
    BlockSystem,
    assemble_mpet,
    assemble_mpet_transformed,
    assemble_mpt,
    assemble_mpt_transformed,
    build_mpet_rhs,
    build_mpt_rhs,
    recover_pressures,
    split_vector,
    total_pressure_postprocess,
    transform_rhs,
)
from .solvers import (
    BlockDiagPreconditioner,
    SolveReport,
    SolverError,
    build_precond_mpet_naive,
    build_precond_mpet_transformed,
    build_precond_mpt_naive,
    build_precond_mpt_transformed,
    factorize_spd,
    minres,
)
from .analysis import (
    AnalysisError,
    SpectrumReport,
    admissibility,
    preconditioned_spectrum_dense,
    preconditioned_spectrum_lanczos,
    robustness_table,
)

__version__ = "0.1.0"
