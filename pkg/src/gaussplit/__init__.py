"""Decompose Gaussian data into independent or dependent folds, evaluate the
exact laws of those folds and use them for selection and validation."""

__version__ = "0.1.0"

from .linalg import (  # noqa: F401
    AR1,
    CovarianceError,
    CovModel,
    Dense,
    Diagonal,
    EigenPair,
    Isotropic,
    Kronecker,
    eig_sym,
    materialize,
    orth_complete,
    sample_matrix_normal,
)
from .decompose import (  # noqa: F401
    DecompositionError,
    FoldSet,
    ImpossibleDecompositionError,
    OrthogonalPlan,
    gamma_dirichlet_thin,
    general_decompose,
    independent_split,
    make_plan_dependent,
    make_plan_fission,
    make_plan_info_preserving,
    make_plan_sample_split,
    make_plan_thinning,
    reconstruct,
)
from .laws import (  # noqa: F401
    ConditionalLaw,
    GaussianLaw,
    collapse,
    conditional_law,
    fast_log_density_pair,
    fold_marginal,
    joint_law,
    latent_form,
    log_density,
)
from . import casestudy, fisher, gp, inference  # noqa: F401,E402
