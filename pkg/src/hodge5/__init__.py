"""hodge5: spectral exterior calculus on the 5-torus.

Computes spectra of the Beltrami operator *_g d and the Hodge Laplacian on
co-exact 2-forms over T^5 = (R/2pi Z)^5, verifies the multiplicity-2 pairing
of nonzero Hodge eigenvalues, predicts eigenvalue splitting under metric
perturbations g + eps*h to first order, and provides the pointwise Sylvester
construction v = t g^{-1} w + w g^{-1} t.

Fourier representation: exact per-mode operators for constant metrics,
metric-weighted Galerkin compressions for sampled (variable) metrics.
"""

from .errors import (
    ConfigError,
    ContractError,
    Hodge5Error,
    InvariantViolation,
    MetricError,
    NumericalError,
    ZeroModeError,
)
from .fibers import (
    DIM,
    FormFiber,
    IndexBasis,
    MetricTensor,
    SymTensor,
    codifferential_sign,
    fiber_inner,
    hodge_star,
    index_basis,
    laplacian_sign,
    metric_trace,
    perm_sign,
    wedge,
)
from .fields import (
    FormField,
    MetricField,
    Mode,
    ModeLattice,
    SymTensorField,
    read_form_field,
    read_sym_tensor_field,
    write_form_field,
    write_sym_tensor_field,
)
from .operators import (
    OperatorHandle,
    beltrami,
    beltrami_fiber,
    coexact_subspace,
    exterior_d,
    gauge_unitary,
    hodge_laplacian,
    hodge_projectors,
    hodge_star_field,
    l2_inner,
    l2_norm,
)
from .eigen import (
    EigenPair,
    RealPair,
    SpectrumReport,
    cluster,
    pair_spectrum,
    realify,
    spectrum,
)
from .perturbation import (
    BranchTrace,
    Direction,
    SplittingPrediction,
    d_beltrami,
    find_splitting_direction,
    metric_derivative_identities,
    predict_splitting,
    s_form,
    trace_branches,
    traceless_shift,
)
from .sylvester import (
    DensitySolution,
    SylvesterProblem,
    density_construct,
    kernel_basis,
    orthogonality_check,
    solve_sylvester,
)

__version__ = "0.1.0"
