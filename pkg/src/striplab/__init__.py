"""Numerical toolkit for random block-Schrodinger operators on a strip.

Modules
-------
model
    Ensembles, counter-addressed disorder realizations and finite-volume operators.
transfer
    One-step and multi-step transfer matrices and their symplectic conjugates.
lyapunov
    Lyapunov spectra, restricted growth rates and large-deviation tails.
green
    Green functions (three cross-checked routes), resonances and Wegner statistics.
localization
    Eigenfunction decay fits, eigenfunction correlators and fractional moments.
cli
    The ``striplab`` experiment runner.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DegenerateConfigurationError,
    InsufficientRangeError,
    IntegrityError,
    NearSingularError,
    NumericalError,
    OutOfRangeError,
    StriplabError,
)
from .green import (
    GreenBlock,
    GreenMethod,
    PsiPair,
    ResonanceReport,
    green_direct,
    green_via_psi,
    psi_matrices,
    res_star_scan,
    resonance_set,
    wegner_sample,
    x_matrices,
)
from .localization import (
    CorrelatorEstimate,
    DecayFit,
    EigenPair,
    correlator,
    correlator_sup,
    decay_fit,
    eigenpairs,
    fractional_moment_probe,
)
from .lyapunov import (
    LagrangianFrame,
    LyapunovEstimate,
    estimate_restricted,
    estimate_spectrum,
    ldp_tail,
    random_lagrangian,
    svd_alignment,
)
from .model import (
    Bernoulli,
    BlockOperator,
    Cauchy,
    DisorderRealization,
    EnsembleSpec,
    Family,
    Gaussian,
    HoppingDist,
    PotentialDist,
    ScalarLaw,
    Uniform,
    Window,
    anderson_strip,
    assemble_finite_operator,
    block_anderson,
    moment_diagnostic,
    random_hopping,
    sample_realization,
    wegner_orbital,
)
from .transfer import (
    CocycleSegment,
    TransferMatrix,
    conjugated_one_step,
    multi_step,
    one_step,
    symplectic_defect,
)
