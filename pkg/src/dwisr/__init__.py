"""Super-resolution reconstruction of RF-slab-encoded, q-space-undersampled
diffusion MRI, with spherical-ridgelet sparsity and total-variation
regularization, plus the simulation and validation machinery around it."""

__version__ = "0.1.0"

from .qspace import QSpaceDesign, SamplingScheme, spiral_directions, make_scheme, scheme_mask
from .encoding import (
    DwiVolumeSet,
    EncodingBasis,
    NoiseSpec,
    default_basis,
    downsample,
    downsample_adjoint,
    simulate_acquisition,
    simulate_hr_acquisition,
    make_phantom,
)
from .ridgelets import (
    RidgeletDictionary,
    SHBasis,
    build_dictionary,
    evaluate_atoms,
    fit_coefficients_ls,
    sh_basis,
    odf_from_signal,
    icosphere,
)
from .solver import (
    SolverConfig,
    ReconReport,
    soft_threshold,
    tikhonov_init,
    reconstruct,
    reconstruct_sparse_only,
)
from .analysis import (
    nmse,
    fit_dti,
    angular_error,
    find_peaks,
    peak_errors,
    run_monte_carlo,
)
