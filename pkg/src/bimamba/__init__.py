"""Bidirectional selective state-space kernels with a minimal autodiff core."""

from .autodiff import Tape, Variable, finite_diff_check, wrap
from .bidirectional import (
    ExtBiMambaParams,
    InnBiMambaParams,
    ext_bimamba_forward,
    init_ext_bimamba,
    init_inn_bimamba,
    inn_bimamba_forward,
    param_count,
)
from .blocks import BlockSpec, init_layer, init_model, layer_forward, model_forward
from .mamba import MambaConfig, MambaParams, init_mamba, mamba_forward
from .profiling import count_macs, macs_walk, mixer_macs, time_scaling
from .scan import (
    lti_apply,
    lti_kernel,
    scan_states_parallel,
    scan_states_sequential,
    selective_scan_parallel,
    selective_scan_sequential,
)
from .stft import istft, power_law_compress, stft
from .verification import (
    gradient_suite,
    lti_equivalence_suite,
    reversal_suite,
    scan_equivalence_suite,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Tape",
    "Variable",
    "finite_diff_check",
    "wrap",
    "ExtBiMambaParams",
    "InnBiMambaParams",
    "ext_bimamba_forward",
    "init_ext_bimamba",
    "init_inn_bimamba",
    "inn_bimamba_forward",
    "param_count",
    "BlockSpec",
    "init_layer",
    "init_model",
    "layer_forward",
    "model_forward",
    "MambaConfig",
    "MambaParams",
    "init_mamba",
    "mamba_forward",
    "count_macs",
    "macs_walk",
    "mixer_macs",
    "time_scaling",
    "lti_apply",
    "lti_kernel",
    "scan_states_parallel",
    "scan_states_sequential",
    "selective_scan_parallel",
    "selective_scan_sequential",
    "istft",
    "power_law_compress",
    "stft",
    "gradient_suite",
    "lti_equivalence_suite",
    "reversal_suite",
    "scan_equivalence_suite",
]
