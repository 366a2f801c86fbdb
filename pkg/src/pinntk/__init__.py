"""Neural tangent kernels of differential operators applied to networks.

Exact operator kernels ``T_x T_x' K^NT`` via jets and Gauss-Hermite quadrature,
finite-width networks with jet-valued backprop, kernel gradient flow,
physics-informed training and spectral analysis.
"""

from .activations import get_activation, relu_power
from .jet import Jet, JetLayout
from .kernel import KernelSpec, kernel_bijet, operator_gram, operator_kernel, rf_nt_kernels
from .multiindex import DiffOperator, MultiIndex, graded_indices, preset
from .network import NetworkConfig, NetworkParams, empirical_gram, forward_jet, init_params

__all__ = [
    "DiffOperator",
    "Jet",
    "JetLayout",
    "KernelSpec",
    "MultiIndex",
    "NetworkConfig",
    "NetworkParams",
    "empirical_gram",
    "forward_jet",
    "get_activation",
    "graded_indices",
    "init_params",
    "kernel_bijet",
    "operator_gram",
    "operator_kernel",
    "preset",
    "relu_power",
    "rf_nt_kernels",
]
