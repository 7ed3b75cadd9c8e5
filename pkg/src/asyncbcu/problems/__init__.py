from .base import BlockPartition, Problem
from .io import load_instance, save_instance
from .lasso import LassoInstance, lasso_generate, lasso_partial_grad, soft_threshold
from .nmf import (
    NmfInstance,
    nmf_block_lipschitz,
    nmf_generate,
    nmf_partial_grad,
    nmf_prox_and_normalize,
)
from .quadratic import QuadraticToy, quadratic_toy

__all__ = [
    "BlockPartition",
    "Problem",
    "LassoInstance",
    "NmfInstance",
    "QuadraticToy",
    "lasso_generate",
    "lasso_partial_grad",
    "soft_threshold",
    "nmf_generate",
    "nmf_partial_grad",
    "nmf_prox_and_normalize",
    "nmf_block_lipschitz",
    "quadratic_toy",
    "save_instance",
    "load_instance",
]
