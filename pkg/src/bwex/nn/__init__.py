"""Minimal differentiable tensor engine on numpy.

Every op has a hand-written backward pass; :mod:`bwex.nn.gradcheck` audits
them against central finite differences.
"""

from bwex.nn.tensor import ParamStore, Tensor
from bwex.nn.optim import adam_step
from bwex.nn.functional import mse_loss

__all__ = ["ParamStore", "Tensor", "adam_step", "mse_loss"]
