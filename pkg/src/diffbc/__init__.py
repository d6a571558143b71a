"""diffbc: observation-to-action diffusion policies and classical baselines
on two synthetic desk-scale environments, with optimal-transport and
k-NN-ball evaluation metrics."""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
