"""Hypernetwork-generated policies, hypernetwork initialization schemes, and
a grid-world meta-RL training harness with verification instruments."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check, tape  # noqa: F401
from .layout import SIZE_TABLE, BaseNetSpec, ParamLayout, layout_for  # noqa: F401
