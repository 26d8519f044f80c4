"""Mean-field games solved by backpropagating through a neural SDE solver."""

from . import autodiff, mfg, nets, sde

__version__ = "0.1.0"

__all__ = ["autodiff", "nets", "sde", "mfg", "__version__"]
