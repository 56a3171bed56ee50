"""
CoLabel: constructive interpretability on a synthetic vehicle domain.

The package is organised the way the pipeline runs:

- ``colabel.ndgrad``: dense tensors, reverse-mode autodiff and optimizers
- ``colabel.synth``: synthetic vehicle images, datasets and knowledge base
- ``colabel.corroborate``: labeling teams that complete missing annotations
- ``colabel.network``: the multi-branch interpretable classifier
- ``colabel.training``: losses, training loop, metrics and corrections
- ``colabel.main``: command-line entry point
"""

from colabel.__about__ import __version__

__all__ = ["__version__"]
