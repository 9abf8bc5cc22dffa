"""Noisy-label learning with pseudo-label relaxed contrastive representation learning.

Small numpy reference implementation: synthetic data, an MLP with analytic
gradients, 2D-GMM sample selection, prototypes, semi-supervised training and
diagnostics for gradient conflict and negative-pair precision.
"""

__version__ = "0.1.0"
