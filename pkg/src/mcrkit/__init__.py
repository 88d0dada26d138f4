"""mcrkit: coding-rate-reduction training with a fast variational reformulation.

The package trains a small MLP featurizer so that class representations
expand globally while compressing per class (the MCR^2 objective), either
by direct gradient ascent on the log-det objective or through the much
cheaper variational surrogate (V-MCR^2) built on a shared dictionary and
per-class nonnegative spectral codes. A nearest-subspace classifier and a
benchmark/CLI layer sit on top.
"""

__version__ = "0.1.0"
