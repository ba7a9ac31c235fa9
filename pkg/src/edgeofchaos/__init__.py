"""Activation spectra, edge-of-chaos diagnostics and deep echo state networks.

Modules: ``hermite`` (orthonormal Hermite basis and projections),
``activations`` (builtin and Hermite-designed activations), ``dynamics``
(Lyapunov criticality and recurrence plots), ``esn`` (deep echo state
networks), ``mlp`` (small SGD-trained networks), ``optim`` (MPSOGSA swarm
search), ``data`` (series, datasets, splits, metrics) and ``cli``.
"""

__version__ = "0.1.0"
