# Copyright 2026 The invgrad Authors
# SPDX-License-Identifier: Apache-2.0
"""Gradient strategies for invertible networks with exact memory accounting.

The heavy lifting lives in the compiled `_core` module; this package just
re-exports its surface.
"""

from invgrad._core import (  # noqa: F401
    STRATEGIES,
    InvgradError,
    Network,
    __version__,
    compute_gradients,
    fd_gradient,
    generate_dataset,
    run_sweep,
)

__all__ = [
    "STRATEGIES",
    "InvgradError",
    "Network",
    "__version__",
    "compute_gradients",
    "fd_gradient",
    "generate_dataset",
    "run_sweep",
]
