"""Process-wide numeric policy: dtype tolerances and check switches.

Precondition checks (tangency, on-manifold residuals) and per-op finiteness
checks are assertion-mode features: they default on and are switched off in
benchmark mode to keep hot paths branch-light.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

# Assertion-mode switches. Mutated only via set_checks()/benchmark_mode().
strict_checks: bool = True
check_finite: bool = True


def set_checks(strict: bool | None = None, finite: bool | None = None) -> None:
    global strict_checks, check_finite
    if strict is not None:
        strict_checks = strict
    if finite is not None:
        check_finite = finite


@contextmanager
def benchmark_mode():
    """Disable assertion-mode checks for the duration of a timing run."""
    global strict_checks, check_finite
    saved = (strict_checks, check_finite)
    strict_checks = False
    check_finite = False
    try:
        yield
    finally:
        strict_checks, check_finite = saved


def tol_manifold(dtype) -> float:
    """On-manifold / tangency precondition tolerance for a dtype."""
    return 1e-3 if np.dtype(dtype) == np.float32 else 1e-6


def eps_acosh(dtype) -> float:
    """Clamp margin for arccosh arguments (and the paired sqrt guard)."""
    return 1e-7 if np.dtype(dtype) == np.float32 else 1e-12


def tanh_cap(dtype) -> float:
    """Strict upper bound used for saturating tanh outputs.

    tanh rounds to exactly 1.0 for large arguments; capping below 1 keeps
    "strictly inside the radius" guarantees meaningful at each precision.
    """
    return 1.0 - 1e-5 if np.dtype(dtype) == np.float32 else 1.0 - 1e-12
