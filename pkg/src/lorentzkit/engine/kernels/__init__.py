"""Kernel backend selection.

Prefers the compiled Cython core; falls back to pure numpy when the extension
is missing or when LORENTZKIT_FORCE_FALLBACK=1 is set. Both backends expose
unfold / fold_add / conv2d_direct with identical signatures and semantics.
"""

from __future__ import annotations

import os

from . import fallback

BACKEND = "fallback"
_impl = fallback

if os.environ.get("LORENTZKIT_FORCE_FALLBACK", "0") != "1":
    try:
        from . import _core  # type: ignore[attr-defined]

        _impl = _core
        BACKEND = "compiled"
    except ImportError:
        pass


def get_backend(name: str = "auto"):
    """Return the kernel module for 'auto', 'compiled' or 'fallback'."""
    if name == "auto":
        return _impl
    if name == "fallback":
        return fallback
    if name == "compiled":
        from . import _core  # raises ImportError when the extension is absent

        return _core
    raise ValueError(f"unknown kernel backend {name!r}")


def unfold(x, kh, kw, sh, sw, ph, pw):
    return _impl.unfold(x, kh, kw, sh, sw, ph, pw)


def fold_add(cols, C, H, W, kh, kw, sh, sw, ph, pw):
    return _impl.fold_add(cols, C, H, W, kh, kw, sh, sw, ph, pw)


def conv2d_direct(x, w, sh, sw, ph, pw):
    return _impl.conv2d_direct(x, w, sh, sw, ph, pw)
