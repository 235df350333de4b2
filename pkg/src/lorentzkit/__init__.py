"""lorentzkit: Lorentz-manifold deep learning numerics.

Primitives for the hyperboloid model with learnable per-block curvature,
maximum-distance rescaling, rotation+boost linear/conv layers, a minimal
reverse-mode autodiff engine, curvature-aware Riemannian optimizers, and a
hierarchical metric-learning loss, plus a CLI harness that verifies the
package's invariants at desk scale.
"""

from . import (
    engine,
    errors,
    layers,
    lhier,
    lmath,
    manifold,
    optimizers,
    params,
    runtime,
    stability,
)

__version__ = "0.1.0"

__all__ = ["engine", "errors", "layers", "lhier", "lmath", "manifold", "optimizers",
           "params", "runtime", "stability", "__version__"]
