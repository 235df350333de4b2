"""Hierarchical metric learning on the Lorentz manifold.

Learnable hyperbolic proxies act as ancestors of embedded points. Triplets
(i, j, k) are mined unsupervised: i and j are related iff each appears in the
other's k-nearest list under Lorentz distance (reciprocal k-NN, never
labels); k is a sampled unrelated point. Each hinge of the loss pushes the
pair toward its joint proxy and away from the triplet proxy, and pulls the
negative the opposite way:

    [d(x_i, p_ij) - d(x_i, p_ijk) + delta]_+
  + [d(x_j, p_ij) - d(x_j, p_ijk) + delta]_+
  + [d(x_k, p_ijk) - d(x_k, p_ij) + delta]_+

Proxy selection is a hard argmin of summed distances (lowest index on ties);
proxies are expected to be rescaled into the representable radius before any
distance evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lmath
from .engine import ops
from .errors import UsageError
from .manifold import ManifoldHandle
from .params import LORENTZ, ParamSlot


@dataclass
class TripletBatch:
    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    margin: float

    def __len__(self) -> int:
        return len(self.i)


class ProxySet:
    """M learnable proxies stored as one Lorentz slot."""

    def __init__(self, manifold: ManifoldHandle, count: int = 64, *,
                 init_sigma: float = 0.01, rng: np.random.Generator | None = None,
                 name: str = "proxies"):
        rng = rng or np.random.default_rng(0)
        tang = rng.normal(0.0, init_sigma, size=(count, manifold.dim)).astype(manifold.dtype)
        coords = np.asarray(lmath.expmap0_space(tang, manifold.K))
        self.manifold = manifold
        self.slot = ParamSlot(name=name, kind=LORENTZ, value=coords, manifold=manifold)

    @property
    def count(self) -> int:
        return self.slot.value.shape[0]


def pairwise_dist(x, y, K):
    """All-pairs Lorentz distance between rows of x (N,n+1) and y (M,n+1)."""
    xt = x[..., :1]
    xm = ops.concat([-1.0 * xt, x[..., 1:]], axis=-1)
    g = ops.matmul(xm, ops.transpose(y))  # (N, M) Minkowski Gram matrix
    return lmath.sqrt_scalar(K) * ops.arccosh(-1.0 * g / K)


def mine_triplets(embeddings, K, k_nn: int, *, seed: int = 0,
                  margin: float = 0.1) -> TripletBatch:
    """Reciprocal-kNN related pairs with one sampled unrelated negative each.

    Deterministic for a fixed seed: neighbor lists include every point tied
    at the k-th distance, and negatives come from a seeded generator.
    Returns an empty batch when no valid triplet exists.
    """
    emb = ops.data_of(embeddings)
    n = emb.shape[0]
    if n < k_nn + 2:
        raise UsageError(f"mine_triplets: need at least k_nn+2={k_nn + 2} points, got {n}")
    d = np.asarray(pairwise_dist(emb, emb, float(ops.data_of(K))))
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    # k-NN with ties: everything at the k-th distance counts as a neighbor,
    # so exact ties (identical points) relate symmetrically
    kth = np.take_along_axis(d, order[:, k_nn - 1:k_nn], axis=1)
    member = d <= kth
    related = member & member.T

    rng = np.random.default_rng(seed)
    ii, jj, kk = [], [], []
    for i in range(n):
        for j in range(n):
            if i == j or not related[i, j]:
                continue
            cand = np.flatnonzero(~related[i] & ~related[j])
            cand = cand[(cand != i) & (cand != j)]
            if cand.size == 0:
                continue
            ii.append(i)
            jj.append(j)
            kk.append(int(rng.choice(cand)))
    return TripletBatch(np.asarray(ii, dtype=np.int64), np.asarray(jj, dtype=np.int64),
                        np.asarray(kk, dtype=np.int64), margin)


def assign_proxies(x_i, x_j, x_k, proxies, K) -> tuple[int, int]:
    """Hard proxy assignment for one triplet: argmin of summed distances."""
    pts = np.stack([ops.data_of(x_i), ops.data_of(x_j), ops.data_of(x_k)])
    d = np.asarray(pairwise_dist(pts, ops.data_of(proxies), float(ops.data_of(K))))
    rho_ij = int(np.argmin(d[0] + d[1]))
    rho_ijk = int(np.argmin(d[0] + d[1] + d[2]))
    return rho_ij, rho_ijk


def _assign_batch(d: np.ndarray, batch: TripletBatch) -> tuple[np.ndarray, np.ndarray]:
    pair_cost = d[batch.i] + d[batch.j]
    rho_ij = np.argmin(pair_cost, axis=1)
    rho_ijk = np.argmin(pair_cost + d[batch.k], axis=1)
    return rho_ij, rho_ijk


def lhier_loss(batch: TripletBatch, embeddings, proxies, K, assignments=None):
    """Mean hinge loss over the triplet batch (0.0 for an empty batch).

    Differentiable wrt embeddings and proxies through the engine; the argmin
    proxy selection itself is evaluated on values and carries no gradient.
    Pass `assignments` = (rho_ij, rho_ijk) index arrays to pin the proxies
    explicitly (direct evaluations, kink-free gradient checks).
    """
    if len(batch) == 0:
        return ops.sum_(embeddings * 0.0) if ops.is_node(embeddings) else 0.0
    d = pairwise_dist(embeddings, proxies, K)
    if assignments is None:
        rho_ij, rho_ijk = _assign_batch(ops.data_of(d), batch)
    else:
        rho_ij, rho_ijk = (np.asarray(a, dtype=np.int64) for a in assignments)
    d_i_ij = d[batch.i, rho_ij]
    d_i_ijk = d[batch.i, rho_ijk]
    d_j_ij = d[batch.j, rho_ij]
    d_j_ijk = d[batch.j, rho_ijk]
    d_k_ij = d[batch.k, rho_ij]
    d_k_ijk = d[batch.k, rho_ijk]
    m = batch.margin
    terms = (ops.relu(d_i_ij - d_i_ijk + m)
             + ops.relu(d_j_ij - d_j_ijk + m)
             + ops.relu(d_k_ijk - d_k_ij + m))
    return ops.mean_(terms)


def recall_at_k(embeddings, labels, k: int, K) -> float:
    """Fraction of queries with a same-label point among their k nearest."""
    emb = ops.data_of(embeddings)
    labels = np.asarray(labels)
    n = emb.shape[0]
    if n < 2:
        raise UsageError("recall_at_k needs at least 2 points")
    d = np.asarray(pairwise_dist(emb, emb, float(ops.data_of(K))))
    np.fill_diagonal(d, np.inf)
    kk = min(k, n - 1)
    nearest = np.argsort(d, axis=1, kind="stable")[:, :kk]
    hits = (labels[nearest] == labels[:, None]).any(axis=1)
    return float(hits.mean())
