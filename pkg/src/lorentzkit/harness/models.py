"""Desk-scale models: a CNN classifier with Lorentz-core bottleneck blocks
and a metric-learning encoder with a Lorentz linear neck.

The classifier head is prototype based: logits are negative squared Lorentz
distances to learnable class prototypes on the decoder manifold. Encoder
blocks and the decoder head own separate manifolds, each with a learnable
curvature.
"""

from __future__ import annotations

import math

import numpy as np

from .. import lmath, stability
from ..engine import ops
from ..engine.node import as_node
from ..layers import (
    EuclideanBatchNorm2d,
    EuclideanConv2d,
    LayerConfig,
    LorentzCoreBottleneck,
    LorentzLinear,
    e2l,
)
from ..lhier import ProxySet, pairwise_dist
from ..manifold import ManifoldHandle
from ..params import EUCLIDEAN, LORENTZ, GraphContext, ParamSlot, curvature_slot
from ..stability import PrecisionProfile, RescaleConfig
from .config import ExperimentConfig


def layer_config(cfg: ExperimentConfig) -> LayerConfig:
    profile = PrecisionProfile.for_dtype(cfg.dtype, cfg.xtmax_or_default)
    return LayerConfig(rescale=RescaleConfig(s=cfg.tightness, profile=profile),
                       bypass_rescale=cfg.no_scaling)


def _pairwise_neg_sqdist(emb, protos, K):
    """-d_L^2 between rows of emb (B,n+1) and protos (M,n+1): (B,M) logits."""
    xt = emb[..., :1]
    xm = ops.concat([-1.0 * xt, emb[..., 1:]], axis=-1)
    g = ops.matmul(xm, ops.transpose(protos))
    return 2.0 * K + 2.0 * g  # = -(-2K - 2<x,p>)


def cross_entropy(logits, labels: np.ndarray):
    """Mean CE over rows; the row max is detached for a stable logsumexp."""
    m = as_node(ops.data_of(logits).max(axis=1, keepdims=True))
    lse = ops.log(ops.sum_(ops.exp(logits - m), axis=1, keepdims=True)) + m
    idx = (np.arange(len(labels)), np.asarray(labels))
    picked = logits[idx]
    return ops.mean_(ops.reshape(lse, (-1,)) - picked)


class ClassifyNet:
    """Stem conv -> Lorentz-core bottlenecks (per-block manifolds) -> pooled
    features -> Lorentz neck -> distance-prototype head."""

    def __init__(self, cfg: ExperimentConfig, rng: np.random.Generator):
        dt = cfg.dtype
        lcfg = layer_config(cfg)
        self.cfg = cfg
        self.lcfg = lcfg
        C = cfg.channels
        kraw = math.log(cfg.curvature_init)
        self.stem = EuclideanConv2d(1, C, 3, stride=2, padding=1, dtype=dt, rng=rng,
                                    name="stem")
        self.stem_bn = EuclideanBatchNorm2d(C, dtype=dt, name="stem_bn")
        self.block_manifolds: list[ManifoldHandle] = []
        self.blocks: list[LorentzCoreBottleneck] = []
        for i in range(cfg.blocks):
            m = ManifoldHandle(f"block{i}", C, kappa_raw=kraw, dtype=dt)
            self.block_manifolds.append(m)
            self.blocks.append(LorentzCoreBottleneck(
                C, C, C, m, stride=1, cfg=lcfg, rng=rng, name=f"block{i}"))
        self.head_manifold = ManifoldHandle("head", C, kappa_raw=kraw, dtype=dt)
        self.neck = LorentzLinear(self.head_manifold, cfg.embed_dim, lcfg, rng=rng,
                                  name="neck")
        proto_t = rng.normal(0.0, 0.1, (cfg.class_count, cfg.embed_dim)).astype(dt)
        protos = np.asarray(lmath.expmap0_space(proto_t, self.neck.manifold_out.K))
        self.prototypes = ParamSlot("prototypes", LORENTZ, protos,
                                    manifold=self.neck.manifold_out)

    def manifolds(self) -> list[ManifoldHandle]:
        return self.block_manifolds + [self.head_manifold]

    def slots(self) -> list[ParamSlot]:
        out = self.stem.slots() + self.stem_bn.slots()
        for b in self.blocks:
            out += b.slots()
        out += self.neck.slots() + [self.prototypes]
        return out

    def curvature_slots(self) -> list[ParamSlot]:
        return [curvature_slot(m, name=f"kappa_raw.{m.id}") for m in self.manifolds()]

    def buffers(self) -> dict[str, np.ndarray]:
        out = self.stem_bn.buffers()
        for b in self.blocks:
            out.update(b.buffers())
        return out

    def load_buffers(self, tensors: dict[str, np.ndarray]) -> None:
        self.stem_bn.load_buffers(tensors)
        for b in self.blocks:
            b.load_buffers(tensors)

    def forward(self, x, ctx: GraphContext | None = None, training: bool = True):
        """x: (B,1,H,W) -> logits (B, classes)."""
        h = ops.relu(self.stem_bn(self.stem(x, ctx), ctx, training=training))
        for blk in self.blocks:
            h = blk(h, ctx, training=training)
        pooled = ops.mean_(h, axis=(2, 3))  # (B, C)
        K_head = ctx.K(self.head_manifold) if ctx is not None else self.head_manifold.K
        pts = e2l(pooled, K_head, self.lcfg)
        emb = self.neck.forward_coords(pts, ctx)
        protos = ctx.param(self.prototypes) if ctx is not None else self.prototypes.value
        K_out = (ctx.K(self.neck.manifold_out) if ctx is not None
                 else self.neck.manifold_out.K)
        if not self.lcfg.bypass_rescale:
            zs = stability.rescale_space(lmath.logmap0_space(protos, K_out), K_out,
                                         self.lcfg.rescale)
            protos = lmath.expmap0_space(zs, K_out)
        return self.cfg.logit_scale * _pairwise_neg_sqdist(emb, protos, K_out)


class MetricNet:
    """MLP encoder -> manifold switch -> Lorentz linear neck; class
    prototypes drive the base pull/push objective, hierarchical proxies the
    regularizer."""

    def __init__(self, cfg: ExperimentConfig, n_classes: int,
                 rng: np.random.Generator):
        dt = cfg.dtype
        self.cfg = cfg
        self.lcfg = layer_config(cfg)
        d, hdim, e = cfg.data_dim, cfg.hidden_dim, cfg.embed_dim
        kraw = math.log(cfg.curvature_init)

        def dense(nin, nout, name):
            w = rng.normal(0.0, math.sqrt(2.0 / nin), (nin, nout)).astype(dt)
            return (ParamSlot(f"{name}.w", EUCLIDEAN, w),
                    ParamSlot(f"{name}.b", EUCLIDEAN, np.zeros(nout, dtype=dt)))

        self.w1, self.b1 = dense(d, hdim, "enc1")
        self.w2, self.b2 = dense(hdim, e, "enc2")
        self.head_manifold = ManifoldHandle("head", e, kappa_raw=kraw, dtype=dt)
        self.neck = LorentzLinear(self.head_manifold, e, self.lcfg, rng=rng, name="neck")
        self.out_manifold = self.neck.manifold_out
        proto_t = rng.normal(0.0, 0.1, (n_classes, e)).astype(dt)
        self.prototypes = ParamSlot("prototypes", LORENTZ,
                                    np.asarray(lmath.expmap0_space(proto_t,
                                                                   self.out_manifold.K)),
                                    manifold=self.out_manifold)
        self.proxies = ProxySet(self.out_manifold, cfg.proxy_count, rng=rng)

    def manifolds(self) -> list[ManifoldHandle]:
        return [self.head_manifold]

    def slots(self) -> list[ParamSlot]:
        return [self.w1, self.b1, self.w2, self.b2] + self.neck.slots() + \
            [self.prototypes, self.proxies.slot]

    def curvature_slots(self) -> list[ParamSlot]:
        return [curvature_slot(m, name=f"kappa_raw.{m.id}") for m in self.manifolds()]

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def load_buffers(self, tensors: dict[str, np.ndarray]) -> None:
        pass

    def embed(self, x, ctx: GraphContext | None = None):
        """x: (B, dim) -> on-manifold embeddings (B, e+1)."""
        def p(slot):
            return ctx.param(slot) if ctx is not None else slot.value

        h = ops.relu(ops.matmul(x, p(self.w1)) + p(self.b1))
        h = ops.matmul(h, p(self.w2)) + p(self.b2)
        K = ctx.K(self.head_manifold) if ctx is not None else self.head_manifold.K
        pts = e2l(h, K, self.lcfg)
        return self.neck.forward_coords(pts, ctx)

    def rescaled(self, slot: ParamSlot, ctx: GraphContext | None = None):
        """Slot points pulled inside the representable radius (paper setup
        rescales proxies before any distance evaluation)."""
        val = ctx.param(slot) if ctx is not None else slot.value
        K = (ctx.K(self.out_manifold) if ctx is not None else self.out_manifold.K)
        if self.lcfg.bypass_rescale:
            return val
        zs = stability.rescale_space(lmath.logmap0_space(val, K), K, self.lcfg.rescale)
        return lmath.expmap0_space(zs, K)

    def base_loss(self, emb, labels: np.ndarray, ctx: GraphContext | None = None):
        """Pull to the own-class prototype, push others past a margin."""
        protos = self.rescaled(self.prototypes, ctx)
        K = (ctx.K(self.out_manifold) if ctx is not None else self.out_manifold.K)
        d = pairwise_dist(emb, protos, K)  # (B, M)
        n, m = ops.data_of(d).shape
        labels = np.asarray(labels)
        own = d[np.arange(n), labels]
        mask = np.ones((n, m), dtype=bool)
        mask[np.arange(n), labels] = False
        others = ops.reshape(d, (-1,))[np.flatnonzero(mask.reshape(-1))]
        push = ops.relu(self.cfg.proto_margin - others)
        return ops.mean_(own * own) + ops.mean_(push * push)
