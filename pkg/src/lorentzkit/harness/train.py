"""Training loops: classification, metric learning, tree embedding, and the
optimizer-ordering stability contrast.

All loops are deterministic for a fixed config + seed + thread count: data,
shuffles and miners run off seeded generators, and the metrics CSV carries
wall-clock seconds only when timing is enabled. A non-finite loss aborts the
run with the offending epoch/step in the diagnostic.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .. import lhier, lmath
from ..engine import ops
from ..engine.node import backward
from ..errors import NumericError, UsageError
from ..manifold import ManifoldHandle
from ..optimizers import CurvatureAwareOptimizer, OptimizerConfig
from ..params import LORENTZ, GraphContext, ParamSlot, curvature_slot
from .config import ExperimentConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import generate_blob_images, generate_tree_dataset, read_lzim
from .metrics import MetricsLog
from .models import ClassifyNet, MetricNet, cross_entropy


def optimizer_config(cfg: ExperimentConfig) -> OptimizerConfig:
    return OptimizerConfig(lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                           weight_decay=cfg.weight_decay, momentum=cfg.momentum,
                           curvature_lr_scale=cfg.curvature_lr_scale,
                           clip_norm=cfg.clip_norm if cfg.clip_norm > 0 else None)


def _check_loss(value: float, epoch: int, step: int, what: str) -> None:
    if not np.isfinite(value):
        raise NumericError(f"{what}: non-finite loss {value!r} at epoch {epoch}, "
                           f"step {step}; aborting")


def _state_tensors(model, slots) -> dict[str, np.ndarray]:
    out = {s.name: s.value for s in slots}
    out.update(model.buffers())
    return out


def _restore(model, slots, tensors: dict[str, np.ndarray]) -> None:
    for s in slots:
        if s.name not in tensors:
            raise UsageError(f"checkpoint is missing tensor {s.name!r}")
        s.value[...] = tensors[s.name].reshape(s.value.shape)
    model.load_buffers(tensors)


def _log_curvatures(log: MetricsLog, epoch: int, manifolds) -> None:
    for m in manifolds:
        log.add(epoch, "train", f"K.{m.id}", m.K)


def _classify_data(cfg: ExperimentConfig):
    if cfg.dataset_path:
        imgs, labels = read_lzim(cfg.dataset_path)
        n_test = max(1, len(imgs) * cfg.test_count // max(1, cfg.train_count + cfg.test_count))
        return (imgs[:-n_test], labels[:-n_test], imgs[-n_test:], labels[-n_test:])
    total = cfg.train_count + cfg.test_count
    imgs, labels = generate_blob_images(total, cfg.image_size, cfg.image_noise,
                                        cfg.seed, classes=cfg.class_count)
    return (imgs[:cfg.train_count], labels[:cfg.train_count],
            imgs[cfg.train_count:], labels[cfg.train_count:])


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((np.argmax(logits, axis=1) == labels).mean())


def _refresh_bn_stats(model, x: np.ndarray, batch_size: int, passes: int = 3) -> None:
    """Settle batch-norm running statistics under the final parameters.

    Desk-scale runs take few optimizer steps per epoch, so momentum-averaged
    statistics lag the (fast-moving) parameters badly; a few forward passes
    in training mode with frozen weights re-estimate them deterministically.
    """
    n = len(x)
    for _ in range(passes):
        for lo in range(0, n, batch_size):
            xb = x[lo:lo + batch_size]
            if len(xb) < 2:  # batch norm needs two points in training mode
                continue
            model.forward(xb, ctx=None, training=True)


def train_classify(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.dtype
    xtr, ytr, xte, yte = _classify_data(cfg)
    xtr, xte = xtr.astype(dt), xte.astype(dt)
    model = ClassifyNet(cfg, rng)
    slots = model.slots()
    cur = [] if cfg.fixed_curve else model.curvature_slots()
    opt = CurvatureAwareOptimizer(slots + cur, family=cfg.optimizer,
                                  cfg=optimizer_config(cfg),
                                  naive=cfg.naive_curvature_optim)
    log = MetricsLog(cfg.timing)
    n = len(xtr)
    bs = min(cfg.batch_size, n)
    summary: dict = {}
    plateau_epoch = -1
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        tot_loss = 0.0
        tot_correct = 0.0
        for step, lo in enumerate(range(0, n, bs)):
            idx = order[lo:lo + bs]
            if len(idx) < 2:  # drop a size-1 remnant (batch norm needs pairs)
                continue
            ctx = GraphContext(training=True)
            logits = model.forward(xtr[idx], ctx, training=True)
            loss = cross_entropy(logits, ytr[idx])
            _check_loss(float(loss.data), epoch, step, "train_classify")
            backward(loss)
            ctx.collect_grads(slots + cur)
            opt.step()
            tot_loss += float(loss.data) * len(idx)
            tot_correct += _accuracy(ops.data_of(logits), ytr[idx]) * len(idx)
        dtsec = time.perf_counter() - t0
        log.add(epoch, "train", "loss", tot_loss / n, dtsec)
        log.add(epoch, "train", "accuracy", tot_correct / n, dtsec)
        if plateau_epoch < 0 and tot_correct / n >= 0.99:
            plateau_epoch = epoch
        test_logits = model.forward(xte, ctx=None, training=False)
        test_acc = _accuracy(np.asarray(test_logits), yte)
        log.add(epoch, "test", "accuracy", test_acc, dtsec)
        _log_curvatures(log, epoch, model.manifolds())
        summary = {"train_accuracy": tot_correct / n, "test_accuracy": test_acc,
                   "loss": tot_loss / n,
                   "curvatures": {m.id: m.K for m in model.manifolds()}}
    _refresh_bn_stats(model, xtr, bs)
    summary["train_accuracy"] = _accuracy(
        np.asarray(model.forward(xtr, ctx=None, training=False)), ytr)
    test_logits = model.forward(xte, ctx=None, training=False)
    summary["test_accuracy"] = _accuracy(np.asarray(test_logits), yte)
    log.add(cfg.epochs, "train", "accuracy", summary["train_accuracy"])
    log.add(cfg.epochs, "test", "accuracy", summary["test_accuracy"])
    # epochs until the training accuracy plateaued (informational, not gated)
    log.add(cfg.epochs, "train", "epochs_to_plateau", float(plateau_epoch))
    summary["epochs_to_plateau"] = plateau_epoch
    log.write(out_dir / "metrics.csv")
    save_checkpoint(out_dir / "model.lzkt",
                    _state_tensors(model, slots + model.curvature_slots()))
    summary["out_dir"] = str(out_dir)
    return summary


def eval_classify(cfg: ExperimentConfig, checkpoint: str | Path,
                  out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    rng = np.random.default_rng(cfg.seed)
    _, _, xte, yte = _classify_data(cfg)
    xte = xte.astype(cfg.dtype)
    model = ClassifyNet(cfg, rng)
    slots = model.slots() + model.curvature_slots()
    res = load_checkpoint(checkpoint, dtype=cfg.dtype)
    _restore(model, slots, res.tensors)
    logits = model.forward(xte, ctx=None, training=False)
    acc = _accuracy(np.asarray(logits), yte)
    log = MetricsLog(cfg.timing)
    log.add(0, "test", "accuracy", acc)
    _log_curvatures(log, 0, model.manifolds())
    log.write(out_dir / "eval.csv")
    return {"test_accuracy": acc, "warnings": res.warnings}


def train_metric(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.dtype
    tree = generate_tree_dataset(cfg.tree_depth, cfg.tree_branching, cfg.data_dim,
                                 cfg.data_noise, cfg.seed, cfg.label_depth)
    # shallow nodes carry singleton labels (no possible retrieval hit); the
    # metric task trains and scores on the full-depth population
    keep = tree.depths >= min(cfg.label_depth, cfg.tree_depth)
    x = tree.features[keep].astype(dt)
    classes, y = np.unique(tree.labels[keep], return_inverse=True)
    model = MetricNet(cfg, len(classes), rng)
    slots = model.slots()
    cur = [] if cfg.fixed_curve else model.curvature_slots()
    opt = CurvatureAwareOptimizer(slots + cur, family=cfg.optimizer,
                                  cfg=optimizer_config(cfg),
                                  naive=cfg.naive_curvature_optim)
    log = MetricsLog(cfg.timing)
    summary: dict = {}
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        ctx = GraphContext(training=True)
        emb = model.embed(x, ctx)
        loss = model.base_loss(emb, y, ctx)
        if cfg.lhier:
            K = ctx.K(model.out_manifold)
            batch = lhier.mine_triplets(ops.data_of(emb), model.out_manifold.K,
                                        cfg.knn_k, seed=cfg.miner_seed + epoch,
                                        margin=cfg.margin_delta)
            proxies = model.rescaled(model.proxies.slot, ctx)
            loss = loss + cfg.lhier_weight * lhier.lhier_loss(batch, emb, proxies, K)
        _check_loss(float(loss.data), epoch, 0, "train_metric")
        backward(loss)
        ctx.collect_grads(slots + cur)
        opt.step()
        dtsec = time.perf_counter() - t0
        emb_eval = np.asarray(model.embed(x, ctx=None))
        recalls = {k: lhier.recall_at_k(emb_eval, y, k, model.out_manifold.K)
                   for k in (1, 2, 4)}
        log.add(epoch, "train", "loss", float(loss.data), dtsec)
        for k, v in recalls.items():
            log.add(epoch, "train", f"recall@{k}", v, dtsec)
        _log_curvatures(log, epoch, model.manifolds())
        summary = {"loss": float(loss.data), "recalls": recalls,
                   "curvatures": {m.id: m.K for m in model.manifolds()}}
    log.write(out_dir / "metrics.csv")
    save_checkpoint(out_dir / "model.lzkt",
                    _state_tensors(model, slots + model.curvature_slots()))
    summary["out_dir"] = str(out_dir)
    return summary


def eval_metric(cfg: ExperimentConfig, checkpoint: str | Path,
                out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    rng = np.random.default_rng(cfg.seed)
    tree = generate_tree_dataset(cfg.tree_depth, cfg.tree_branching, cfg.data_dim,
                                 cfg.data_noise, cfg.seed, cfg.label_depth)
    keep = tree.depths >= min(cfg.label_depth, cfg.tree_depth)
    x = tree.features[keep].astype(cfg.dtype)
    classes, y = np.unique(tree.labels[keep], return_inverse=True)
    model = MetricNet(cfg, len(classes), rng)
    slots = model.slots() + model.curvature_slots()
    res = load_checkpoint(checkpoint, dtype=cfg.dtype)
    _restore(model, slots, res.tensors)
    emb = np.asarray(model.embed(x, ctx=None))
    recalls = {k: lhier.recall_at_k(emb, y, k, model.out_manifold.K) for k in (1, 2, 4)}
    log = MetricsLog(cfg.timing)
    for k, v in recalls.items():
        log.add(0, "test", f"recall@{k}", v)
    log.write(out_dir / "eval.csv")
    return {"recalls": recalls, "warnings": res.warnings}


# -- tree embedding and the stability contrast ---------------------------------

def _tree_embedding_setup(cfg: ExperimentConfig, rng: np.random.Generator):
    tree = generate_tree_dataset(cfg.tree_depth, cfg.tree_branching, cfg.data_dim,
                                 cfg.data_noise, cfg.seed, cfg.label_depth)
    n = len(tree.labels)
    dt = cfg.dtype
    h = ManifoldHandle("tree", cfg.embed_dim, kappa_raw=float(np.log(cfg.curvature_init)),
                       dtype=dt)
    init = rng.normal(0.0, 0.05, (n, cfg.embed_dim)).astype(dt)
    emb = ParamSlot("embeddings", LORENTZ, np.asarray(lmath.expmap0_space(init, h.K)),
                    manifold=h)
    target = (tree.tree_dist * cfg.tree_edge_length).astype(dt)
    iu = np.triu_indices(n, k=1)
    return tree, h, emb, target, iu


def _stress_loss(emb_node, target, iu, K):
    d = lhier.pairwise_dist(emb_node, emb_node, K)
    diffs = d[iu] - target[iu]
    return ops.mean_(diffs * diffs)


def embed_tree(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    rng = np.random.default_rng(cfg.seed)
    tree, h, emb, target, iu = _tree_embedding_setup(cfg, rng)
    cur = [] if cfg.fixed_curve else [curvature_slot(h, name=f"kappa_raw.{h.id}")]
    opt = CurvatureAwareOptimizer([emb] + cur, family=cfg.optimizer,
                                  cfg=optimizer_config(cfg),
                                  naive=cfg.naive_curvature_optim)
    log = MetricsLog(cfg.timing)
    worst_residual = 0.0
    summary: dict = {}
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        ctx = GraphContext(training=True)
        en = ctx.param(emb)
        loss = _stress_loss(en, target, iu, ctx.K(h))
        _check_loss(float(loss.data), epoch, 0, "embed_tree")
        backward(loss)
        ctx.collect_grads([emb] + cur)
        opt.step()
        res = float(lmath.residual(emb.value, h.K).max())
        worst_residual = max(worst_residual, res)
        dtsec = time.perf_counter() - t0
        d = np.asarray(lhier.pairwise_dist(emb.value, emb.value, h.K))
        distortion = float(np.mean(np.abs(d[iu] / np.maximum(target[iu], 1e-9) - 1.0)))
        log.add(epoch, "train", "loss", float(loss.data), dtsec)
        log.add(epoch, "train", "distortion", distortion, dtsec)
        log.add(epoch, "train", "constraint_residual", res, dtsec)
        _log_curvatures(log, epoch, [h])
        summary = {"loss": float(loss.data), "distortion": distortion,
                   "max_residual": worst_residual, "K": h.K}
    log.write(out_dir / "metrics.csv")
    save_checkpoint(out_dir / "model.lzkt", {emb.name: emb.value,
                                             f"kappa_raw.{h.id}": h.kappa_raw})
    summary["out_dir"] = str(out_dir)
    return summary


def stability_run(cfg: ExperimentConfig, steps: int, naive: bool) -> dict:
    """Joint embedding + curvature steps; tracks constraint residuals.

    The ordered schema keeps residuals at roundoff; the naive path (curvature
    first, stale updates, no moves) accumulates violations or diverges. Both
    run the same seed and data.
    """
    rng = np.random.default_rng(cfg.seed)
    tree, h, emb, target, iu = _tree_embedding_setup(cfg, rng)
    cur = [curvature_slot(h, name=f"kappa_raw.{h.id}")]
    opt = CurvatureAwareOptimizer([emb] + cur, family=cfg.optimizer,
                                  cfg=optimizer_config(cfg), naive=naive)
    residuals = []
    finite = True
    for step in range(steps):
        try:
            # the naive branch is expected to overflow; keep numpy quiet and
            # let the engine's finite checks surface the failure
            with np.errstate(all="ignore"):
                ctx = GraphContext(training=True)
                en = ctx.param(emb)
                loss = _stress_loss(en, target, iu, ctx.K(h))
                if not np.isfinite(float(loss.data)):
                    finite = False
                    break
                backward(loss)
                ctx.collect_grads([emb] + cur)
                opt.step()
        except NumericError:
            finite = False
            break
        if not (np.all(np.isfinite(emb.value)) and np.isfinite(h.K)):
            finite = False
            break
        with np.errstate(all="ignore"):  # huge-but-finite values may overflow here
            residuals.append(float(lmath.residual(emb.value, h.K).max()))
    return {"finite": finite, "residuals": residuals,
            "max_residual": max(residuals) if residuals else float("inf"),
            "K": h.K if np.isfinite(h.K) else float("nan"),
            "steps_completed": len(residuals)}
