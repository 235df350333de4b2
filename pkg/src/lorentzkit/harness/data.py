"""Synthetic datasets and the raw image container.

The tree dataset diffuses features down a rooted tree (each child perturbs
its parent), yielding points whose ground-truth metric is the unit-edge tree
distance; labels are the ancestor at a fixed depth. The image dataset places
a class-dependent blob in a corner plus noise, which is linearly separable
at any reasonable noise level.

Raw image files use the LZIM container:
    magic 'LZIM', u32 count, u32 H, u32 W, u32 C (little-endian),
    then count x (u8 label, H*W*C u8 pixels).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CheckpointFormatError, UsageError

_LZIM_MAGIC = b"LZIM"


@dataclass
class TreeDataset:
    features: np.ndarray      # (N, dim)
    labels: np.ndarray        # (N,) int
    tree_dist: np.ndarray     # (N, N) unit-edge path lengths
    parents: np.ndarray       # (N,) parent index, -1 for the root
    depths: np.ndarray        # (N,) root distance in edges


def generate_tree_dataset(depth: int, branching: int, dim: int, noise: float,
                          seed: int, label_depth: int = 1) -> TreeDataset:
    """Deterministic hierarchy: node feature = parent feature + noise step."""
    if depth < 1 or branching < 1:
        raise UsageError("generate_tree_dataset needs depth >= 1 and branching >= 1")
    rng = np.random.default_rng(seed)
    parents = [-1]
    level = [0]
    for _ in range(depth):
        nxt = []
        for node in level:
            for _ in range(branching):
                parents.append(node)
                nxt.append(len(parents) - 1)
        level = nxt
    parents = np.asarray(parents, dtype=np.int64)
    n = len(parents)

    features = np.zeros((n, dim))
    for node in range(1, n):
        features[node] = features[parents[node]] + rng.normal(0.0, 1.0, dim) * noise

    # unit-edge tree metric via ancestor chains
    chains = []
    for node in range(n):
        chain = [node]
        while parents[chain[-1]] >= 0:
            chain.append(int(parents[chain[-1]]))
        chains.append(chain)
    depth_of = np.asarray([len(c) - 1 for c in chains])
    tree_dist = np.zeros((n, n))
    anc_sets = [set(c) for c in chains]
    for a in range(n):
        for b in range(a + 1, n):
            chain = chains[a]
            for up, anc in enumerate(chain):
                if anc in anc_sets[b]:
                    d = up + (depth_of[b] - depth_of[anc])
                    break
            tree_dist[a, b] = tree_dist[b, a] = d

    ld = min(label_depth, depth)
    labels = np.zeros(n, dtype=np.int64)
    for node in range(n):
        chain = chains[node]
        if depth_of[node] < ld:
            labels[node] = node  # shallow nodes label themselves
        else:
            labels[node] = chain[depth_of[node] - ld]
    return TreeDataset(features=features, labels=labels, tree_dist=tree_dist,
                       parents=parents, depths=depth_of)


def generate_blob_images(count: int, size: int, noise: float, seed: int,
                         classes: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """(count, 1, size, size) oriented-stripe images plus noise.

    Classes differ in stripe orientation (and frequency beyond 2 classes),
    so they stay separable under spatial mean pooling; random phases rule
    out constant-pixel shortcuts.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=count)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    imgs = np.zeros((count, 1, size, size))
    for i in range(count):
        c = int(labels[i])
        freq = 2.0 * (1 + c // 2)
        phase = rng.uniform(0, 2 * np.pi)
        coord = yy if c % 2 == 0 else xx
        pattern = np.sin(2 * np.pi * freq * coord / size + phase)
        imgs[i, 0] = 0.5 * pattern + rng.normal(0.0, noise, (size, size))
    return imgs, labels.astype(np.int64)


def write_lzim(path: str | Path, images: np.ndarray, labels: np.ndarray) -> None:
    """Store uint8 images (N, H, W, C) with u8 labels in the LZIM container."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels)
    if images.ndim != 4:
        raise UsageError(f"write_lzim expects (N, H, W, C), got {images.shape}")
    n, h, w, c = images.shape
    with open(path, "wb") as f:
        f.write(_LZIM_MAGIC)
        f.write(struct.pack("<IIII", n, h, w, c))
        for i in range(n):
            f.write(struct.pack("<B", int(labels[i]) & 0xFF))
            f.write(images[i].tobytes())


def read_lzim(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Load an LZIM file -> (images (N, C, H, W) float in [0,1], labels)."""
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != _LZIM_MAGIC:
        raise CheckpointFormatError(f"{path}: not an LZIM file")
    n, h, w, c = struct.unpack("<IIII", data[4:20])
    rec = 1 + h * w * c
    if len(data) != 20 + n * rec:
        raise CheckpointFormatError(f"{path}: truncated LZIM payload "
                                    f"(expected {20 + n * rec} bytes, got {len(data)})")
    labels = np.zeros(n, dtype=np.int64)
    imgs = np.zeros((n, c, h, w))
    off = 20
    for i in range(n):
        labels[i] = data[off]
        px = np.frombuffer(data, dtype=np.uint8, count=h * w * c, offset=off + 1)
        imgs[i] = px.reshape(h, w, c).transpose(2, 0, 1) / 255.0
        off += rec
    return imgs, labels
