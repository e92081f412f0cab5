"""Singular-vector semantic directions of a text embedding.

A right singular vector v compresses the L x D embedding to a single
column e@v; a left singular vector u compresses it to a single row u@e.
Broadcasting the compressed vector back over the embedding and adding it
(scaled by a strength) produces a semantically shifted embedding. The SVD
is taken over the full embedding, PAD rows included.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import svd
from .pipeline import ModelBundle, seed_noise
from .text_encoder import TextEmbedding
from .toyworld import oracle_classify, oracle_style

DEFAULT_STRENGTHS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class DirectionSpec:
    side: str        # "right" or "left"
    index: int
    strength: float


def compress(e: TextEmbedding, side: str, k: int) -> np.ndarray:
    """e@v_k (length L) for the right side, u_k@e (length D) for the left."""
    l, d = e.data.shape
    if not 0 <= k < min(l, d):
        raise ValueError(f"singular index {k} out of range")
    f = svd(e.data)
    if side == "right":
        return e.data @ f.vt[k, :]
    if side == "left":
        return f.u[:, k] @ e.data
    raise ValueError(f"unknown side {side!r}")


def semantic_shift(e: TextEmbedding, spec: DirectionSpec) -> TextEmbedding:
    c = compress(e, spec.side, spec.index)
    if spec.side == "right":
        out = e.data + spec.strength * c[:, None]
    else:
        out = e.data + spec.strength * c[None, :]
    return TextEmbedding(data=out, semantic_len=e.semantic_len)


@dataclass(frozen=True)
class SweepPoint:
    strength: float
    class_index: int
    style: float
    delta_l2: float
    image: np.ndarray


def direction_sweep(bundle: ModelBundle, text: str, side: str, k: int,
                    strengths=DEFAULT_STRENGTHS, seed: int = 0):
    """Generate along one direction with shared x_T.

    Raw strengths are divided by sqrt(D) so the Frobenius magnitude of a
    right-vector shift is sigma_k * |s|, comparable across k.
    """
    e = bundle.embed(text)
    d = e.data.shape[1]
    x_T = seed_noise(seed)
    base = bundle.generate(e, x_T)
    points = []
    for s in strengths:
        if s == 0.0:
            img = base
        else:
            shifted = semantic_shift(e, DirectionSpec(side, k, s / np.sqrt(d)))
            img = bundle.generate(shifted, x_T)
        cls, _ = oracle_classify(bundle.world, img)
        points.append(SweepPoint(
            strength=s,
            class_index=cls,
            style=oracle_style(bundle.world, img, cls),
            delta_l2=float(np.sqrt(np.sum((img - base) ** 2))),
            image=img,
        ))
    return points


def save_sweep_csv(path, side: str, k: int, points) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("side,k,s,class,style,delta_l2\n")
        for p in points:
            f.write(f"{side},{k},{p.strength:.17g},{p.class_index},"
                    f"{p.style:.17g},{p.delta_l2:.17g}\n")
