"""Optimization of the per-position soft mixing weight lambda.

lambda is parameterized as sigmoid(theta), so it stays strictly inside
(0, 1). The loss couples a directional surrogate of the CLIP loss (cosine
between the image change and the class-pattern change) with a background
preservation term. Gradients come from central finite differences on
theta: only L parameters, and no differentiation through the sampler.
"""

from dataclasses import dataclass

import numpy as np

from .edit_ops import diff_positions, soft_mix
from .pipeline import ModelBundle, seed_noise
from .toyworld import background_mask

INIT_LOGIT = np.log(0.95 / 0.05)  # lambda in {0.05, 0.95} at init
EPS_GUARD = 1e-8


class OptimizationError(RuntimeError):
    """Loss became non-finite during lambda optimization."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class LambdaParams:
    theta: np.ndarray

    def lam(self) -> np.ndarray:
        return sigmoid(self.theta)


@dataclass(frozen=True)
class OptConfig:
    steps: int = 150
    lr: float = 0.5
    gamma: float = 1.0   # preservation weight
    fd_h: float = 1e-3
    seed: int = 0
    max_halvings: int = 5

    def __post_init__(self):
        if self.fd_h <= 0.0:
            raise ValueError("fd step must be positive")
        if self.gamma < 0.0:
            raise ValueError("gamma must be non-negative")


@dataclass
class LambdaContext:
    bundle: ModelBundle
    e_s: object
    e_t: object
    diff: set
    x_T: np.ndarray
    i_s: np.ndarray
    b_s: np.ndarray
    b_t: np.ndarray
    bg: np.ndarray
    gamma: float


def make_context(bundle: ModelBundle, source_text: str, target_text: str,
                 cfg: OptConfig) -> LambdaContext:
    t_s = bundle.tokens(source_text)
    t_t = bundle.tokens(target_text)
    k_s = bundle.class_of_text(source_text)
    k_t = bundle.class_of_text(target_text)
    x_T = seed_noise(cfg.seed)
    e_s = bundle.embed(source_text)
    return LambdaContext(
        bundle=bundle,
        e_s=e_s,
        e_t=bundle.embed(target_text),
        diff=diff_positions(t_s, t_t),
        x_T=x_T,
        i_s=bundle.generate(e_s, x_T),
        b_s=bundle.world.pattern(k_s).ravel(),
        b_t=bundle.world.pattern(k_t).ravel(),
        bg=background_mask(bundle.world, k_s, k_t),
        gamma=cfg.gamma,
    )


def surrogate_loss(lam: np.ndarray, ctx: LambdaContext) -> float:
    """Directional-cosine semantic term plus weighted background term."""
    e_star = soft_mix(ctx.e_s, ctx.e_t, lam)
    i_star = ctx.bundle.generate(e_star, ctx.x_T)
    d = i_star - ctx.i_s
    target_dir = ctx.b_t - ctx.b_s
    denom = (np.sqrt(d @ d) * np.sqrt(target_dir @ target_dir)) + EPS_GUARD
    l_sem = -float(d @ target_dir) / denom
    l_prec = float(np.sum(d[ctx.bg] ** 2))
    return l_sem + ctx.gamma * l_prec


def _theta_loss(theta: np.ndarray, ctx: LambdaContext) -> float:
    return surrogate_loss(sigmoid(theta), ctx)


def fd_gradient(theta: np.ndarray, ctx: LambdaContext, h: float,
                loss_fn=None) -> np.ndarray:
    """Central finite differences on theta, coordinate order fixed."""
    if h <= 0.0:
        raise ValueError("fd step must be positive")
    f = loss_fn if loss_fn is not None else _theta_loss
    g = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp, ctx) - f(tm, ctx)) / (2.0 * h)
    return g


def init_theta(length: int, diff: set) -> np.ndarray:
    """Hard-replace pattern softened to {0.05, 0.95}."""
    theta = np.full(length, INIT_LOGIT)
    for i in diff:
        theta[i] = -INIT_LOGIT
    return theta


def optimize(ctx: LambdaContext, cfg: OptConfig):
    """Gradient descent with backtracking halving; loss never increases."""
    length = ctx.e_s.data.shape[0]
    theta = init_theta(length, ctx.diff)
    loss = _theta_loss(theta, ctx)
    if not np.isfinite(loss):
        raise OptimizationError("non-finite loss at initialization")
    trajectory = [(0, loss, sigmoid(theta).copy())]
    for step in range(1, cfg.steps + 1):
        g = fd_gradient(theta, ctx, cfg.fd_h)
        lr = cfg.lr
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            cand = theta - lr * g
            cand_loss = _theta_loss(cand, ctx)
            if not np.isfinite(cand_loss):
                raise OptimizationError(f"non-finite loss at step {step}")
            if cand_loss <= loss:
                theta, loss = cand, cand_loss
                accepted = True
                break
            lr *= 0.5
        # if no halving helped, keep theta: trajectory stays non-increasing
        trajectory.append((step, loss, sigmoid(theta).copy()))
        if not accepted:
            continue
    return LambdaParams(theta=theta), trajectory


def save_trajectory_csv(path, trajectory) -> None:
    with open(path, "w", encoding="utf-8") as f:
        n = trajectory[0][2].shape[0]
        cols = ",".join(f"lambda_{i}" for i in range(n))
        f.write(f"step,loss,{cols}\n")
        for step, loss, lam in trajectory:
            vals = ",".join(f"{v:.17g}" for v in lam)
            f.write(f"{step},{loss:.17g},{vals}\n")
