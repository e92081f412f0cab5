"""DDPM forward/reverse mathematics and deterministic DDIM sampling/inversion.

Conventions: steps are 1-based (t = 1..T) with arrays stored 0-based and
the boundary value alpha_bar_0 := 1, which makes the step-1 posterior
variance exactly zero. The last reverse step returns the posterior mean.
"""

from dataclasses import dataclass

import numpy as np

from .rng import Rng


@dataclass(frozen=True)
class Schedule:
    alphas: np.ndarray         # alpha_t, index t-1
    alpha_bars: np.ndarray     # running products
    posterior_var: np.ndarray  # beta-tilde_t

    @property
    def T(self) -> int:
        return self.alphas.shape[0]

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t with the alpha_bar_0 = 1 convention."""
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    variance: float


def make_schedule(T: int, beta_start: float, beta_end: float,
                  allow_zero_beta: bool = False) -> Schedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    lo = 0.0 if allow_zero_beta else np.nextafter(0.0, 1.0)
    if not (lo <= beta_start <= beta_end < 1.0):
        raise ValueError(f"bad beta range ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    with np.errstate(invalid="ignore", divide="ignore"):
        post = np.where(
            alpha_bars < 1.0,
            (1.0 - prev) / (1.0 - alpha_bars) * (1.0 - alphas),
            0.0,
        )
    return Schedule(alphas=alphas, alpha_bars=alpha_bars, posterior_var=post)


def _check_t(sched: Schedule, t: int) -> None:
    if not 1 <= t <= sched.T:
        raise ValueError(f"step {t} outside 1..{sched.T}")


def forward_step(sched: Schedule, x_prev: np.ndarray, t: int, rng: Rng) -> np.ndarray:
    """One draw from q(x_t | x_{t-1})."""
    _check_t(sched, t)
    a = sched.alphas[t - 1]
    return np.sqrt(a) * x_prev + np.sqrt(1.0 - a) * rng.normal(x_prev.shape)


def marginal_params(sched: Schedule, x0: np.ndarray, t: int) -> GaussianParams:
    """Closed-form q(x_t | x_0)."""
    _check_t(sched, t)
    ab = sched.alpha_bar(t)
    return GaussianParams(mean=np.sqrt(ab) * np.asarray(x0), variance=1.0 - ab)


def posterior_params(sched: Schedule, x_t, x0, t: int) -> GaussianParams:
    """q(x_{t-1} | x_t, x_0)."""
    _check_t(sched, t)
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t - 1)
    a_t = sched.alphas[t - 1]
    if ab_t >= 1.0:
        raise ZeroDivisionError("posterior undefined: alpha_bar_t == 1")
    c0 = np.sqrt(ab_prev) * (1.0 - a_t) / (1.0 - ab_t)
    ct = np.sqrt(a_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = c0 * np.asarray(x0) + ct * np.asarray(x_t)
    return GaussianParams(mean=mean, variance=float(sched.posterior_var[t - 1]))


def eps_to_x0(sched: Schedule, x_t, eps_hat, t: int) -> np.ndarray:
    _check_t(sched, t)
    ab = sched.alpha_bar(t)
    if ab <= 0.0:
        raise ZeroDivisionError("alpha_bar_t == 0")
    return (np.asarray(x_t) - np.sqrt(1.0 - ab) * np.asarray(eps_hat)) / np.sqrt(ab)


def ddpm_reverse_step(sched: Schedule, x_t, eps_hat, t: int, rng: Rng) -> np.ndarray:
    """Stochastic ancestral step; deterministic (mean) at t=1."""
    x0_hat = eps_to_x0(sched, x_t, eps_hat, t)
    post = posterior_params(sched, x_t, x0_hat, t)
    if t == 1 or post.variance == 0.0:
        return post.mean
    return post.mean + np.sqrt(post.variance) * rng.normal(post.mean.shape)


def ddim_step(sched: Schedule, x_t, eps_hat, t: int) -> np.ndarray:
    """Deterministic (eta=0) update x_t -> x_{t-1}."""
    x0_hat = eps_to_x0(sched, x_t, eps_hat, t)
    ab_prev = sched.alpha_bar(t - 1)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * np.asarray(eps_hat)


def ddim_invert_step(sched: Schedule, x_prev, eps_hat, t: int) -> np.ndarray:
    """Algebraic inverse of ddim_step for the same eps_hat."""
    _check_t(sched, t)
    ab_prev = sched.alpha_bar(t - 1)
    ab_t = sched.alpha_bar(t)
    x_prev = np.asarray(x_prev)
    eps_hat = np.asarray(eps_hat)
    x0_hat = (x_prev - np.sqrt(1.0 - ab_prev) * eps_hat) / np.sqrt(ab_prev)
    return np.sqrt(ab_t) * x0_hat + np.sqrt(1.0 - ab_t) * eps_hat


def l1_objective(eps_true, eps_pred) -> float:
    """Mean absolute error over every coordinate (batch-mean convention)."""
    a = np.asarray(eps_true)
    b = np.asarray(eps_pred)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def sample(sched: Schedule, predict_eps, x_T: np.ndarray,
           mode: str = "ddim", rng: Rng | None = None,
           clip_x0: tuple | None = None) -> np.ndarray:
    """Run the full reverse chain from a given x_T.

    predict_eps(x_t, t) supplies the conditional noise estimate; the
    conditioning embedding and attention mask are closed over by the caller.
    clip_x0, when given, clamps the intermediate x0 estimate to that range
    at every step (the usual clip-denoised stabilization; without it an
    imperfect predictor's errors compound geometrically along the chain).
    """
    if mode not in ("ddim", "ddpm"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "ddpm" and rng is None:
        raise ValueError("ddpm mode needs an rng")
    x = np.asarray(x_T, dtype=np.float64)
    for t in range(sched.T, 0, -1):
        eps_hat = predict_eps(x, t)
        x0_hat = eps_to_x0(sched, x, eps_hat, t)
        if clip_x0 is not None:
            x0_hat = np.clip(x0_hat, clip_x0[0], clip_x0[1])
        ab_prev = sched.alpha_bar(t - 1)
        if mode == "ddim":
            x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat
        else:
            post = posterior_params(sched, x, x0_hat, t)
            if t == 1 or post.variance == 0.0:
                x = post.mean
            else:
                x = post.mean + np.sqrt(post.variance) * rng.normal(post.mean.shape)
    return x


def ddim_invert(sched: Schedule, predict_eps, x0: np.ndarray,
                fp_iters: int = 8, fp_tol: float = 1e-12) -> np.ndarray:
    """Deterministic inversion x_0 -> x_T.

    The sampling step maps x_t -> x_{t-1} using eps(x_t, t), so its inverse
    is implicit in x_t. Each step solves that implicit equation by
    fixed-point iteration: start from the first-order guess that re-predicts
    the noise at the coarser state x_{t-1}, then repeatedly re-predict at
    the current candidate x_t and recompute the algebraic inverse until the
    candidate stabilizes (or fp_iters is exhausted). At the fixed point the
    sampling step applied to x_t reproduces x_{t-1} exactly, so errors do
    not accumulate along the chain the way they do under the plain
    first-order rule.
    """
    x = np.asarray(x0, dtype=np.float64)
    for t in range(1, sched.T + 1):
        eps_hat = predict_eps(x, t)
        cand = ddim_invert_step(sched, x, eps_hat, t)
        for _ in range(fp_iters):
            eps_hat = predict_eps(cand, t)
            nxt = ddim_invert_step(sched, x, eps_hat, t)
            done = np.max(np.abs(nxt - cand)) < fp_tol
            cand = nxt
            if done:
                break
        x = cand
    return x
