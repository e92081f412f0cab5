"""Trained-model bundle and conditional generation helpers."""

from dataclasses import dataclass

import numpy as np

from . import denoiser as dn
from . import text_encoder as te
from .diffusion import Schedule, ddim_invert, sample
from .rng import Rng
from .toyworld import CLAMP_HI, CLAMP_LO, IMAGE_DIM, WorldSpec


@dataclass
class ModelBundle:
    world: WorldSpec
    vocab: te.Vocabulary
    enc_cfg: te.EncoderConfig
    den_cfg: dn.DenoiserConfig
    sched: Schedule
    enc_params: dict
    den_params: dict

    def embed(self, text: str) -> te.TextEmbedding:
        tokens = te.tokenize(self.vocab, text, self.enc_cfg.max_len)
        return te.encode(self.enc_params, self.enc_cfg, tokens)

    def tokens(self, text: str) -> te.TokenSeq:
        return te.tokenize(self.vocab, text, self.enc_cfg.max_len)

    def predictor(self, emb, mask: dn.AttnMask | None = None):
        def predict(x, t):
            return dn.predict_eps(self.den_params, self.den_cfg, x, t, emb, mask)
        return predict

    def generate(self, emb, x_T: np.ndarray,
                 mask: dn.AttnMask | None = None,
                 mode: str = "ddim", rng: Rng | None = None) -> np.ndarray:
        """Generate one image; x0 estimates are clamped to the data range."""
        return sample(self.sched, self.predictor(emb, mask), x_T,
                      mode=mode, rng=rng, clip_x0=(CLAMP_LO, CLAMP_HI))

    def generate_batch(self, emb, x_T: np.ndarray,
                       mask: dn.AttnMask | None = None) -> np.ndarray:
        """Deterministic DDIM generation for many x_T rows at once.

        One conditioning embedding, S starting noises: x_T is (S, x_dim).
        """
        data = emb.data if isinstance(emb, te.TextEmbedding) else np.asarray(emb)
        s = x_T.shape[0]
        emb_b = np.broadcast_to(data, (s,) + data.shape)
        allowed = (mask.allowed if mask is not None
                   else np.ones(data.shape[0], dtype=bool))
        allowed_b = np.broadcast_to(allowed, (s, data.shape[0]))
        x = np.asarray(x_T, dtype=np.float64).copy()
        sched = self.sched
        for t in range(sched.T, 0, -1):
            eps_hat = dn.forward_batch(self.den_params, self.den_cfg, x,
                                       np.full(s, float(t)), emb_b, allowed_b)
            ab = sched.alpha_bar(t)
            x0_hat = np.clip((x - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab),
                             CLAMP_LO, CLAMP_HI)
            ab_prev = sched.alpha_bar(t - 1)
            x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat
        return x

    def regenerate(self, emb, x_T: np.ndarray,
                   mask: dn.AttnMask | None = None) -> np.ndarray:
        """Deterministic DDIM regeneration from an inverted latent.

        Unlike generate(), the intermediate x0 estimate is not clamped:
        inversion solves the exact (unclamped) update, and along an inverted
        trajectory the estimate legitimately leaves the data range at high
        noise levels, so clamping would break the bijection and the round
        trip regenerate(invert(x0)) would no longer retrace x0.
        """
        return sample(self.sched, self.predictor(emb, mask), x_T,
                      mode="ddim", clip_x0=None)

    def invert(self, emb, x0: np.ndarray,
               mask: dn.AttnMask | None = None) -> np.ndarray:
        return ddim_invert(self.sched, self.predictor(emb, mask), x0)

    def class_of_text(self, text: str) -> int:
        words = set(text.split())
        for i, (name, _) in enumerate(self.world.classes):
            if name in words:
                return i
        raise ValueError(f"no class word in {text!r}")


def seed_noise(seed: int, n: int = IMAGE_DIM) -> np.ndarray:
    """The shared x_T for a given seed (stream 0 of the seed's generator)."""
    return Rng(seed).split(0).normal(n)
