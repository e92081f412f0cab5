import numpy as np
import pytest

from embedlab import denoiser as dn
from embedlab import text_encoder as te
from embedlab import toyworld as tw
from embedlab.diffusion import make_schedule
from embedlab.pipeline import ModelBundle

SCHED_META = (100, 1e-3, 0.2)


def make_bundle(enc_params, den_params) -> ModelBundle:
    return ModelBundle(
        world=tw.default_world(),
        vocab=te.default_vocabulary(),
        enc_cfg=te.EncoderConfig(),
        den_cfg=dn.DenoiserConfig(),
        sched=make_schedule(*SCHED_META),
        enc_params=enc_params,
        den_params=den_params,
    )


@pytest.fixture(scope="session")
def trained_bundle():
    """The fully trained model shared by the acceptance criteria.

    Training is deterministic, so every session builds the same weights.
    """
    world = tw.default_world()
    vocab = te.default_vocabulary()
    enc_cfg = te.EncoderConfig()
    den_cfg = dn.DenoiserConfig()
    sched = make_schedule(*SCHED_META)
    tcfg = dn.TrainConfig(seed=7)
    import time
    start = time.time()
    enc_params, den_params, log = dn.train(world, vocab, sched, enc_cfg,
                                           den_cfg, tcfg)
    bundle = make_bundle(enc_params, den_params)
    bundle.train_seconds = time.time() - start
    bundle.final_loss = float(np.mean([l for _, l in log[-5:]]))
    bundle.train_log = log
    return bundle


@pytest.fixture(scope="session")
def untrained_bundle():
    """Random weights; enough for exercising plumbing cheaply."""
    from embedlab.rng import Rng
    vocab = te.default_vocabulary()
    enc_cfg = te.EncoderConfig()
    den_cfg = dn.DenoiserConfig()
    rng = Rng(99)
    return make_bundle(te.init_encoder_params(enc_cfg, vocab.size, rng.split(0)),
                       dn.init_denoiser_params(den_cfg, rng.split(1)))
