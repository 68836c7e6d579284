"""Shared fixtures: the toy-scale trained pipeline used by the acceptance
criteria and the measured-behavior tests. Built once per session."""

import time

import numpy as np
import pytest

from previvor import huecorr, lumen
from previvor.corpus import SynthConfig, build_training_corpus, synthesize_pair
from previvor.degrade import DegradationSamplerConfig
from previvor.imagecore import lab_to_rgb

SEED = 0
HELDOUT_SEED = 1000
LINEAR_ONLY = DegradationSamplerConfig(curve_pool=(), mode_probability=0.0)


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    manifest = build_training_corpus(SynthConfig(), 24, LINEAR_ONLY, root / "corpus", seed=SEED)

    lcfg = lumen.toy_lumen_config(seed=SEED, iterations=200)
    t0 = time.time()
    shared, _, _, log_shared = lumen.train_vae_shared(lcfg, manifest)
    nd, _, log_nd = lumen.train_vae_nd(lcfg, manifest)
    lumen.freeze(shared)
    lumen.freeze(nd)
    mapping, _, log_mapping = lumen.train_mapping(lcfg, manifest, shared, nd)
    lumen_seconds = time.time() - t0

    hcfg = huecorr.toy_hue_config(seed=SEED, iterations=200)
    t0 = time.time()
    net, _, log_hue = huecorr.train_hue(hcfg, manifest)
    hue_seconds = time.time() - t0

    return {
        "manifest": manifest,
        "lumen_config": lcfg,
        "hue_config": hcfg,
        "lumen_bundle": lumen.LumenBundle(shared=shared, nd=nd, mapping=mapping, config=lcfg),
        "hue_bundle": huecorr.HueBundle(net=net, config=hcfg),
        "logs": {
            "vae_shared": log_shared,
            "vae_nd": log_nd,
            "mapping": log_mapping,
            "hue": log_hue,
        },
        "lumen_seconds": lumen_seconds,
        "hue_seconds": hue_seconds,
    }


@pytest.fixture(scope="session")
def heldout_results(pipeline):
    lb, hb = pipeline["lumen_bundle"], pipeline["hue_bundle"]
    rows = []
    for i in range(20):
        rng = np.random.default_rng([HELDOUT_SEED, i])
        clean, degraded, _, _ = synthesize_pair(SynthConfig(), LINEAR_ONLY, rng)
        restored = huecorr.restore_painting(degraded, lb, hb)
        rows.append(
            {
                "clean": clean,
                "degraded_lab": degraded,
                "gt": lab_to_rgb(clean),
                "degraded": lab_to_rgb(degraded),
                "restored_result": restored,
                "restored": restored.rgb,
            }
        )
    return rows
