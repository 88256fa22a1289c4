"""Session-scoped toy corpus and pipeline runs shared by the slow tests.

The configuration below is the frozen reference setup for the end-to-end
suite: a 16-unit codebook, a small 2-layer normalizer at frame rate
(downsample 1), three fine-tuning stages with dense speed and noise
augmentation, and a bridge-speaker stage 2. Gate thresholds in the
acceptance tests were fixed from this configuration's reference run.
"""

import time

import pytest

from unitdsr.config import load_config
from unitdsr.pipeline import run_pipeline
from unitdsr.synth import make_toy_corpus

TOY_AUG_RATIOS = "0.75,0.8,0.85,0.9,1.1,1.2,1.3,1.4,1.45,1.5,1.55,1.6,1.65,1.7"
TOY_AUG_SNRS = "35,30,25,20,15,12,10"

TOY_OVERRIDES = {
    "global.seed": "0",
    "codebook.k": "16",
    "normalizer.layers": "2",
    "normalizer.width": "128",
    "normalizer.heads": "4",
    "normalizer.downsample": "1",
    "normalizer.stage1.max_updates": "4000",
    "normalizer.stage1.learning_rate": "1e-3",
    "normalizer.stage1.random_speakers": "SPK1",
    "normalizer.stage2.max_updates": "2000",
    "normalizer.stage2.learning_rate": "1e-3",
    "normalizer.stage2.random_speakers": "SPK1,SPK2",
    "normalizer.stage3.max_updates": "1000",
    "normalizer.stage3.learning_rate": "1e-3",
}
for _s in (1, 2, 3):
    TOY_OVERRIDES[f"normalizer.stage{_s}.aug_speed_ratios"] = TOY_AUG_RATIOS
    TOY_OVERRIDES[f"normalizer.stage{_s}.aug_snr_db"] = TOY_AUG_SNRS


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_corpus")
    return make_toy_corpus(root, repetitions=3)


@pytest.fixture(scope="session")
def toy_config():
    return load_config(overrides=TOY_OVERRIDES)


@pytest.fixture(scope="session")
def toy_runs(toy_manifest, toy_config, tmp_path_factory):
    """Full ablation suite: stage chains 1+2+3, 1+3, and 1 alone.

    Chains share one output directory so the stage-1 checkpoint trains
    once and is reused; returns (results-by-chain, wall seconds).
    """
    out = tmp_path_factory.mktemp("toy_out")
    t0 = time.perf_counter()
    results = {
        stages: run_pipeline(toy_config, toy_manifest, out, stages=stages)
        for stages in ((1, 2, 3), (1, 3), (1,))
    }
    return results, time.perf_counter() - t0
