"""Ready-made configurations.

`reference_config` mirrors the full-size training recipe; `desk_lengen_config`
is the CPU-budget length-generalization study (tiny models trained on 0.5 s
clips, scored at 0.5 s and 4 s) used by the acceptance suite and
scripts/run_lengen.py.
"""

from __future__ import annotations

from dataclasses import replace

from .config import RunConfig, SynthConfig
from .evaluate import ExperimentConfig, TestSuiteConfig
from .model import ModelConfig
from .training import TrainConfig


def reference_config(seed: int = 0) -> RunConfig:
    """Full-size settings: N=4, H=8, d_model=256, d_ff=1024, 1 s clips,
    40k warmup steps. Not meant to be trained on a laptop CPU."""
    cfg = RunConfig(seed=seed)
    return cfg


def desk_lengen_config(seed: int = 0) -> RunConfig:
    """Small-budget length-generalization experiment.

    Trains N=2 / d_model=32 / H=4 models on 0.5 s clips and evaluates at the
    training length and at 8x that length, full-length and chunked.
    """
    cfg = RunConfig(seed=seed)
    cfg.model = replace(
        cfg.model, n_layers=2, n_heads=4, d_model=32, d_ff=128,
        target="irm", pe_kind="learnlin")
    cfg.train = replace(
        cfg.train, clip_len_s=0.5, batch_utts=10, epochs=10000,
        max_steps=2500, w_steps=250, seed=cfg.train.seed)
    cfg.synth = SynthConfig(n_utts=12, dur_s=1.0)
    cfg.suite = TestSuiteConfig(durations_s=(0.5, 4.0), snrs_db=(-5, 0, 5),
                                utts_per_condition=10)
    cfg.experiment = ExperimentConfig(
        kinds=("nopos", "sinusoidal", "learnlin"), modes=("full", "seg", "seg-o"),
        chunk_s=0.0, train_utts=12, train_utt_dur_s=1.0)
    return cfg


def gradcheck_model(pe_kind: str, target: str) -> ModelConfig:
    """Smallest config whose gradients are still representative."""
    return ModelConfig(n_layers=1, n_heads=2, d_model=8, d_ff=16, k_bins=9,
                       pe_kind=pe_kind, target=target, bertpos_max_len=8,
                       bertpos_hard_cap=64)


def smoke_train_config(seed: int = 0, steps: int = 200) -> TrainConfig:
    return TrainConfig(clip_len_s=0.5, batch_utts=2, epochs=10000,
                       max_steps=steps, w_steps=max(1, steps // 10), seed=seed)
