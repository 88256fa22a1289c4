"""Dysarthric speech reconstruction with discrete speech units.

A desk-scale pipeline: K-means unit codec over frame features, a CTC
speech unit normalizer fine-tuned in three stages, a character-to-unit
transducer, a unit vocoder with duration prediction, and an evaluation
harness with speed/noise robustness sweeps.
"""

from .config import PipelineConfig, derive_seed, load_config
from .dsp import (
    FeatureConfig,
    FeatureMode,
    FrameFeatures,
    Waveform,
    add_noise_at_snr,
    extract_features,
    load_wav,
    save_wav,
    speed_perturb,
    trim_silence,
)
from .errors import UnitDsrError
from .evaluation import (
    EvalRecord,
    RobustnessGrid,
    SweepItem,
    aggregate_deltas,
    check_reported_reductions,
    relative_reduction,
    robustness_sweep,
    word_error_rate,
)
from .manifest import ManifestRecord, parse_manifest
from .normalizer import (
    NormalizerConfig,
    NormalizerModel,
    StageConfig,
    TrainingPair,
    create_normalizer,
    normalize,
    run_finetune_stage,
)
from .pipeline import PipelineResult, run_pipeline
from .text2unit import TextToUnitModel, train_text_to_unit, translate_text_to_units
from .units import (
    NormUnitSequence,
    UnitCodebook,
    UnitSequence,
    dedup,
    fit_kmeans,
    quantize,
    unit_error_rate,
)
from .vocoder import UnitVocoder, VocoderConfig, create_vocoder, generate_waveform

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
