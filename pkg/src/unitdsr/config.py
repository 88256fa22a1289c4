"""Layered pipeline configuration.

Config files are plain text, one `dotted.key=value` per line (# comments
allowed). Later files and explicit overrides win. Every key must be in the
schema; unknown keys are hard errors rather than silent no-ops. Component
seeds are derived from the single global seed so one integer pins the
whole run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .dsp import FeatureConfig, FeatureMode
from .errors import DomainError, IoError, UnknownConfigKeyError
from .normalizer import NormalizerConfig, StageConfig


def _csv_str(raw: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _csv_float(raw: str) -> tuple[float, ...]:
    return tuple(float(s) for s in _csv_str(raw))


def _bool(raw: str) -> bool:
    low = str(raw).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise DomainError(f"not a boolean: {raw!r}")


def _stage_keys(sid: int, ref: str, speakers: str, updates: int) -> dict:
    p = f"normalizer.stage{sid}."
    return {
        p + "reference_speaker": (str, ref),
        p + "random_speakers": (_csv_str, _csv_str(speakers)),
        p + "max_updates": (int, updates),
        p + "learning_rate": (float, 3e-4),
        p + "batch_size": (int, 8),
        p + "warmup_fraction": (float, 0.1),
        p + "aug_speed_ratios": (_csv_float, ()),
        p + "aug_snr_db": (_csv_float, ()),
    }


SCHEMA: dict[str, tuple[Any, Any]] = {
    "global.seed": (int, 0),
    "data.manifest": (str, ""),
    "data.train_blocks": (_csv_str, ("B1", "B3")),
    "data.test_block": (str, "B2"),
    "feature.mode": (str, "standin_logmel"),
    "feature.n_mels": (int, 80),
    "feature.window_ms": (float, 25.0),
    "feature.hop_ms": (float, 20.0),
    "feature.log_floor": (float, 1e-10),
    "feature.dir": (str, ""),
    "codebook.k": (int, 64),
    "codebook.max_iter": (int, 50),
    "normalizer.layers": (int, 4),
    "normalizer.width": (int, 256),
    "normalizer.heads": (int, 4),
    "normalizer.downsample": (int, 2),
    **_stage_keys(1, "REF", "SPK1,SPK2", 1000),
    **_stage_keys(2, "REF", "SPK1,SPK2", 600),
    **_stage_keys(3, "REF", "DYS1", 600),
    "vocoder.enabled": (_bool, False),
    "vocoder.max_updates": (int, 500),
    "vocoder.learning_rate": (float, 2e-4),
    "vocoder.segment_frames": (int, 24),
    "vocoder.base_channels": (int, 64),
    "vocoder.unit_embed": (int, 64),
    "vocoder.speaker_embed": (int, 16),
    "text2unit.max_updates": (int, 400),
    "text2unit.learning_rate": (float, 1e-3),
}


def derive_seed(global_seed: int, component: str, stage: int = 0) -> int:
    """Stable per-component seed from the global seed."""
    blob = f"{global_seed}:{component}:{stage}".encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass(frozen=True)
class PipelineConfig:
    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        if key not in SCHEMA:
            raise UnknownConfigKeyError(f"unknown config key {key!r}")
        return self.values[key]

    @property
    def seed(self) -> int:
        return self["global.seed"]

    def config_hash(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.values):
            h.update(f"{key}={self.values[key]!r}\n".encode())
        return h.hexdigest()

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            mode=FeatureMode(self["feature.mode"]),
            n_mels=self["feature.n_mels"],
            window_ms=self["feature.window_ms"],
            hop_ms=self["feature.hop_ms"],
            log_floor=self["feature.log_floor"],
            feature_dir=Path(self["feature.dir"]) if self["feature.dir"] else None,
        )

    def normalizer_config(self) -> NormalizerConfig:
        return NormalizerConfig(
            num_units=self["codebook.k"],
            feature_dim=self["feature.n_mels"],
            downsample=self["normalizer.downsample"],
            layers=self["normalizer.layers"],
            width=self["normalizer.width"],
            heads=self["normalizer.heads"],
        )

    def stage_config(self, stage_id: int) -> StageConfig:
        p = f"normalizer.stage{stage_id}."
        return StageConfig(
            stage_id=stage_id,
            reference_speaker=self[p + "reference_speaker"],
            random_speaker_filter=frozenset(self[p + "random_speakers"]),
            max_updates=self[p + "max_updates"],
            learning_rate=self[p + "learning_rate"],
            batch_size=self[p + "batch_size"],
            warmup_fraction=self[p + "warmup_fraction"],
            seed=derive_seed(self.seed, "normalizer", stage_id),
        )

    def stage_augmentation(self, stage_id: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
        p = f"normalizer.stage{stage_id}."
        return self[p + "aug_speed_ratios"], self[p + "aug_snr_db"]


def _parse_value(key: str, raw: Any) -> Any:
    if key not in SCHEMA:
        raise UnknownConfigKeyError(f"unknown config key {key!r}")
    caster, _ = SCHEMA[key]
    try:
        return caster(raw) if isinstance(raw, str) else raw
    except (ValueError, TypeError) as exc:
        raise DomainError(f"bad value for {key}: {raw!r} ({exc})") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DomainError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        try:
            out[key] = _parse_value(key, raw.strip())
        except UnknownConfigKeyError as exc:
            raise UnknownConfigKeyError(f"{source}:{lineno}: {exc}") from exc
    return out


def load_config(
    paths: Sequence[str | Path] = (),
    overrides: dict[str, Any] | None = None,
) -> PipelineConfig:
    """Defaults, then each file in order, then programmatic overrides."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for path in paths:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, source=str(path)))
    for key, raw in (overrides or {}).items():
        values[key] = _parse_value(key, raw)
    return PipelineConfig(values)
