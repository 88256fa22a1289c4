"""Objective evaluation: word error rates with alignment counts, relative
WER reduction, ablation-style aggregation, robustness sweeps over speed
and SNR axes, and machine-readable reports."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .dsp import Waveform, add_noise_at_snr, speed_perturb
from .errors import (
    DivisionDomainError,
    DomainError,
    EmptyCollectionError,
    EmptyReferenceError,
    IoError,
)
from .units import NormUnitSequence, unit_error_rate

CLEAN = "clean"  # unperturbed sentinel for the SNR axis

SPEED_AXIS_DEFAULT = (0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
SNR_AXIS_DEFAULT = (0.0, 5.0, 10.0, 15.0, 20.0, 30.0, CLEAN)

_PUNCT = re.compile(r"[^\w\s']")
_WS = re.compile(r"\s+")


def normalize_words(text: str | Sequence[str]) -> list[str]:
    """Case-fold and strip punctuation (apostrophes kept)."""
    if not isinstance(text, str):
        text = " ".join(text)
    return _WS.sub(" ", _PUNCT.sub(" ", text.lower())).split()


@dataclass(frozen=True)
class WerCounts:
    wer: float
    subs: int
    ins: int
    dels: int
    ref_words: int


@dataclass(frozen=True)
class EvalRecord:
    system: str
    speaker: str
    wer: float
    delta: float | None  # percent decrease vs. the original speech
    subs: int = 0
    ins: int = 0
    dels: int = 0
    ref_words: int = 0


def word_error_rate(hyp: str | Sequence[str], ref: str | Sequence[str]) -> WerCounts:
    """Word-level Levenshtein alignment with unit costs and S/I/D counts."""
    hyp_words = normalize_words(hyp)
    ref_words = normalize_words(ref)
    if not ref_words:
        raise EmptyReferenceError("reference transcript is empty")
    m, n = len(hyp_words), len(ref_words)
    dist = np.zeros((m + 1, n + 1), dtype=np.int64)
    dist[:, 0] = np.arange(m + 1)  # insertions (hyp words with no ref match)
    dist[0, :] = np.arange(n + 1)  # deletions
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            cost = 0 if hyp_words[i - 1] == ref_words[j - 1] else 1
            dist[i, j] = min(
                dist[i - 1, j] + 1, dist[i, j - 1] + 1, dist[i - 1, j - 1] + cost
            )
    # backtrace for counts; prefer matches/substitutions, then deletion
    i, j = m, n
    subs = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (
            0 if hyp_words[i - 1] == ref_words[j - 1] else 1
        ):
            subs += hyp_words[i - 1] != ref_words[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            dels += 1
            j -= 1
        else:
            ins += 1
            i -= 1
    return WerCounts((subs + ins + dels) / n, subs, ins, dels, n)


def relative_reduction(wer_system: float, wer_original: float) -> float:
    """Percentage decrease in WER vs. the original speech (full precision;
    rounding to one decimal happens only at report time)."""
    if wer_original == 0:
        raise DivisionDomainError("relative reduction undefined for zero baseline WER")
    return 100.0 * (wer_original - wer_system) / wer_original


def aggregate_deltas(records: Iterable[EvalRecord | float]) -> float:
    """Arithmetic mean of per-speaker relative reductions."""
    deltas = [
        r.delta if isinstance(r, EvalRecord) else float(r)
        for r in records
        if not (isinstance(r, EvalRecord) and r.delta is None)
    ]
    if not deltas:
        raise EmptyCollectionError("no records with a defined delta")
    return float(np.mean(deltas))


@dataclass(frozen=True)
class ReductionRow:
    speaker: str
    wer_original: float
    wer_system: float
    reported_delta: float


@dataclass(frozen=True)
class ReductionCheck:
    speaker: str
    computed_delta: float
    reported_delta: float
    consistent: bool
    implied_original: float  # original WER that would make the report exact


def check_reported_reductions(rows: Iterable[ReductionRow]) -> list[ReductionCheck]:
    """Recompute each row's relative reduction and flag rows whose reported
    value disagrees at one-decimal precision."""
    out = []
    for row in rows:
        computed = relative_reduction(row.wer_system, row.wer_original)
        consistent = round(computed, 1) == round(row.reported_delta, 1)
        implied = row.wer_system / (1.0 - row.reported_delta / 100.0)
        out.append(
            ReductionCheck(row.speaker, computed, row.reported_delta, consistent, implied)
        )
    return out


# --------------------------------------------------------------------------
# Robustness sweeps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridCell:
    value: float | str
    mean: float | None
    n_ok: int
    n_fail: int


@dataclass(frozen=True)
class RobustnessGrid:
    axis: str  # "speed_ratio" | "snr_db"
    metric: str  # "uer" | "wer"
    cells: tuple[GridCell, ...]

    def __post_init__(self):
        numeric = [c.value for c in self.cells if not isinstance(c.value, str)]
        if any(b <= a for a, b in zip(numeric, numeric[1:])):
            raise DomainError("axis values must be strictly increasing")

    def cell(self, value) -> GridCell:
        for c in self.cells:
            if c.value == value:
                return c
        raise KeyError(value)


@dataclass(frozen=True)
class SweepItem:
    utterance_id: str
    waveform: Waveform
    reference: NormUnitSequence | str  # norm units for UER, transcript for WER


def _cell_seed(seed: int, axis: str, value, utterance_id: str) -> int:
    blob = f"{seed}:{axis}:{value}:{utterance_id}".encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def robustness_sweep(
    system: Callable[[Waveform], NormUnitSequence | str],
    testset: Sequence[SweepItem],
    axis: str,
    axis_values: Sequence[float | str],
    metric: str,
    seed: int = 0,
) -> RobustnessGrid:
    """Per-cell mean metric over the testset. The unperturbed cell (speed
    1.0 / clean) is bit-identical to a plain evaluation; per-utterance
    failures land in the cell's failure count without aborting the grid."""
    if not testset:
        raise EmptyCollectionError("robustness testset is empty")
    if axis not in ("speed_ratio", "snr_db"):
        raise DomainError(f"unknown axis {axis!r}")
    if metric not in ("uer", "wer"):
        raise DomainError(f"unknown metric {metric!r}")
    cells = []
    for value in axis_values:
        scores: list[float] = []
        n_fail = 0
        for item in testset:
            try:
                w = item.waveform
                if axis == "speed_ratio" and value != 1.0:
                    w = speed_perturb(w, float(value))
                elif axis == "snr_db" and value != CLEAN:
                    w = add_noise_at_snr(
                        w, float(value), _cell_seed(seed, axis, value, item.utterance_id)
                    )
                hyp = system(w)
                if metric == "uer":
                    scores.append(unit_error_rate(hyp, item.reference))
                else:
                    scores.append(word_error_rate(hyp, item.reference).wer)
            except Exception:
                n_fail += 1
        mean = float(np.mean(scores)) if scores else None
        cells.append(GridCell(value, mean, len(scores), n_fail))
    return RobustnessGrid(axis=axis, metric=metric, cells=tuple(cells))


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def emit_records_report(records: Sequence[EvalRecord], path: str | Path) -> None:
    """CSV `system,speaker,wer,delta,subs,ins,dels,ref_words`, rows ordered
    by (system, speaker); one-decimal delta rounding happens here only."""
    path = Path(path)
    lines = ["system,speaker,wer,delta,subs,ins,dels,ref_words"]
    plot = ["x\ty\tn"]
    for r in sorted(records, key=lambda r: (r.system, r.speaker)):
        delta = "" if r.delta is None else f"{r.delta:.1f}"
        lines.append(
            f"{r.system},{r.speaker},{r.wer:.4f},{delta},"
            f"{r.subs},{r.ins},{r.dels},{r.ref_words}"
        )
        plot.append(f"{r.speaker}\t{r.wer:.4f}\t{r.ref_words}")
    _write_text(path, "\n".join(lines) + "\n")
    _write_text(path.with_suffix(path.suffix + ".plot"), "\n".join(plot) + "\n")


def emit_grid_report(grid: RobustnessGrid, path: str | Path) -> None:
    """CSV `axis,value,metric,mean,n_ok,n_fail` in axis order."""
    path = Path(path)
    lines = ["axis,value,metric,mean,n_ok,n_fail"]
    plot = ["x\ty\tn"]
    for c in grid.cells:
        mean = "" if c.mean is None else f"{c.mean:.6f}"
        lines.append(f"{grid.axis},{c.value},{grid.metric},{mean},{c.n_ok},{c.n_fail}")
        plot.append(f"{c.value}\t{mean}\t{c.n_ok}")
    _write_text(path, "\n".join(lines) + "\n")
    _write_text(path.with_suffix(path.suffix + ".plot"), "\n".join(plot) + "\n")
