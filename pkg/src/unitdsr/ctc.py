"""Connectionist temporal classification: alignment-free loss over all
frame paths that collapse to the target, plus greedy decoding.

The blank is always the last class index (= number of units K).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .errors import InfeasibleTargetError
from .units import NormUnitSequence

NEG_INF = -1e30


def min_frames_required(target: Sequence[int]) -> int:
    """Frames needed for a feasible alignment: one per label plus one
    mandatory blank between equal consecutive labels."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_forward_batched(
    log_probs: torch.Tensor,
    targets: torch.Tensor,
    input_lengths: torch.Tensor,
    target_lengths: torch.Tensor,
    blank: int,
) -> torch.Tensor:
    """Per-sample negative log likelihood.

    log_probs: (B, T, C) log-softmax scores; targets: (B, L_max) padded
    label ids; returns (B,) losses. Differentiable w.r.t. log_probs.
    """
    batch, t_max, _ = log_probs.shape
    l_max = int(target_lengths.max().item()) if targets.numel() else 0
    s_max = 2 * l_max + 1
    device = log_probs.device
    dtype = log_probs.dtype

    # extended target: blank interleaved, blanks at even positions
    ext = torch.full((batch, s_max), blank, dtype=torch.long, device=device)
    if l_max > 0:
        ext[:, 1::2] = targets[:, :l_max]
    # transitions from s-2 allowed where ext[s] is a label differing from ext[s-2]
    allow_skip = torch.zeros((batch, s_max), dtype=torch.bool, device=device)
    if s_max >= 3:
        lab = ext[:, 2:]
        allow_skip[:, 2:] = (lab != blank) & (lab != ext[:, :-2])

    ext_scores = log_probs.gather(
        2, ext.unsqueeze(1).expand(batch, t_max, s_max)
    )  # (B, T, S)

    alpha = torch.full((batch, s_max), NEG_INF, dtype=dtype, device=device)
    alpha[:, 0] = ext_scores[:, 0, 0]
    if s_max > 1:
        has_label = target_lengths > 0
        alpha[has_label, 1] = ext_scores[has_label, 0, 1]

    for t in range(1, t_max):
        stay = alpha
        step = torch.cat(
            [torch.full((batch, 1), NEG_INF, dtype=dtype, device=device), alpha], dim=1
        )[:, :s_max]
        skip = torch.cat(
            [torch.full((batch, 2), NEG_INF, dtype=dtype, device=device), alpha], dim=1
        )[:, :s_max]
        skip = torch.where(allow_skip, skip, torch.full_like(skip, NEG_INF))
        new_alpha = torch.logsumexp(torch.stack([stay, step, skip], dim=0), dim=0)
        new_alpha = new_alpha + ext_scores[:, t, :]
        active = (input_lengths > t).unsqueeze(1)
        alpha = torch.where(active, new_alpha, alpha)

    # total probability ends on the final label or the final blank
    idx_last_blank = 2 * target_lengths  # (B,)
    end_blank = alpha.gather(1, idx_last_blank.unsqueeze(1)).squeeze(1)
    idx_last_label = torch.clamp(2 * target_lengths - 1, min=0)
    end_label = alpha.gather(1, idx_last_label.unsqueeze(1)).squeeze(1)
    end_label = torch.where(
        target_lengths > 0, end_label, torch.full_like(end_label, NEG_INF)
    )
    return -torch.logsumexp(torch.stack([end_blank, end_label], dim=0), dim=0)


def ctc_loss(logits: np.ndarray, target: NormUnitSequence | Sequence[int]) -> float:
    """Negative log probability of all alignments collapsing to target.

    logits: (T', K+1) unnormalized scores with blank = last column.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = list(target.units if isinstance(target, NormUnitSequence) else target)
    t_frames, n_classes = logits.shape
    blank = n_classes - 1
    if min_frames_required(labels) > t_frames:
        raise InfeasibleTargetError(
            f"target of length {len(labels)} needs "
            f"{min_frames_required(labels)} frames, only {t_frames} available"
        )
    lp = torch.log_softmax(torch.from_numpy(logits), dim=-1).unsqueeze(0)
    targets = torch.tensor([labels], dtype=torch.long) if labels else torch.zeros(
        (1, 0), dtype=torch.long
    )
    loss = ctc_forward_batched(
        lp,
        targets,
        torch.tensor([t_frames]),
        torch.tensor([len(labels)]),
        blank,
    )
    return float(loss.item())


def ctc_greedy_decode(logits: np.ndarray, num_units: int | None = None) -> NormUnitSequence:
    """Per-frame argmax, collapse consecutive repeats, drop blanks."""
    logits = np.asarray(logits)
    n_classes = logits.shape[1]
    blank = n_classes - 1
    if num_units is None:
        num_units = blank
    path = np.argmax(logits, axis=1)  # lowest index wins ties
    out: list[int] = []
    prev = -1
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    # blank-separated repeats would collide with the no-adjacent-duplicates
    # invariant of norm units, so collapse once more
    collapsed: list[int] = []
    for u in out:
        if not collapsed or collapsed[-1] != u:
            collapsed.append(u)
    return NormUnitSequence(tuple(collapsed), num_units)
