"""Ranking and segmentation metrics."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DataError


def predict_topk(scores, k: int) -> list[tuple[int, float]]:
    """Top-``k`` ``(class, score)`` pairs, descending; equal scores keep class order.

    ``scores`` are already squashed confidences (e.g. sigmoid of logits).
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not 1 <= k <= s.size:
        raise ContractError(f"k must be in [1, {s.size}], got {k}")
    order = np.argsort(-s, kind="stable")[:k]
    return [(int(c), float(s[c])) for c in order]


def gap(predictions: Sequence[Sequence[tuple[int, float]]], truths: Sequence[Iterable[int]]) -> float:
    """Global average precision over pooled per-video top-k predictions.

    All ``(video, class, score)`` triples are ranked together by score; each
    hit contributes precision-at-rank divided by the total number of true labels.
    """
    if len(predictions) != len(truths):
        raise ContractError(f"{len(predictions)} prediction lists for {len(truths)} videos")
    truth_sets = [set(t) for t in truths]
    positives = sum(len(t) for t in truth_sets)
    if positives == 0:
        raise DataError("GAP is undefined with zero ground-truth labels")

    triples = [
        (score, vid, cls)
        for vid, preds in enumerate(predictions)
        for cls, score in preds
    ]
    # descending score; ties by video then class
    triples.sort(key=lambda t: (-t[0], t[1], t[2]))
    hits = 0
    total = 0.0
    for rank, (_, vid, cls) in enumerate(triples, start=1):
        if cls in truth_sets[vid]:
            hits += 1
            total += hits / rank
    return total / positives


def boundary_f1(predicted: Sequence[int], planted: Sequence[int], tol: int = 0) -> float:
    """F1 of one-to-one cut matching within ``±tol`` frames."""
    pred = sorted(int(p) for p in predicted)
    true = sorted(int(t) for t in planted)
    if not pred and not true:
        return 1.0
    if not pred or not true:
        return 0.0
    # left-to-right sweep over sorted cuts; maximal for a symmetric window
    i = j = matched = 0
    while i < len(pred) and j < len(true):
        if abs(pred[i] - true[j]) <= tol:
            matched += 1
            i += 1
            j += 1
        elif pred[i] < true[j]:
            i += 1
        else:
            j += 1
    if matched == 0:
        return 0.0
    precision = matched / len(pred)
    recall = matched / len(true)
    return 2 * precision * recall / (precision + recall)


def random_cut_f1(n_frames: Sequence[int], n_cuts: Sequence[int], planted: Sequence[Sequence[int]],
                  tol: int, draws: int = 1000, seed: int = 0) -> float:
    """Monte Carlo expected F1 of placing the same number of cuts uniformly at random."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for n, k, truth in zip(n_frames, n_cuts, planted):
        k = min(k, n - 1)
        acc = 0.0
        for _ in range(draws):
            cuts = rng.choice(np.arange(1, n), size=k, replace=False) if k > 0 else []
            acc += boundary_f1(cuts, truth, tol)
        total += acc / draws
    return total / len(n_frames)
