"""Measurement battery for head-gradient compression.

Every probe is a pure, read-only function over a counted corpus and a model
snapshot: per-token gradient rank curves, the fraction of the logit-gradient
norm falling into the kernel of the head, cosine alignment with the retained
part, sorted coefficient profiles, update-direction efficiency, and the
unavoidable low-rank residual of the parameter-induced logit update.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .corpus import CountMatrix
from .model import (
    ModelParams,
    logit_gradient,
    logits,
    loss_from_logits,
    probs_and_loss,
)


@dataclass
class RankCurve:
    """(token_count, empirical_rank, max_possible_rank) triples."""

    points: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["token_count", "rank", "max_rank"])
            for count, rank, max_rank in self.points:
                writer.writerow([count, rank, max_rank])


def token_occurrences(counts: CountMatrix):
    """All counted (context row, next token) occurrences, with multiplicity."""
    rows, cols = np.nonzero(counts.counts)
    reps = counts.counts[rows, cols]
    return np.repeat(rows, reps), np.repeat(cols, reps)


def per_token_gradient_matrix(p: np.ndarray, occ_rows, occ_cols) -> np.ndarray:
    """One gradient row per token occurrence: p[context] minus the token one-hot."""
    m = p[occ_rows].copy()
    m[np.arange(len(occ_rows)), occ_cols] -= 1.0
    return m


def gradient_rank_curve(
    counts: CountMatrix,
    params: ModelParams,
    token_counts,
    seed: int = 0,
    rank_tol: float = linalg.DEFAULT_RANK_TOL,
) -> RankCurve:
    """Rank of the stacked per-token gradient rows at growing sample sizes.

    For each requested size a token subset is drawn without replacement from
    all counted occurrences.
    """
    sizes = [int(k) for k in token_counts]
    if sizes != sorted(sizes) or any(k < 1 for k in sizes):
        raise ValueError("token_counts must be positive and ascending")
    if sizes[-1] > counts.total:
        raise ValueError(
            f"requested {sizes[-1]} tokens but the corpus holds {counts.total}"
        )
    p, _ = probs_and_loss(counts, logits(params))
    occ_rows, occ_cols = token_occurrences(counts)
    rng = np.random.default_rng(seed)
    curve = RankCurve()
    for k in sizes:
        draw = rng.choice(counts.total, size=k, replace=False)
        m = per_token_gradient_matrix(p, occ_rows[draw], occ_cols[draw])
        rank = linalg.qr_rank(m, rank_tol)
        curve.points.append((k, rank, min(k, counts.vocab_size)))
    return curve


def _head_kernel(head, rank_tol: float) -> np.ndarray:
    return linalg.kernel_basis(head.matrix, rank_tol)


def lost_norm_fraction(
    g, head, rank_tol: float = linalg.DEFAULT_RANK_TOL
) -> float:
    """Fraction of ||g||_F that lies in the kernel of the head transpose.

    This is exactly the part of the logit gradient that cannot reach any
    parameter below the head. Defined as 0 for an all-zero gradient.
    """
    g = np.asarray(g, dtype=np.float64)
    total = np.linalg.norm(g)
    if total == 0.0:
        return 0.0
    basis = _head_kernel(head, rank_tol)
    lost = np.linalg.norm(linalg.project_rows_onto_span(g, basis))
    return float(lost / total)


def kernel_cosine(g, head, rank_tol: float = linalg.DEFAULT_RANK_TOL):
    """Mean and std over rows of cos(row, its projection off the kernel).

    For an orthogonal projection the cosine equals the retained norm
    fraction of the row. Zero rows are excluded; an all-zero gradient is an
    error.
    """
    g = np.asarray(g, dtype=np.float64)
    basis = _head_kernel(head, rank_tol)
    kept = g - linalg.project_rows_onto_span(g, basis)
    row_norms = np.linalg.norm(g, axis=1)
    nz = row_norms > 0
    if not np.any(nz):
        raise ValueError("all gradient rows are zero")
    cos = np.linalg.norm(kept[nz], axis=1) / row_norms[nz]
    return float(cos.mean()), float(cos.std())


@dataclass
class CompressionReport:
    lost_fraction: float
    cosine_mean: float
    cosine_std: float
    eckart_young_gap: float
    per_row_lost: np.ndarray
    zero_gradient: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["lost_fraction", "cosine_mean", "cosine_std", "eckart_young_gap", "zero_gradient"]
            )
            writer.writerow(
                [
                    repr(self.lost_fraction),
                    repr(self.cosine_mean),
                    repr(self.cosine_std),
                    repr(self.eckart_young_gap),
                    int(self.zero_gradient),
                ]
            )

    def per_row_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "lost_fraction"])
            for i, val in enumerate(self.per_row_lost):
                writer.writerow([i, repr(float(val))])


def compression_report(
    counts: CountMatrix, params: ModelParams, rank_tol: float = linalg.DEFAULT_RANK_TOL
) -> CompressionReport:
    """Full kernel-compression measurement at the current parameters.

    The stacked lost fraction follows the Frobenius form; a per-row series is
    included, with zero rows reported as 0 and flagged through
    `zero_gradient` when the whole gradient vanishes.
    """
    p, _ = probs_and_loss(counts, logits(params))
    g = logit_gradient(counts, p)
    total = np.linalg.norm(g)
    basis = _head_kernel(params.head, rank_tol)
    gap = linalg.best_rank_k_residual(g, 2 * params.width)
    if total == 0.0:
        rows = np.zeros(g.shape[0])
        return CompressionReport(0.0, 0.0, 0.0, gap, rows, zero_gradient=True)
    lost_rows = linalg.project_rows_onto_span(g, basis)
    row_norms = np.linalg.norm(g, axis=1)
    per_row = np.zeros(g.shape[0])
    nz = row_norms > 0
    per_row[nz] = np.linalg.norm(lost_rows[nz], axis=1) / row_norms[nz]
    cmean, cstd = kernel_cosine(g, params.head, rank_tol)
    return CompressionReport(
        lost_fraction=float(np.linalg.norm(lost_rows) / total),
        cosine_mean=cmean,
        cosine_std=cstd,
        eckart_young_gap=gap,
        per_row_lost=per_row,
    )


@dataclass
class CoefficientProfile:
    """Per-position mean/std of signed coefficients after sorting each row
    by the absolute full-gradient value (descending).

    Rows are sign-flipped so that position 1, the coefficient of the observed
    token, is negative.
    """

    full_mean: np.ndarray
    full_std: np.ndarray
    proj_mean: np.ndarray
    proj_std: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["position", "full_mean", "full_std", "proj_mean", "proj_std"])
            for i in range(len(self.full_mean)):
                writer.writerow(
                    [
                        i + 1,
                        repr(float(self.full_mean[i])),
                        repr(float(self.full_std[i])),
                        repr(float(self.proj_mean[i])),
                        repr(float(self.proj_std[i])),
                    ]
                )


def coefficient_profile(g_full, g_proj) -> CoefficientProfile:
    g_full = np.asarray(g_full, dtype=np.float64)
    g_proj = np.asarray(g_proj, dtype=np.float64)
    if g_full.shape != g_proj.shape:
        raise ValueError("full and projected gradients must have the same shape")
    order = np.argsort(-np.abs(g_full), axis=1)
    f_sorted = np.take_along_axis(g_full, order, axis=1)
    p_sorted = np.take_along_axis(g_proj, order, axis=1)
    flip = np.where(f_sorted[:, 0] > 0, -1.0, 1.0)[:, None]
    f_sorted = f_sorted * flip
    p_sorted = p_sorted * flip
    return CoefficientProfile(
        full_mean=f_sorted.mean(axis=0),
        full_std=f_sorted.std(axis=0),
        proj_mean=p_sorted.mean(axis=0),
        proj_std=p_sorted.std(axis=0),
    )


@dataclass
class EfficiencyCurve:
    fractions: list
    delta_logit: list
    delta_hidden: list

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "delta_logit", "delta_hidden"])
            for a, d1, d2 in zip(self.fractions, self.delta_logit, self.delta_hidden):
                writer.writerow([repr(float(a)), repr(float(d1)), repr(float(d2))])


def update_efficiency(
    counts: CountMatrix, params: ModelParams, fractions
) -> EfficiencyCurve:
    """Loss change when moving the logits by a norm fraction in two directions.

    Direction one is the (negated, unit-Frobenius) logit gradient; direction
    two is the logit-space image of a hidden-state gradient step. Both moves
    spend the same budget alpha * ||logits||_F, and the loss is evaluated
    directly on the perturbed logits.
    """
    fractions = [float(a) for a in fractions]
    if any(a <= 0 or a > 1 for a in fractions):
        raise ValueError("fractions must lie in (0, 1]")
    lm = logits(params)
    p, base = probs_and_loss(counts, lm)
    g = logit_gradient(counts, p)
    gnorm = np.linalg.norm(g)
    if gnorm == 0.0:
        raise ValueError("logit gradient has zero norm")
    wm = params.head.matrix
    hidden_dir = (g @ wm) @ wm.T
    hnorm = np.linalg.norm(hidden_dir)
    if hnorm == 0.0:
        raise ValueError("hidden-state update direction has zero norm")
    d1 = -g / gnorm
    d2 = -hidden_dir / hnorm
    budget = np.linalg.norm(lm)
    delta1, delta2 = [], []
    for a in fractions:
        delta1.append(loss_from_logits(counts, lm + a * budget * d1) - base)
        delta2.append(loss_from_logits(counts, lm + a * budget * d2) - base)
    return EfficiencyCurve(fractions, delta1, delta2)


def eckart_young_gap(residual_matrix, width: int) -> float:
    """Unavoidable Frobenius error of any rank-2*width update against `residual_matrix`."""
    return linalg.best_rank_k_residual(residual_matrix, 2 * int(width))
