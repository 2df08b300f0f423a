"""Machine verification of the model's structural claims on brute-force instances.

Each verifier draws (or plants) random instances from its seed, checks one
inequality with explicit margins, and returns a VerificationResult with
per-instance records. A margin is the slack by which the claim held;
negative slack counts as a violation.

Checks covered:
  - loss_floor: the count-weighted cross-entropy never beats the weighted
    empirical entropy, with equality when the model matches the empirical rows;
  - logit_rank_caps: logits have rank at most the width, log-probabilities at
    most width + 1;
  - top1_reachability: a shared width-2 head reaches every context's empirical
    top-1 probability to arbitrary precision;
  - error_rank_floor: the prediction-error matrix has rank at least
    min(#distinct unique continuations, V - 1) for strictly interior predictions;
  - batch_rank_floor: the same floor within mini-batches whose unique batch
    continuations form a connected co-occurrence graph;
  - update_residual_gap: the first-order logit update (rank <= 2D) misses the
    prediction error by more than the optimal rank-2D truncation error.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .corpus import Corpus, CountMatrix, batch_counts, build_counts, gen_zipf_bigram
from .model import (
    FullHead,
    ModelParams,
    entropy_floor,
    first_order_logit_update,
    init_params,
    logits,
    loss,
    loss_from_logits,
    smoothed_log_target,
)

RANK_TOL = linalg.DEFAULT_RANK_TOL


@dataclass
class VerificationResult:
    check_id: str
    instances_tested: int
    violations: int
    worst_margin: float
    seed: int
    skipped: int = 0
    details: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_json_dict(self) -> dict:
        return {
            "proposition": self.check_id,
            "instances": self.instances_tested,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "seed": self.seed,
            "skipped": self.skipped,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_instances_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if not self.details:
                writer.writerow(["instance"])
                return
            keys = list(self.details[0].keys())
            writer.writerow(["instance"] + keys)
            for i, det in enumerate(self.details):
                writer.writerow([i] + [_csv_cell(det[k]) for k in keys])


def _csv_cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _finish(check_id, seed, details, margins, skipped=0) -> VerificationResult:
    violations = int(sum(1 for m in margins if not (m >= 0.0)))
    worst = float(min(margins)) if margins else math.inf
    for det, margin in zip(details, margins):
        det["margin"] = float(margin)
    return VerificationResult(
        check_id=check_id,
        instances_tested=len(margins),
        violations=violations,
        worst_margin=worst,
        seed=seed,
        skipped=skipped,
        details=details,
    )


def _random_counts(rng, c, v, interior=False) -> CountMatrix:
    if interior:
        n = rng.integers(1, 9, size=(c, v))
    else:
        n = rng.integers(0, 5, size=(c, v))
        empty = np.flatnonzero(n.sum(axis=1) == 0)
        for i in empty:
            n[i, rng.integers(v)] = 1
    return CountMatrix.from_counts(n)


def verify_loss_floor(trials: int = 1000, dims=(10, 12, 4), seed: int = 0) -> VerificationResult:
    """Loss >= weighted empirical entropy; equality at the matched model."""
    if trials < 1:
        raise ValueError("trials must be positive")
    c_max, v_max, d_max = dims
    rng = np.random.default_rng(seed)
    details, margins = [], []
    for _ in range(trials):
        c = int(rng.integers(1, c_max + 1))
        v = int(rng.integers(2, v_max + 1))
        d = int(rng.integers(1, d_max + 1))
        counts = _random_counts(rng, c, v)
        params = init_params(c, v, d, rng=rng)
        slack = loss(counts, params) - entropy_floor(counts)

        interior = _random_counts(rng, c, v, interior=True)
        eq_dev = abs(
            loss_from_logits(interior, smoothed_log_target(interior))
            - entropy_floor(interior)
        )
        margin = min(slack + 1e-10, 1e-8 - eq_dev)
        margins.append(margin)
        details.append(
            {"C": c, "V": v, "D": d, "floor_slack": float(slack), "equality_dev": float(eq_dev)}
        )
    return _finish("loss_floor", seed, details, margins)


def verify_logit_rank_caps(
    trials: int = 500, dims=(10, 16, 4), seed: int = 0, rank_tol: float = RANK_TOL
) -> VerificationResult:
    """rank(logits) <= width and rank(log-softmax(logits)) <= width + 1."""
    c_max, v_max, d_max = dims
    if v_max < d_max + 3:
        raise ValueError("need v_max >= d_max + 3")
    rng = np.random.default_rng(seed)
    details, margins = [], []
    for _ in range(trials):
        d = int(rng.integers(1, d_max + 1))
        v = int(rng.integers(d + 3, v_max + 1))
        c = int(rng.integers(2, c_max + 1))
        h = rng.normal(size=(c, d))
        w = rng.normal(size=(v, d))
        lm = h @ w.T
        logit_rank = linalg.qr_rank(lm, rank_tol)
        logprob_rank = linalg.qr_rank(linalg.log_softmax_rows(lm), rank_tol)
        margin = min(d - logit_rank, d + 1 - logprob_rank)
        margins.append(float(margin))
        details.append(
            {"C": c, "V": v, "D": d, "logit_rank": logit_rank, "logprob_rank": logprob_rank}
        )
    return _finish("logit_rank_caps", seed, details, margins)


def _unit_circle_head(v: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(v) / v
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _top1_prob(alpha: float, cos_gaps: np.ndarray) -> float:
    # probability of the anchor token when its context rides its head row
    return float(1.0 / np.exp(alpha * cos_gaps).sum())


def _solve_scale(v: int, target: float, epsilon: float):
    """Scale whose softmax puts `target` mass on the anchor token, within epsilon/2.

    The probability is continuous and increasing in the scale, from 1/V at 0
    toward 1; a geometric scan brackets the target and bisection refines it.
    A fine grid scan backs up the bracketing if the evaluated probabilities
    ever decrease (they should not).
    """
    cos_gaps = np.cos(2.0 * np.pi * np.arange(v) / v) - 1.0
    tol = epsilon / 2.0
    if target < 1.0 / v - 1e-12:
        raise AssertionError("target below 1/V cannot be an argmax probability")
    p0 = _top1_prob(0.0, cos_gaps)
    if abs(p0 - target) < tol:
        return 0.0
    lo, hi = 0.0, 1.0
    prev = p0
    monotone = True
    for _ in range(600):
        p = _top1_prob(hi, cos_gaps)
        if p < prev - 1e-12:
            monotone = False
            break
        prev = p
        if p >= target or p >= 1.0 - tol:
            break
        lo, hi = hi, hi * 2.0
    if not monotone:
        # fall back to a dense scan; only continuity is needed
        grid = np.geomspace(1e-6, hi, 20000)
        probs = np.array([_top1_prob(a, cos_gaps) for a in grid])
        return float(grid[np.argmin(np.abs(probs - target))])
    if target >= 1.0 - tol:
        return hi
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        p = _top1_prob(mid, cos_gaps)
        if abs(p - target) < tol:
            return mid
        if p < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def construct_top1(counts: CountMatrix, epsilon: float) -> ModelParams:
    """Width-2 parameters matching every context's empirical top-1 probability.

    Head rows are the V distinct unit-circle points; each context
    representation is a nonnegative multiple of its target token's head row,
    with the multiple solved by bracketing and bisection.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    v = counts.vocab_size
    if v < 2:
        raise ValueError("need a vocabulary of at least 2")
    w = _unit_circle_head(v)
    targets = counts.normalized.argmax(axis=1)
    h = np.zeros((counts.num_contexts, 2))
    cache: dict = {}
    for i, k in enumerate(targets):
        t = float(counts.normalized[i, k])
        alpha = cache.get(t)
        if alpha is None:
            alpha = _solve_scale(v, t, epsilon)
            cache[t] = alpha
        h[i] = alpha * w[k]
    return ModelParams(h, FullHead(w))


def verify_top1_reachability(
    instances: int = 20, dims=(64, 256), epsilon: float = 1e-3, seed: int = 0
) -> VerificationResult:
    """construct_top1 meets its epsilon across random target matrices."""
    c_max, v_max = dims
    rng = np.random.default_rng(seed)
    details, margins = [], []
    for _ in range(instances):
        c = int(rng.integers(1, c_max + 1))
        v = int(rng.integers(2, v_max + 1))
        n = rng.integers(0, 5, size=(c, v))
        # mix in one-hot and near-uniform rows to hit both ends of the range
        for i in range(c):
            mode = rng.integers(3)
            if mode == 0:
                n[i] = 0
                n[i, rng.integers(v)] = int(rng.integers(1, 9))
            elif mode == 1:
                n[i] = 1
            elif n[i].sum() == 0:
                n[i, rng.integers(v)] = 1
        counts = CountMatrix.from_counts(n)
        params = construct_top1(counts, epsilon)
        probs = linalg.softmax_rows(logits(params))
        targets = counts.normalized.argmax(axis=1)
        devs = np.abs(
            probs[np.arange(counts.num_contexts), targets]
            - counts.normalized[np.arange(counts.num_contexts), targets]
        )
        margin = epsilon - float(devs.max())
        margins.append(margin)
        details.append(
            {
                "C": c,
                "V": v,
                "max_dev": float(devs.max()),
                "head_rank": linalg.qr_rank(params.head.w),
            }
        )
    return _finish("top1_reachability", seed, details, margins)


def _plant_unique_structure(rng, c: int, v: int, n_unique: int):
    """Counts with exactly `n_unique` distinct single-continuation tokens.

    The first `n_unique` rows are one-hot on distinct tokens; occasional extra
    rows repeat one of those tokens (same unique-token set); remaining rows
    get at least two distinct continuations.
    """
    tokens = rng.choice(v, size=n_unique, replace=False)
    n = np.zeros((c, v), dtype=np.int64)
    for i in range(n_unique):
        n[i, tokens[i]] = int(rng.integers(1, 6))
    for i in range(n_unique, c):
        if n_unique > 0 and rng.random() < 0.25:
            n[i, tokens[rng.integers(n_unique)]] = int(rng.integers(1, 6))
        else:
            cols = rng.choice(v, size=2, replace=False)
            n[i, cols[0]] = int(rng.integers(1, 6))
            n[i, cols[1]] = int(rng.integers(1, 6))
    return CountMatrix.from_counts(n), tokens


def _interior_stochastic(rng, c: int, v: int) -> np.ndarray:
    p = rng.uniform(0.05, 1.0, size=(c, v))
    return p / p.sum(axis=1, keepdims=True)


def _svd_rank(m, tol: float = RANK_TOL) -> int:
    s = linalg.singular_values(m)
    return int(np.count_nonzero(s > tol * max(1.0, float(s[0]))))


def verify_error_rank_floor(instances: int = 200, seed: int = 0, v_max: int = 32) -> VerificationResult:
    """rank(P - normalized counts) >= min(#unique continuation tokens, V-1)."""
    rng = np.random.default_rng(seed)
    details, margins = [], []
    for _ in range(instances):
        v = int(rng.integers(4, v_max + 1))
        n_unique = int(rng.integers(1, v + 1))
        c = min(64, n_unique + int(rng.integers(0, 9)))
        counts, tokens = _plant_unique_structure(rng, c, v, n_unique)
        p = _interior_stochastic(rng, c, v)
        diff = p - counts.normalized
        bound = min(n_unique, v - 1)
        rank_qr = linalg.qr_rank(diff, RANK_TOL)
        rank_svd = _svd_rank(diff)
        sub = diff[np.arange(n_unique)][:, tokens]
        sub_sigma_min = float(linalg.singular_values(sub)[-1])
        margin = float(min(rank_qr, rank_svd) - bound)
        if n_unique < v:
            # interior predictions make the planted square submatrix strictly
            # diagonally dominant, hence nonsingular
            margin = min(margin, math.inf if sub_sigma_min > 0 else -1.0)
        margins.append(margin)
        details.append(
            {
                "C": c,
                "V": v,
                "unique_tokens": n_unique,
                "bound": bound,
                "rank_qr": rank_qr,
                "rank_svd": rank_svd,
                "submatrix_sigma_min": sub_sigma_min,
            }
        )
    return _finish("error_rank_floor", seed, details, margins)


def _connected(adjacency: np.ndarray) -> bool:
    k = adjacency.shape[0]
    parent = list(range(k))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(k):
        for j in range(i + 1, k):
            if adjacency[i, j] or adjacency[j, i]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    return len({find(i) for i in range(k)}) == 1


def unique_batch_contexts(counts: CountMatrix, batch: CountMatrix):
    """Rows with one in-batch continuation that have several in the full data.

    When several such rows share the same batch token, the lowest-row
    representative is kept so the selected tokens are pairwise distinct.
    Returns (full-table row ids, their batch tokens).
    """
    if batch.row_ids is None:
        raise ValueError("batch counts must carry row_ids")
    batch_support = (batch.counts > 0).sum(axis=1)
    full_support = (counts.counts[batch.row_ids] > 0).sum(axis=1)
    candidate = np.flatnonzero((batch_support == 1) & (full_support >= 2))
    rows, tokens, seen = [], [], set()
    for i in candidate:
        tok = int(batch.counts[i].argmax())
        if tok in seen:
            continue
        seen.add(tok)
        rows.append(int(batch.row_ids[i]))
        tokens.append(tok)
    return np.asarray(rows, dtype=np.int64), np.asarray(tokens, dtype=np.int64)


def verify_batch_rank_floor(
    corpus: Corpus,
    batch_fraction: float = 0.25,
    delta_grid=(1e-4, 1e-3, 1e-2, 1e-1),
    seed: int = 0,
    max_context_len: int = 1,
    assert_delta: float = 1e-3,
) -> dict:
    """Check the in-batch rank floor on one corpus and one batch draw.

    Builds predictions P = (1 - delta) * normalized + delta * uniform for
    each delta, and requires rank(P_batch - batch-normalized counts) to reach
    min(#unique distinct batch continuations, V - 1) at `assert_delta`. The
    largest delta at which the floor held is reported. Instances whose
    co-occurrence graph is not connected (or with no qualifying context) are
    marked skipped.
    """
    if not 0 < batch_fraction <= 1:
        raise ValueError("batch_fraction must lie in (0, 1]")
    deltas = sorted(float(d) for d in delta_grid)
    if assert_delta not in deltas:
        deltas.append(float(assert_delta))
        deltas.sort()
    rng = np.random.default_rng(seed)
    table, counts = build_counts(corpus, max_context_len)
    num_seqs = len(corpus.sequences)
    k = max(1, int(round(batch_fraction * num_seqs)))
    batch_ids = rng.choice(num_seqs, size=k, replace=False)
    batch = batch_counts(corpus, table, batch_ids, max_context_len)
    rows, tokens = unique_batch_contexts(counts, batch)
    out = {
        "num_unique": int(rows.size),
        "skipped": False,
        "connected": None,
        "bound": None,
        "held_at_assert_delta": None,
        "largest_held_delta": None,
        "max_inf_error_at_assert": None,
        "ranks": {},
    }
    if rows.size == 0:
        out["skipped"] = True
        return out
    cross = counts.normalized[rows][:, tokens]
    connected = _connected(cross > 0)
    out["connected"] = bool(connected)
    if not connected:
        out["skipped"] = True
        return out
    v = counts.vocab_size
    bound = min(rows.size, v - 1)
    out["bound"] = int(bound)
    largest_held = None
    batch_full_rows = batch.row_ids
    for delta in deltas:
        p = (1.0 - delta) * counts.normalized + delta / v
        diff = p[batch_full_rows] - batch.normalized
        rank_qr = linalg.qr_rank(diff, RANK_TOL)
        rank_svd = _svd_rank(diff)
        held = rank_qr >= bound and rank_svd >= bound
        out["ranks"][delta] = (rank_qr, rank_svd)
        if held:
            largest_held = delta
        if delta == assert_delta:
            out["held_at_assert_delta"] = bool(held)
            inf_err = np.abs(p[rows] - counts.normalized[rows]).max()
            out["max_inf_error_at_assert"] = float(inf_err)
    out["largest_held_delta"] = largest_held
    return out


def batch_rank_floor_suite(
    n_instances: int = 50,
    vocab_size: int = 32,
    batch_fraction: float = 0.25,
    delta_grid=(1e-4, 1e-3, 1e-2, 1e-1),
    seed: int = 0,
    assert_delta: float = 1e-3,
    num_seqs: int = 24,
    seq_len: int = 9,
    exponent: float = 0.9,
    max_attempts: int | None = None,
) -> VerificationResult:
    """Run the batch rank floor over seeded corpora until enough instances
    satisfy the connectivity precondition; non-qualifying draws count as skipped."""
    if max_attempts is None:
        max_attempts = 20 * n_instances
    details, margins = [], []
    skipped = 0
    attempt = 0
    while len(margins) < n_instances and attempt < max_attempts:
        corpus_seed = seed * 1_000_003 + attempt
        corpus = gen_zipf_bigram(vocab_size, exponent, num_seqs, seq_len, corpus_seed)
        res = verify_batch_rank_floor(
            corpus,
            batch_fraction=batch_fraction,
            delta_grid=delta_grid,
            seed=corpus_seed + 1,
            assert_delta=assert_delta,
        )
        attempt += 1
        if res["skipped"]:
            skipped += 1
            continue
        margin = 0.0 if res["held_at_assert_delta"] else -1.0
        margins.append(margin)
        details.append(
            {
                "corpus_seed": corpus_seed,
                "unique_batch_contexts": res["num_unique"],
                "bound": res["bound"],
                "held_at_assert_delta": int(bool(res["held_at_assert_delta"])),
                "largest_held_delta": res["largest_held_delta"],
                "max_inf_error": res["max_inf_error_at_assert"],
            }
        )
    if len(margins) < n_instances:
        raise RuntimeError(
            f"only {len(margins)} of {n_instances} instances met the connectivity "
            f"precondition after {attempt} attempts"
        )
    return _finish("batch_rank_floor", seed, details, margins, skipped=skipped)


def verify_update_residual_gap(instances: int = 100, seed: int = 0) -> VerificationResult:
    """The rank-limited first-order update misses the prediction error by more
    than the optimal rank-2D truncation, under both residual conventions."""
    rng = np.random.default_rng(seed)
    details, margins = [], []
    for _ in range(instances):
        d = int(rng.integers(1, 4))
        v = int(rng.integers(2 * d + 3, 17))
        n_unique = int(rng.integers(2 * d + 1, v + 1))
        c = min(24, n_unique + int(rng.integers(0, 5)))
        counts, _ = _plant_unique_structure(rng, c, v, n_unique)
        params = init_params(c, v, d, rng=rng)
        delta = first_order_logit_update(counts, params)
        delta_rank = linalg.qr_rank(delta, 1e-8)
        p = linalg.softmax_rows(logits(params))
        raw = p - counts.normalized
        weighted = counts.weights[:, None] * raw
        gap_raw = linalg.best_rank_k_residual(raw, 2 * d)
        gap_weighted = linalg.best_rank_k_residual(weighted, 2 * d)
        dist_raw = float(np.linalg.norm(delta - raw))
        dist_weighted = float(np.linalg.norm(delta - weighted))
        margin = min(
            float(2 * d - delta_rank),
            dist_raw - gap_raw,
            dist_weighted - gap_weighted,
        )
        margins.append(margin)
        details.append(
            {
                "C": c,
                "V": v,
                "D": d,
                "unique_tokens": n_unique,
                "delta_rank": delta_rank,
                "gap_raw": gap_raw,
                "excess_raw": dist_raw - gap_raw,
                "gap_weighted": gap_weighted,
                "excess_weighted": dist_weighted - gap_weighted,
            }
        )
    return _finish("update_residual_gap", seed, details, margins)


def run_all(seed: int = 0, sizes: dict | None = None) -> dict:
    """Run every verifier; returns {check_id: VerificationResult}."""
    sizes = sizes or {}
    results = [
        verify_loss_floor(seed=seed, **sizes.get("loss_floor", {})),
        verify_logit_rank_caps(seed=seed, **sizes.get("logit_rank_caps", {})),
        verify_top1_reachability(seed=seed, **sizes.get("top1_reachability", {})),
        verify_error_rank_floor(seed=seed, **sizes.get("error_rank_floor", {})),
        batch_rank_floor_suite(seed=seed, **sizes.get("batch_rank_floor", {})),
        verify_update_residual_gap(seed=seed, **sizes.get("update_residual_gap", {})),
    ]
    return {r.check_id: r for r in results}
