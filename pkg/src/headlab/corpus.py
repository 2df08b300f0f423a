"""Synthetic corpora and context/next-token count matrices.

A corpus is a list of token-id sequences over a vocabulary of size V.
Counting walks every position of every sequence: the context key is the
preceding prefix truncated to its last `max_context_len` tokens (the first
position has the empty context), and the observed next token increments the
corresponding cell of a dense C x V count matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# Dense count matrices only; refuse corpora that would exceed this many
# distinct context rows.
MAX_CONTEXTS = 100_000
DEFAULT_CONTEXT_LEN = 16


class ContextOverflowError(RuntimeError):
    """A corpus produced more distinct contexts than the dense-storage cap."""


class CorpusFormatError(ValueError):
    """A corpus file does not follow the expected line format."""


@dataclass
class Corpus:
    """Token sequences with their vocabulary size and generation seed."""

    vocab_size: int
    sequences: list
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if not self.sequences:
            raise ValueError("corpus must contain at least one sequence")
        seqs = []
        for s in self.sequences:
            arr = np.asarray(s, dtype=np.int64)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError("every sequence must be a nonempty 1-d token list")
            if arr.min() < 0 or arr.max() >= self.vocab_size:
                raise ValueError("token id out of range")
            seqs.append(arr)
        self.sequences = seqs

    @property
    def num_tokens(self) -> int:
        return sum(len(s) for s in self.sequences)


@dataclass
class ContextTable:
    """Distinct context keys in first-seen order, with a key -> row-id index."""

    contexts: list
    index: dict

    def __len__(self) -> int:
        return len(self.contexts)


@dataclass
class CountMatrix:
    """Next-token counts N, their row-normalized form, and context weights.

    `weights[i]` is the fraction of all counted tokens that occurred in
    context i. For a matrix restricted to a subset of contexts (a batch),
    `row_ids` records the rows' identities in the full table.
    """

    counts: np.ndarray
    total: int
    normalized: np.ndarray
    weights: np.ndarray
    row_ids: np.ndarray | None = None

    @classmethod
    def from_counts(cls, counts: np.ndarray, row_ids=None) -> "CountMatrix":
        counts = np.asarray(counts)
        if counts.ndim != 2:
            raise ValueError("counts must be 2-d")
        if np.issubdtype(counts.dtype, np.floating):
            if not np.allclose(counts, np.round(counts)):
                raise ValueError("counts must be integers")
            counts = np.round(counts).astype(np.int64)
        else:
            counts = counts.astype(np.int64)
        if counts.min() < 0:
            raise ValueError("counts must be nonnegative")
        row_sums = counts.sum(axis=1)
        if np.any(row_sums <= 0):
            raise ValueError("every context row must have a positive count sum")
        total = int(counts.sum())
        normalized = counts / row_sums[:, None]
        weights = row_sums / total
        if row_ids is not None:
            row_ids = np.asarray(row_ids, dtype=np.int64)
            if row_ids.shape != (counts.shape[0],):
                raise ValueError("row_ids length must match the number of rows")
        return cls(counts, total, normalized, weights, row_ids)

    @property
    def num_contexts(self) -> int:
        return self.counts.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.counts.shape[1]


def gen_spamlang(vocab_size: int, num_seqs: int, seq_len: int, seed: int) -> Corpus:
    """One uniformly drawn symbol per sequence, repeated for the whole sequence."""
    if vocab_size < 2 or num_seqs < 1 or seq_len < 2:
        raise ValueError("need vocab_size >= 2, num_seqs >= 1, seq_len >= 2")
    rng = np.random.default_rng(seed)
    symbols = rng.integers(0, vocab_size, size=num_seqs)
    seqs = [np.full(seq_len, s, dtype=np.int64) for s in symbols]
    return Corpus(vocab_size=vocab_size, sequences=seqs, seed=seed)


def zipf_weights(vocab_size: int, exponent: float) -> np.ndarray:
    w = np.arange(1, vocab_size + 1, dtype=np.float64) ** (-float(exponent))
    return w / w.sum()


def zipf_transition_matrix(vocab_size: int, exponent: float, rng) -> np.ndarray:
    """Row-stochastic table whose rows are independently permuted Zipf laws."""
    probs = zipf_weights(vocab_size, exponent)
    table = np.empty((vocab_size, vocab_size))
    for i in range(vocab_size):
        table[i, rng.permutation(vocab_size)] = probs
    return table


def gen_zipf_bigram(
    vocab_size: int, exponent: float, num_seqs: int, seq_len: int, seed: int
) -> Corpus:
    """First-order Markov source with permuted-Zipf transition rows.

    The initial token is Zipf-distributed over token ids; each subsequent
    token is drawn from the transition row of its predecessor. Deterministic
    given the seed.
    """
    if vocab_size < 2 or exponent <= 0:
        raise ValueError("need vocab_size >= 2 and exponent > 0")
    if num_seqs < 1 or seq_len < 1:
        raise ValueError("need num_seqs >= 1 and seq_len >= 1")
    rng = np.random.default_rng(seed)
    trans = zipf_transition_matrix(vocab_size, exponent, rng)
    cdf = np.cumsum(trans, axis=1)
    cdf[:, -1] = 1.0
    init_cdf = np.cumsum(zipf_weights(vocab_size, exponent))
    init_cdf[-1] = 1.0

    tokens = np.empty((num_seqs, seq_len), dtype=np.int64)
    u = rng.random(num_seqs)
    tokens[:, 0] = np.searchsorted(init_cdf, u, side="right")
    for t in range(1, seq_len):
        rows = cdf[tokens[:, t - 1]]
        u = rng.random(num_seqs)
        tokens[:, t] = (rows <= u[:, None]).sum(axis=1)
    np.clip(tokens, 0, vocab_size - 1, out=tokens)
    return Corpus(vocab_size=vocab_size, sequences=list(tokens), seed=seed)


def _context_key(tokens: list, t: int, max_context_len: int) -> tuple:
    return tuple(tokens[max(0, t - max_context_len) : t])


def build_counts(corpus: Corpus, max_context_len: int = DEFAULT_CONTEXT_LEN):
    """Scan the corpus into a (ContextTable, CountMatrix) pair.

    The total count equals the total number of tokens: the first position of
    each sequence is counted under the empty context.
    """
    if max_context_len < 0:
        raise ValueError("max_context_len must be nonnegative")
    index: dict = {}
    contexts: list = []
    row_idx: list = []
    col_idx: list = []
    for seq in corpus.sequences:
        toks = [int(x) for x in seq]
        for t, tok in enumerate(toks):
            key = _context_key(toks, t, max_context_len)
            rid = index.get(key)
            if rid is None:
                rid = len(contexts)
                if rid >= MAX_CONTEXTS:
                    raise ContextOverflowError(
                        f"corpus exceeds the {MAX_CONTEXTS}-context cap"
                    )
                index[key] = rid
                contexts.append(key)
            row_idx.append(rid)
            col_idx.append(tok)
    n = np.zeros((len(contexts), corpus.vocab_size), dtype=np.int64)
    np.add.at(n, (np.asarray(row_idx), np.asarray(col_idx)), 1)
    return ContextTable(contexts=contexts, index=index), CountMatrix.from_counts(n)


def batch_counts(
    corpus: Corpus,
    table: ContextTable,
    batch,
    max_context_len: int = DEFAULT_CONTEXT_LEN,
) -> CountMatrix:
    """Counts restricted to a set of sequence indices.

    Rows follow the full table's ordering; contexts absent from the batch are
    omitted, with their full-table row ids recorded in `row_ids`.
    """
    batch = sorted({int(i) for i in batch})
    if not batch:
        raise ValueError("batch must be nonempty")
    if batch[0] < 0 or batch[-1] >= len(corpus.sequences):
        raise ValueError("batch contains an invalid sequence index")
    n_full = np.zeros((len(table), corpus.vocab_size), dtype=np.int64)
    for s in batch:
        toks = [int(x) for x in corpus.sequences[s]]
        for t, tok in enumerate(toks):
            key = _context_key(toks, t, max_context_len)
            rid = table.index.get(key)
            if rid is None:
                raise KeyError(
                    f"context {key!r} missing from table; was it built with "
                    f"max_context_len={max_context_len}?"
                )
            n_full[rid, tok] += 1
    row_ids = np.flatnonzero(n_full.sum(axis=1) > 0)
    return CountMatrix.from_counts(n_full[row_ids], row_ids=row_ids)


def counts_for_table(
    corpus: Corpus, table: ContextTable, max_context_len: int = DEFAULT_CONTEXT_LEN
):
    """Count a (held-out) corpus against an existing table.

    Tokens whose context key is absent from the table are skipped. Returns
    (CountMatrix with row_ids into the table, skipped token count).
    """
    n_full = np.zeros((len(table), corpus.vocab_size), dtype=np.int64)
    skipped = 0
    for seq in corpus.sequences:
        toks = [int(x) for x in seq]
        for t, tok in enumerate(toks):
            rid = table.index.get(_context_key(toks, t, max_context_len))
            if rid is None:
                skipped += 1
            else:
                n_full[rid, tok] += 1
    row_ids = np.flatnonzero(n_full.sum(axis=1) > 0)
    if row_ids.size == 0:
        raise ValueError("no token of the corpus maps to a known context")
    return CountMatrix.from_counts(n_full[row_ids], row_ids=row_ids), skipped


def row_entropies(counts: CountMatrix) -> np.ndarray:
    """Per-context next-token entropy (nats) of the normalized rows."""
    p = counts.normalized
    h = np.zeros(p.shape[0])
    nz = p > 0
    contrib = np.zeros_like(p)
    contrib[nz] = p[nz] * np.log(p[nz])
    np.negative(contrib.sum(axis=1), out=h)
    # rounding can leave -0.0 or tiny negatives on one-hot rows
    np.maximum(h, 0.0, out=h)
    return h


@dataclass
class AssumptionStats:
    """Degeneracy statistics of a counted corpus.

    `unique_context_count` is the number of contexts with a single observed
    continuation; `unique_next_token_count` the number of distinct tokens
    serving as such continuations. The entropy histogram is weighted by the
    context weights.
    """

    unique_context_count: int
    unique_next_token_count: int
    unique_token_counts_by_prefix_size: dict
    entropy_bin_edges: np.ndarray
    entropy_bin_weights: np.ndarray

    def to_csv_rows(self):
        rows = [
            ("unique_context_count", "", self.unique_context_count),
            ("unique_next_token_count", "", self.unique_next_token_count),
        ]
        for size, count in sorted(self.unique_token_counts_by_prefix_size.items()):
            rows.append(("unique_next_tokens_at_prefix", str(size), count))
        for lo, hi, wgt in zip(
            self.entropy_bin_edges[:-1], self.entropy_bin_edges[1:], self.entropy_bin_weights
        ):
            rows.append(("entropy_bin", f"{lo!r}:{hi!r}", repr(float(wgt))))
        return rows


def _unique_continuations(counts: CountMatrix):
    """Rows with a single observed next token, and those tokens."""
    support = (counts.counts > 0).sum(axis=1)
    single_rows = np.flatnonzero(support == 1)
    tokens = counts.counts[single_rows].argmax(axis=1)
    return single_rows, tokens


def assumption_stats(
    corpus: Corpus,
    table: ContextTable,
    counts: CountMatrix,
    prefix_sizes=(),
    entropy_bins: int = 24,
) -> AssumptionStats:
    single_rows, tokens = _unique_continuations(counts)
    by_prefix = {}
    for size in prefix_sizes:
        _, sized = build_counts(corpus, max_context_len=int(size))
        _, sized_tokens = _unique_continuations(sized)
        by_prefix[int(size)] = int(np.unique(sized_tokens).size)
    h = row_entropies(counts)
    hmax = max(float(np.log(counts.vocab_size)), 1e-12)
    weights, edges = np.histogram(
        np.clip(h, 0.0, hmax), bins=entropy_bins, range=(0.0, hmax), weights=counts.weights
    )
    return AssumptionStats(
        unique_context_count=int(single_rows.size),
        unique_next_token_count=int(np.unique(tokens).size),
        unique_token_counts_by_prefix_size=by_prefix,
        entropy_bin_edges=edges,
        entropy_bin_weights=weights,
    )


def write_stats_csv(path, stats: AssumptionStats) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stat", "key", "value"])
        for row in stats.to_csv_rows():
            writer.writerow(row)


def save_corpus(path, corpus: Corpus) -> None:
    """Write the line-oriented corpus format: `#vocab V` then one sequence per line."""
    with open(path, "w") as fh:
        fh.write(f"#vocab {corpus.vocab_size}\n")
        for seq in corpus.sequences:
            fh.write(" ".join(str(int(t)) for t in seq))
            fh.write("\n")


def load_corpus(path) -> Corpus:
    with open(path) as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 2 or parts[0] != "#vocab":
            raise CorpusFormatError(f"bad header line {header!r}")
        try:
            vocab_size = int(parts[1])
        except ValueError as exc:
            raise CorpusFormatError(f"bad vocab size in header {header!r}") from exc
        sequences = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                ids = [int(tok) for tok in line.split()]
            except ValueError as exc:
                raise CorpusFormatError(f"bad token on line {lineno}") from exc
            sequences.append(np.asarray(ids, dtype=np.int64))
    if not sequences:
        raise CorpusFormatError("corpus file contains no sequences")
    return Corpus(vocab_size=vocab_size, sequences=sequences, seed=0)
