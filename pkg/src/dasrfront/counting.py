"""Multi-channel speaker counting.

Channels are grouped by inter-channel correlation, the number of speakers
is estimated per group from the pooled speaker embeddings with a
normalised-maximum-eigengap analysis, and the group estimates are combined
with weights proportional to the number of embeddings per group.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft as sfft

from .audio import MultichannelRecording
from .errors import ConfigError, DataError, FileFormatError

# ---------------------------------------------------------------- embeddings


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray
    spans: np.ndarray
    channel_ids: tuple
    bins: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        s = np.asarray(self.spans, dtype=np.float64).reshape(-1, 2)
        if v.size == 0:
            v = v.reshape(0, v.shape[1] if v.ndim == 2 else 2)
        if v.ndim != 2:
            raise DataError(f"embedding vectors must be 2-D, got shape {v.shape}")
        if v.shape[0] and v.shape[1] < 2:
            raise DataError(f"embedding dimension must be >= 2, got {v.shape[1]}")
        if len(s) != len(v) or len(self.channel_ids) != len(v):
            raise DataError("vectors, spans and channel ids differ in length")
        if np.isnan(v).any() or np.isnan(s).any():
            raise DataError("NaN in embedding set")
        if len(s) and np.any(s[:, 1] <= s[:, 0]):
            raise DataError("embedding span with end <= start")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "spans", s)
        object.__setattr__(self, "channel_ids", tuple(str(c) for c in self.channel_ids))

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, mask) -> "EmbeddingSet":
        idx = np.flatnonzero(mask)
        bins = tuple(self.bins[i] for i in idx) if self.bins else ()
        return EmbeddingSet(self.vectors[idx], self.spans[idx], tuple(self.channel_ids[i] for i in idx), bins)

    def for_channels(self, channels) -> "EmbeddingSet":
        wanted = set(channels)
        return self.subset([c in wanted for c in self.channel_ids])


def resegment_embeddings(emb: EmbeddingSet, seg_len_s: float = 15.0) -> EmbeddingSet:
    """Tag each embedding with the fixed-length bins its span touches."""
    if seg_len_s <= 0:
        raise ConfigError(f"seg_len_s must be positive, got {seg_len_s}")
    tags = []
    for start, end in emb.spans:
        first = math.floor(start / seg_len_s)
        last = max(first, math.ceil(end / seg_len_s) - 1)
        tags.append(tuple(range(first, last + 1)))
    return EmbeddingSet(emb.vectors, emb.spans, emb.channel_ids, tuple(tags))


EMB_MAGIC = b"EMB1"


def write_embeddings(emb: EmbeddingSet, path) -> Path:
    """Binary vectors plus a JSON sidecar (``<path>.json``) with spans and channels."""
    path = Path(path)
    n, d = emb.vectors.shape
    path.write_bytes(EMB_MAGIC + struct.pack("<II", n, d) + emb.vectors.astype("<f4").tobytes())
    side = [{"start": float(a), "end": float(b), "channel": c}
            for (a, b), c in zip(emb.spans.tolist(), emb.channel_ids)]
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(side, indent=1) + "\n")
    return sidecar


def read_embeddings(path, sidecar=None) -> EmbeddingSet:
    path = Path(path)
    sidecar = Path(sidecar) if sidecar else path.with_suffix(path.suffix + ".json")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 12:
        raise FileFormatError(path, "header", 0, "file shorter than the 12-byte header")
    if raw[:4] != EMB_MAGIC:
        raise FileFormatError(path, "magic", 0, f"expected {EMB_MAGIC!r}, got {raw[:4]!r}")
    n, d = struct.unpack_from("<II", raw, 4)
    if len(raw) != 12 + 4 * n * d:
        raise FileFormatError(path, "payload", 12, f"expected {4 * n * d} payload bytes for n={n}, d={d}, "
                                                   f"got {len(raw) - 12}")
    vec = np.frombuffer(raw, dtype="<f4", offset=12).reshape(n, d).astype(np.float64)
    try:
        meta = json.loads(sidecar.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read embedding sidecar {sidecar}: {exc}") from exc
    if not isinstance(meta, list) or len(meta) != n:
        raise DataError(f"{sidecar}: expected a list of {n} entries")
    try:
        spans = [(float(m["start"]), float(m["end"])) for m in meta]
        chans = [str(m["channel"]) for m in meta]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{sidecar}: bad entry ({exc})") from exc
    return EmbeddingSet(vec, np.array(spans).reshape(-1, 2), tuple(chans))


# ------------------------------------------------------- channel clustering


@dataclass(frozen=True)
class ChannelCorrelation:
    matrix: np.ndarray
    channel_ids: tuple
    silent: tuple = ()


def channel_correlation(rec: MultichannelRecording, window_s: float = 120.0,
                        max_lag_ms: float = 100.0) -> ChannelCorrelation:
    """Peak absolute normalised cross-correlation within +-max_lag_ms.

    Only the first ``window_s`` seconds are used.  Silent channels get a zero
    row and column (diagonal kept at 1) and are reported in ``silent``.
    """
    if rec.n_channels < 2:
        return ChannelCorrelation(np.ones((rec.n_channels, rec.n_channels)), rec.channel_ids)
    x = rec.data[:, : int(round(window_s * rec.sample_rate))]
    n = x.shape[1]
    max_lag = min(int(round(max_lag_ms * rec.sample_rate / 1000.0)), n - 1)
    # same reduction as the lag dot products below, so a duplicate gives exactly 1
    energy = np.array([float(np.dot(r, r)) for r in x])
    silent = energy <= 1e-12 * n
    nfft = sfft.next_fast_len(n + max_lag)
    spec = sfft.rfft(x, n=nfft, axis=-1)
    m = rec.n_channels
    corr = np.eye(m)
    lags = np.r_[0 : max_lag + 1, nfft - max_lag : nfft]
    for i in range(m):
        if silent[i]:
            continue
        for j in range(i + 1, m):
            if silent[j]:
                continue
            xc = sfft.irfft(spec[i] * np.conj(spec[j]), n=nfft)[lags]
            k = int(np.argmax(np.abs(xc)))
            lag = int(lags[k]) if lags[k] <= max_lag else int(lags[k]) - nfft
            # recompute the winning lag directly so identical channels give exactly 1
            if lag >= 0:
                dot = float(np.dot(x[i, lag:], x[j, : n - lag]))
            else:
                dot = float(np.dot(x[i, : n + lag], x[j, -lag:]))
            c = min(abs(dot) / math.sqrt(energy[i] * energy[j]), 1.0)
            corr[i, j] = corr[j, i] = c
    return ChannelCorrelation(corr, rec.channel_ids, tuple(c for c, s in zip(rec.channel_ids, silent) if s))


@dataclass(frozen=True)
class ChannelGroups:
    groups: tuple
    corr: np.ndarray
    channel_ids: tuple
    merges: tuple = ()

    def to_dict(self) -> dict:
        return {"groups": [list(g) for g in self.groups], "merges": [list(m) for m in self.merges]}


def cluster_channels(corr, threshold: float = 0.3, channel_ids=None) -> ChannelGroups:
    """Average-linkage agglomerative clustering on distance ``1 - corr``.

    Clusters keep merging while the best pair's average correlation is at
    least ``threshold``.  Among equally good pairs the one whose members
    sort first (by channel id) wins, so the result does not depend on the
    input order.
    """
    if isinstance(corr, ChannelCorrelation):
        channel_ids = corr.channel_ids if channel_ids is None else channel_ids
        corr = corr.matrix
    c = np.asarray(corr, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DataError(f"correlation matrix must be square, got {c.shape}")
    n = c.shape[0]
    ids = tuple(str(i) for i in range(n)) if channel_ids is None else tuple(str(i) for i in channel_ids)
    if len(ids) != n:
        raise DataError("channel ids do not match correlation matrix")
    if not np.allclose(c, c.T, atol=1e-9):
        raise DataError("correlation matrix is not symmetric")

    clusters = [[i] for i in sorted(range(n), key=lambda i: ids[i])]
    merges = []

    def key(cl):
        return min(ids[i] for i in cl)

    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                avg = float(np.mean(c[np.ix_(clusters[a], clusters[b])]))
                tie = tuple(sorted((key(clusters[a]), key(clusters[b]))))
                cand = (-avg, tie, a, b)
                if best is None or cand[:2] < best[:2]:
                    best = cand
        avg = -best[0]
        if avg < threshold:
            break
        a, b = best[2], best[3]
        merged = sorted(clusters[a] + clusters[b], key=lambda i: ids[i])
        merges.append((key(clusters[a]), key(clusters[b]), avg))
        clusters = [cl for k, cl in enumerate(clusters) if k not in (a, b)] + [merged]
        clusters.sort(key=key)
    groups = tuple(tuple(ids[i] for i in cl) for cl in sorted(clusters, key=key))
    return ChannelGroups(groups, c, ids, tuple(merges))


# ------------------------------------------------------------ NME analysis


@dataclass
class NmeDiagnostics:
    p_values: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    chosen_p: int | None = None
    eigenvalues: list = field(default_factory=list)
    eigengaps: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "p_values": self.p_values,
            "ratios": [None if not math.isfinite(r) else r for r in self.ratios],
            "counts": self.counts,
            "chosen_p": self.chosen_p,
            "eigengaps": self.eigengaps,
        }


def cosine_affinity(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DataError("zero-norm embedding vector")
    u = vectors / norms
    a = np.clip(u @ u.T, -1.0, 1.0)
    np.fill_diagonal(a, 1.0)
    return a


def p_sweep(n: int, max_values: int = 50) -> list[int]:
    top = max(1, n // 2)
    if top <= max_values:
        return list(range(1, top + 1))
    return sorted({int(round(v)) for v in np.linspace(1, top, max_values)})


def binarized_graph(affinity: np.ndarray, p: int, background: float = 0.1) -> np.ndarray:
    """Row-wise top-p binarisation (self included, positive affinities only),
    symmetrised, plus ``background`` times the clipped raw affinity.

    The background term keeps pieces of one tight cluster that fall apart
    at small p joined by their raw similarity, so they do not read as
    separate speakers.  Pairs with non-positive cosine never connect.
    """
    n = affinity.shape[0]
    order = np.argsort(-affinity, axis=1, kind="stable")[:, :p]
    b = np.zeros_like(affinity)
    b[np.repeat(np.arange(n), p), order.ravel()] = 1.0
    b *= affinity > 0
    np.fill_diagonal(b, 1.0)
    return 0.5 * (b + b.T) + background * np.clip(affinity, 0.0, None)


def normalized_laplacian_eigenvalues(graph: np.ndarray) -> np.ndarray:
    deg = graph.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = np.eye(graph.shape[0]) - inv[:, None] * graph * inv[None, :]
    return np.linalg.eigvalsh(0.5 * (lap + lap.T))


def nmesc_count(emb, max_speakers: int = 8, background: float = 0.1, max_p_values: int = 50):
    """Estimate the number of speakers in an embedding set.

    For every neighbour count p the graph's eigengaps are computed; the p
    with the smallest ``p / (max gap / largest eigenvalue)`` is kept and the
    count is the position of the largest gap there.  Returns
    ``(count, NmeDiagnostics)``.
    """
    vectors = emb.vectors if isinstance(emb, EmbeddingSet) else np.asarray(emb, dtype=np.float64)
    if max_speakers < 1:
        raise ConfigError(f"max_speakers must be >= 1, got {max_speakers}")
    diag = NmeDiagnostics()
    n = vectors.shape[0]
    if n == 0:
        raise DataError("cannot count speakers without embeddings")
    if n == 1:
        return 1, diag
    a = cosine_affinity(vectors)
    limit = min(max_speakers, n)
    best = None
    for p in p_sweep(n, max_p_values):
        lam = normalized_laplacian_eigenvalues(binarized_graph(a, p, background))
        gaps = np.diff(lam)[: min(max_speakers, n - 1)]
        lam_max = lam[-1]
        g = float(gaps.max()) if gaps.size else 0.0
        if g <= 1e-12 or lam_max <= 1e-12:
            ratio, k = math.inf, 0
        else:
            ratio = p / (g / lam_max)
            k = int(np.argmax(gaps)) + 1
        diag.p_values.append(p)
        diag.ratios.append(ratio)
        diag.counts.append(k)
        if math.isfinite(ratio) and (best is None or ratio < best[0]):
            best = (ratio, p, k, lam, gaps)
    if best is None:
        # no p gives a usable gap: every embedding is its own component
        return limit, diag
    _, diag.chosen_p, k, lam, gaps = best
    diag.eigenvalues = lam.tolist()
    diag.eigengaps = gaps.tolist()
    return max(1, min(k, limit)), diag


# ------------------------------------------------------------- aggregation


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def aggregate_counts(per_group: Sequence[tuple[int, int]]) -> int:
    """Embedding-count weighted mean of group counts, rounded half up."""
    if not per_group:
        raise DataError("no group estimates to aggregate")
    for c, n in per_group:
        if c < 1 or n < 1:
            raise DataError(f"group estimate needs count >= 1 and n >= 1, got ({c}, {n})")
    total = sum(n for _, n in per_group)
    return round_half_up(Fraction(sum(c * n for c, n in per_group), total))


@dataclass(frozen=True)
class GroupCount:
    group_index: int
    channels: tuple
    count: int
    n_embeddings: int
    diagnostics: NmeDiagnostics | None = None


@dataclass(frozen=True)
class CountEstimate:
    per_group: tuple
    session_count: int
    n_total: int
    groups: ChannelGroups | None = None

    def to_dict(self) -> dict:
        return {
            "session_count": self.session_count,
            "N": self.n_total,
            "per_group": [
                {
                    "group_index": g.group_index,
                    "channels": list(g.channels),
                    "count": g.count,
                    "n_embeddings": g.n_embeddings,
                    "diagnostics": g.diagnostics.to_dict() if g.diagnostics else None,
                }
                for g in self.per_group
            ],
            "groups": self.groups.to_dict() if self.groups else None,
        }


def count_speakers(emb: EmbeddingSet, groups, max_speakers: int = 8, background: float = 0.1) -> CountEstimate:
    """Per-group counts over any channel partition, then weighted aggregation.

    Passing singleton groups gives channel-wise counting.  Groups without
    embeddings are skipped.
    """
    partition = groups.groups if isinstance(groups, ChannelGroups) else tuple(tuple(g) for g in groups)
    per = []
    for gi, chans in enumerate(partition):
        sub = emb.for_channels(chans)
        if len(sub) == 0:
            continue
        c, diag = nmesc_count(sub, max_speakers, background)
        per.append(GroupCount(gi, tuple(chans), c, len(sub), diag))
    if not per:
        raise DataError("no embeddings belong to any channel group")
    total = aggregate_counts([(g.count, g.n_embeddings) for g in per])
    return CountEstimate(tuple(per), total, sum(g.n_embeddings for g in per),
                         groups if isinstance(groups, ChannelGroups) else None)
