"""Diarization error rate, speaker-counting accuracy and SI-SNR."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .audio import Waveform
from .errors import DataError


def as_fraction(t) -> Fraction:
    """Exact rational time; floats go through their shortest repr."""
    if isinstance(t, Fraction):
        return t
    if isinstance(t, int):
        return Fraction(t)
    if isinstance(t, str):
        return Fraction(t.strip())
    return Fraction(repr(float(t)))


@dataclass(frozen=True)
class SegmentationHypothesis:
    segments: tuple  # (speaker, start, end)
    session_id: str = "session"

    def __post_init__(self):
        segs = []
        for spk, start, end in self.segments:
            s, e = as_fraction(start), as_fraction(end)
            if not str(spk):
                raise DataError("empty speaker label")
            if e <= s:
                raise DataError(f"segment for {spk} has end {float(e)} <= start {float(s)}")
            segs.append((str(spk), s, e))
        object.__setattr__(self, "segments", tuple(segs))

    @property
    def speakers(self) -> list[str]:
        return sorted({s for s, _, _ in self.segments})

    def by_speaker(self) -> dict[str, list[tuple[Fraction, Fraction]]]:
        """Per-speaker union of segments, sorted and non-overlapping."""
        out: dict[str, list] = {}
        for spk, s, e in sorted(self.segments, key=lambda x: (x[0], x[1], x[2])):
            ivs = out.setdefault(spk, [])
            if ivs and s <= ivs[-1][1]:
                ivs[-1] = (ivs[-1][0], max(ivs[-1][1], e))
            else:
                ivs.append((s, e))
        return out


# ---------------------------------------------------------------------- RTTM


def read_rttm(path, session_id: str | None = None) -> SegmentationHypothesis:
    segs = []
    sessions = set()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read RTTM {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] != "SPEAKER" or len(parts) < 8:
            raise DataError(f"{path}:{lineno}: not an RTTM SPEAKER line: {line!r}")
        try:
            start = as_fraction(parts[3])
            dur = as_fraction(parts[4])
        except (ValueError, ZeroDivisionError) as exc:
            raise DataError(f"{path}:{lineno}: bad time field ({exc})") from exc
        if session_id is not None and parts[1] != session_id:
            continue
        sessions.add(parts[1])
        if dur > 0:
            segs.append((parts[7], start, start + dur))
    sid = session_id or (sorted(sessions)[0] if sessions else Path(path).stem)
    return SegmentationHypothesis(tuple(segs), sid)


def format_rttm(hyp: SegmentationHypothesis) -> str:
    lines = []
    for spk, s, e in sorted(hyp.segments, key=lambda x: (x[1], x[0])):
        lines.append(f"SPEAKER {hyp.session_id} 1 {float(s):.3f} {float(e - s):.3f} <NA> <NA> {spk} <NA> <NA>")
    return "\n".join(lines) + ("\n" if lines else "")


def write_rttm(hyp: SegmentationHypothesis, path) -> None:
    Path(path).write_text(format_rttm(hyp))


# ----------------------------------------------------------------------- DER


@dataclass(frozen=True)
class DerBreakdown:
    missed_s: float
    falarm_s: float
    confusion_s: float
    scored_speech_s: float
    der: float
    mapping: tuple = ()

    def to_dict(self) -> dict:
        return {
            "der": self.der,
            "missed_s": self.missed_s,
            "falarm_s": self.falarm_s,
            "confusion_s": self.confusion_s,
            "scored_speech_s": self.scored_speech_s,
            "mapping": {r: h for r, h in self.mapping},
        }


def _union(intervals):
    out = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out


def _contains(ivs, starts, t) -> bool:
    i = bisect.bisect_right(starts, t) - 1
    return i >= 0 and t < ivs[i][1]


def der(ref: SegmentationHypothesis, hyp: SegmentationHypothesis, collar_s=0.25) -> DerBreakdown:
    """md-eval style DER.

    ``collar_s`` seconds either side of every reference boundary are not
    scored.  Reference and hypothesis speakers are paired one-to-one to
    maximise their jointly active scored time; overlapped speech counts once
    per active speaker.
    """
    collar = as_fraction(collar_s)
    if collar < 0:
        raise DataError("collar must be non-negative")
    r_spk = ref.by_speaker()
    h_spk = hyp.by_speaker()
    no_score = _union(
        [(b - collar, b + collar) for ivs in r_spk.values() for s, e in ivs for b in (s, e)]
    ) if collar > 0 else []

    cuts = {t for ivs in list(r_spk.values()) + list(h_spk.values()) for s, e in ivs for t in (s, e)}
    cuts |= {t for s, e in no_score for t in (s, e)}
    cuts = sorted(cuts)

    r_names, h_names = sorted(r_spk), sorted(h_spk)
    r_idx = {n: (ivs, [s for s, _ in ivs]) for n, ivs in r_spk.items()}
    h_idx = {n: (ivs, [s for s, _ in ivs]) for n, ivs in h_spk.items()}
    ns_starts = [s for s, _ in no_score]

    pieces = []  # (duration, active ref indices, active hyp indices)
    for a, b in zip(cuts, cuts[1:]):
        mid = (a + b) / 2
        if no_score and _contains(no_score, ns_starts, mid):
            continue
        ra = [i for i, n in enumerate(r_names) if _contains(*r_idx[n], mid)]
        ha = [j for j, n in enumerate(h_names) if _contains(*h_idx[n], mid)]
        if ra or ha:
            pieces.append((b - a, ra, ha))

    scored = sum((d * len(ra) for d, ra, _ in pieces), Fraction(0))
    if scored == 0:
        raise DataError("nothing to score: reference has no speech outside the collars")

    overlap = np.zeros((len(r_names), len(h_names)))
    for d, ra, ha in pieces:
        for i in ra:
            for j in ha:
                overlap[i, j] += float(d)
    pairs = {}
    if r_names and h_names:
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        pairs = {int(i): int(j) for i, j in zip(rows, cols) if overlap[i, j] > 0}

    missed = falarm = confusion = Fraction(0)
    for d, ra, ha in pieces:
        nr, nh = len(ra), len(ha)
        hset = set(ha)
        correct = sum(1 for i in ra if pairs.get(i) in hset)
        missed += d * max(0, nr - nh)
        falarm += d * max(0, nh - nr)
        confusion += d * (min(nr, nh) - correct)
    mapping = tuple((r_names[i], h_names[j]) for i, j in sorted(pairs.items()))
    return DerBreakdown(float(missed), float(falarm), float(confusion), float(scored),
                        float((missed + falarm + confusion) / scored), mapping)


# ------------------------------------------------------------------ counting


def counting_accuracy(truths: Sequence[int], estimates: Sequence[int]) -> float:
    """Percentage of sessions whose estimated speaker count is exact."""
    if len(truths) != len(estimates):
        raise DataError(f"{len(truths)} truths vs {len(estimates)} estimates")
    if not truths:
        raise DataError("no sessions to score")
    hits = sum(int(t) == int(e) for t, e in zip(truths, estimates))
    return 100.0 * hits / len(truths)


# -------------------------------------------------------------------- SI-SNR


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def si_snr(reference, estimate, exact_tol: float = 1e-20) -> float:
    """Scale-invariant SNR in dB (zero-mean); ``inf`` when the estimate is an
    exact scaled copy of the reference."""
    s = _samples(reference)
    e = _samples(estimate)
    if s.shape != e.shape:
        raise DataError(f"length mismatch: {s.shape} vs {e.shape}")
    s = s - s.mean()
    e = e - e.mean()
    ss = float(np.dot(s, s))
    if ss <= 1e-20 * max(s.size, 1):
        raise DataError("silent reference")
    target = (np.dot(e, s) / ss) * s
    noise = e - target
    tt, nn = float(np.dot(target, target)), float(np.dot(noise, noise))
    if nn <= exact_tol * tt:
        return math.inf
    if tt == 0.0:
        return -math.inf
    return 10.0 * math.log10(tt / nn)
