"""Microphone scoring (envelope variance, C50) and subset selection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio import Waveform
from .errors import ConfigError, DataError, DegenerateSignalError

BRANCHES = ("intersection", "ev_set", "top15_ev", "all")


def mel_filterbank(n_bands: int, n_fft: int, sample_rate: int, fmin: float = 0.0, fmax=None) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape (n_bands, n_fft//2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax

    def hz2mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel2hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = mel2hz(np.linspace(hz2mel(fmin), hz2mel(fmax), n_bands + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b : b + 3]
        rise = (freqs - lo) / max(mid - lo, 1e-12)
        fall = (hi - freqs) / max(hi - mid, 1e-12)
        fb[b] = np.clip(np.minimum(rise, fall), 0.0, None)
        if not fb[b].any():
            # band narrower than a bin: take the nearest bin
            fb[b, np.argmin(np.abs(freqs - mid))] = 1.0
    return fb


def envelope_variance(
    wave: Waveform,
    bands: int = 20,
    win_s: float = 0.040,
    hop_s: float = 0.010,
    floor_db: float = 60.0,
) -> float:
    """Mean over mel bands of the variance of the mean-normalised, cube-root
    compressed sub-band magnitude envelope.

    Reverberation smears the envelope, so larger values indicate a cleaner
    channel.  The score does not depend on the overall gain of ``wave``.
    """
    x = wave.samples
    sr = wave.sample_rate
    if len(x) < 2 * sr:
        raise DataError(f"channel {wave.channel_id}: need at least 2 s of audio, got {len(x) / sr:.2f} s")
    if np.sqrt(np.mean(x**2)) <= 1e-6:
        raise DegenerateSignalError(f"channel {wave.channel_id} is silent")
    win = int(round(win_s * sr))
    hop = int(round(hop_s * sr))
    n_fft = 1 << (win - 1).bit_length()
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop] * np.hanning(win)
    mag = np.abs(np.fft.rfft(frames, n=n_fft, axis=-1))
    env = mag @ mel_filterbank(bands, n_fft, sr).T  # (frames, bands)
    # clamp to a fixed dynamic range below the loudest cell; keeps empty
    # bands from contributing numerical noise
    env = np.maximum(env, env.max() * 10.0 ** (-floor_db / 20.0))
    env = np.cbrt(env)
    env = env / env.mean(axis=0, keepdims=True)
    return float(np.mean(env.var(axis=0)))


def c50_from_rir(rir: Waveform, onset_rel: float = 0.01) -> float:
    """Early (first 50 ms after onset) to late energy ratio in dB.

    The onset is the first sample reaching ``onset_rel`` of the peak
    magnitude.  Returns ``math.inf`` when there is no late energy.
    """
    h = rir.samples
    peak = np.max(np.abs(h)) if h.size else 0.0
    if peak == 0.0:
        raise DegenerateSignalError("all-zero impulse response")
    t0 = int(np.argmax(np.abs(h) >= onset_rel * peak))
    split = t0 + int(round(0.050 * rir.sample_rate))
    early = float(np.sum(h[:split] ** 2))
    late = float(np.sum(h[split:] ** 2))
    if late == 0.0:
        return math.inf
    return 10.0 * math.log10(early / late)


@dataclass(frozen=True)
class ChannelScore:
    channel_id: str
    ev: float
    c50_db: float

    def __post_init__(self):
        if not (math.isfinite(self.ev) and self.ev >= 0):
            raise DataError(f"channel {self.channel_id}: invalid EV {self.ev}")
        if math.isnan(self.c50_db) or self.c50_db == -math.inf:
            raise DataError(f"channel {self.channel_id}: invalid C50 {self.c50_db}")


@dataclass(frozen=True)
class SelectionPolicy:
    k_pct: float = 0.65
    min_mics: int = 15

    def __post_init__(self):
        if not 0 < self.k_pct <= 1:
            raise ConfigError(f"k_pct must be in (0, 1], got {self.k_pct}")
        if self.min_mics < 1:
            raise ConfigError(f"min_mics must be >= 1, got {self.min_mics}")

    def top_k(self, m: int) -> int:
        return math.ceil(self.k_pct * m - 1e-9)


@dataclass(frozen=True)
class SelectionResult:
    selected: frozenset
    rule_branch: str
    i_ev: frozenset = field(default_factory=frozenset)
    i_c50: frozenset = field(default_factory=frozenset)
    i_cap: frozenset = field(default_factory=frozenset)
    ev_ranking: tuple = ()

    def to_dict(self) -> dict:
        return {
            "selected": sorted(self.selected),
            "rule_branch": self.rule_branch,
            "i_ev": sorted(self.i_ev),
            "i_c50": sorted(self.i_c50),
            "i_cap": sorted(self.i_cap),
            "ev_ranking": list(self.ev_ranking),
        }


def rank_by(scores: Sequence[ChannelScore], key: str) -> list[str]:
    """Channel ids best-first; ties go to the lexicographically smaller id."""
    return [s.channel_id for s in sorted(scores, key=lambda s: (-getattr(s, key), s.channel_id))]


def apply_rule(m: int, i_ev: frozenset, i_c50: frozenset, ev_ranking: Sequence[str],
               policy: SelectionPolicy) -> tuple[frozenset, str]:
    """The four-branch subset rule, given the audit sets."""
    if m < policy.min_mics:
        return frozenset(ev_ranking), "all"
    cap = i_ev & i_c50
    if len(cap) >= policy.min_mics:
        return cap, "intersection"
    if len(i_ev) >= policy.min_mics:
        return i_ev, "ev_set"
    return frozenset(ev_ranking[: policy.min_mics]), "top15_ev"


def select_subset(scores: Sequence[ChannelScore], policy: SelectionPolicy = SelectionPolicy()) -> SelectionResult:
    if not scores:
        raise DataError("no channel scores to select from")
    ids = [s.channel_id for s in scores]
    if len(set(ids)) != len(ids):
        dup = sorted({c for c in ids if ids.count(c) > 1})
        raise DataError(f"duplicate channel ids: {dup}")
    m = len(scores)
    k = policy.top_k(m)
    ev_rank = rank_by(scores, "ev")
    c50_rank = rank_by(scores, "c50_db")
    i_ev = frozenset(ev_rank[:k])
    i_c50 = frozenset(c50_rank[:k])
    selected, branch = apply_rule(m, i_ev, i_c50, ev_rank, policy)
    return SelectionResult(selected, branch, i_ev, i_c50, i_ev & i_c50, tuple(ev_rank))


def _parse_c50(value, channel):
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise DataError(f"C50 for channel {channel}: expected a number or 'inf', got {value!r}")


def load_c50_scores(path) -> dict[str, float]:
    """Read ``{channel_id: c50_db}``; ``"inf"`` encodes an anechoic channel."""
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read C50 scores from {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"{path}: expected a JSON object of channel -> C50")
    return {str(k): _parse_c50(v, k) for k, v in obj.items()}


def dump_c50_scores(scores: dict, path) -> None:
    out = {k: ("inf" if v == math.inf else round(float(v), 6)) for k, v in sorted(scores.items())}
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


def score_channels(waves: Iterable[Waveform], c50: dict | None = None) -> list[ChannelScore]:
    """EV for every channel plus C50 looked up by channel id.

    Without C50 information the EV score stands in for C50, so both rankings
    coincide and the rule degenerates to ranking by EV.
    """
    out = []
    for w in waves:
        ev = envelope_variance(w)
        if c50 is None:
            c = ev
        else:
            if w.channel_id not in c50:
                raise DataError(f"no C50 score for channel {w.channel_id}")
            c = c50[w.channel_id]
        out.append(ChannelScore(w.channel_id, ev, c))
    return out
