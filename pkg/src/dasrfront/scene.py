"""Deterministic synthetic multichannel scenes with full ground truth.

Sources are 4 Hz amplitude-modulated pink noise gated by an on/off activity
pattern.  Each source reaches each microphone through an impulse response
made of a direct impulse plus an exponentially decaying noise tail; tails
are partly shared inside a microphone group so that nearby microphones are
correlated.  Noise is partly shared inside a group as well.

Every random draw comes from a counter-based generator keyed by
``(seed, stream)``, so the output does not depend on the order in which
sources or microphones are synthesised.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .audio import MultichannelRecording, StftConfig, Waveform, stft_multi
from .beamformer import TfMask, write_mask
from .channel_select import c50_from_rir, dump_c50_scores
from .counting import EmbeddingSet, write_embeddings
from .errors import ConfigError
from .scoring import SegmentationHypothesis, write_rttm
from .wavfile import write_wav

# stream kinds for the counter-based generator
_SOURCE, _ACTIVITY, _TAIL_GROUP, _TAIL_MIC, _NOISE_GROUP, _NOISE_MIC, _DELAY, _EMB, _RIR = range(1, 10)


def stream_rng(seed: int, kind: int, a: int = 0, b: int = 0) -> np.random.Generator:
    code = (kind << 40) | ((a & 0xFFFFF) << 20) | (b & 0xFFFFF)
    key = ((int(seed) & (2**64 - 1)) << 64) | code
    return np.random.Generator(np.random.Philox(key=key))


def decay_rate(t60_s: float) -> float:
    """Amplitude decay constant: energy falls 60 dB after t60 seconds."""
    return 3.0 * math.log(10.0) / t60_s


def c50_analytic(t60_s: float) -> float:
    """C50 of a continuous exponential energy decay starting at the onset."""
    return 10.0 * math.log10(math.exp(2.0 * decay_rate(t60_s) * 0.05) - 1.0)


def make_rir(delay_ms: float, t60_s: float, sample_rate: int = 16000, length_s: float | None = None,
             seed: int = 0, direct_gain: float = 1.0, tail_noise: np.ndarray | None = None) -> Waveform:
    """Direct impulse at ``delay_ms`` followed by Gaussian noise whose energy
    decays as exp(-2*delta*t).  ``t60_s == 0`` gives a pure impulse."""
    if t60_s < 0:
        raise ConfigError(f"t60 must be >= 0, got {t60_s}")
    if length_s is None:
        length_s = 1.2 * t60_s + delay_ms / 1000.0 + 0.01
    d = int(round(delay_ms * sample_rate / 1000.0))
    n = max(int(round(length_s * sample_rate)), d + 1)
    h = np.zeros(n)
    h[d] = direct_gain
    if t60_s > 0 and d + 1 < n:
        m = n - d - 1
        if tail_noise is None:
            tail_noise = stream_rng(seed, _RIR).standard_normal(m)
        t = np.arange(1, m + 1) / sample_rate
        h[d + 1 :] += tail_noise[:m] * np.exp(-decay_rate(t60_s) * t)
    return Waveform(h, sample_rate, "rir")


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n=n)
    return x / np.std(x)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_speakers: int = 2
    n_mics: int = 4
    mic_groups: tuple = ()
    group_delays_ms: tuple = ()
    t60_s: tuple | float = 0.3
    snr_db: tuple | float = 20.0
    duration_s: float = 10.0
    sample_rate: int = 16000
    drr_db: float = 0.0
    tail_shared: float = 0.7
    noise_shared: float = 0.64
    segments: tuple | None = None
    embedding_dim: int = 32
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if not 1 <= self.n_speakers <= 8:
            raise ConfigError(f"n_speakers must be in 1..8, got {self.n_speakers}")
        if not 1 <= self.n_mics <= 64:
            raise ConfigError(f"n_mics must be in 1..64, got {self.n_mics}")
        if self.duration_s < 2:
            raise ConfigError(f"duration must be at least 2 s, got {self.duration_s}")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        groups = tuple(tuple(int(m) for m in g) for g in self.mic_groups) or (tuple(range(self.n_mics)),)
        flat = sorted(m for g in groups for m in g)
        if flat != list(range(self.n_mics)) or any(not g for g in groups):
            raise ConfigError(f"mic_groups {groups} do not partition {self.n_mics} microphones")
        object.__setattr__(self, "mic_groups", groups)
        delays = tuple(float(d) for d in self.group_delays_ms) or tuple(5.0 * g for g in range(len(groups)))
        if len(delays) != len(groups) or min(delays) < 0:
            raise ConfigError("group_delays_ms must give one non-negative delay per group")
        object.__setattr__(self, "group_delays_ms", delays)
        t60 = self._per(self.t60_s, self.n_mics, "t60_s")
        if min(t60) < 0:
            raise ConfigError("t60 must be >= 0")
        object.__setattr__(self, "t60_s", t60)
        object.__setattr__(self, "snr_db", self._per(self.snr_db, self.n_speakers, "snr_db"))
        if not 0 <= self.tail_shared <= 1 or not 0 <= self.noise_shared <= 1:
            raise ConfigError("shared fractions must be in [0, 1]")
        if self.segments is not None:
            segs = tuple((int(s), float(a), float(b)) for s, a, b in self.segments)
            for s, a, b in segs:
                if not 0 <= s < self.n_speakers:
                    raise ConfigError(f"segment speaker {s} out of range")
                if not 0 <= a < b <= self.duration_s:
                    raise ConfigError(f"segment ({a}, {b}) infeasible for a {self.duration_s} s scene")
            missing = set(range(self.n_speakers)) - {s for s, _, _ in segs}
            if missing:
                raise ConfigError(f"speakers {sorted(missing)} have no segments")
            object.__setattr__(self, "segments", segs)
        if isinstance(self.stft, dict):
            object.__setattr__(self, "stft", StftConfig(**self.stft))

    @staticmethod
    def _per(value, n, name):
        if isinstance(value, (int, float)):
            return (float(value),) * n
        vals = tuple(float(v) for v in value)
        if len(vals) != n:
            raise ConfigError(f"{name} needs {n} values, got {len(vals)}")
        return vals

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scene spec fields: {sorted(unknown)}")
        d = dict(d)
        if "stft" in d:
            d["stft"] = StftConfig(**d["stft"])
        for k in ("mic_groups", "segments"):
            if d.get(k) is not None:
                d[k] = tuple(tuple(x) for x in d[k])
        for k in ("group_delays_ms",):
            if k in d:
                d[k] = tuple(d[k])
        for k in ("t60_s", "snr_db"):
            if isinstance(d.get(k), list):
                d[k] = tuple(d[k])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mic_groups"] = [list(g) for g in self.mic_groups]
        d["segments"] = None if self.segments is None else [list(s) for s in self.segments]
        return json.loads(json.dumps(d))

    @property
    def channel_ids(self) -> tuple:
        return tuple(f"{m:02d}" for m in range(self.n_mics))

    def group_of(self, mic: int) -> int:
        return next(g for g, members in enumerate(self.mic_groups) if mic in members)


@dataclass
class SceneTruth:
    spec: SceneSpec
    mixture: MultichannelRecording
    images: np.ndarray  # (sources, mics, samples)
    noise: np.ndarray  # (mics, samples)
    rirs: list  # [source][mic] -> ndarray
    masks: np.ndarray  # (sources, frames, bins)
    rttm: SegmentationHypothesis
    c50_db: dict
    embeddings: EmbeddingSet | None = None

    @property
    def n_speakers(self) -> int:
        return self.spec.n_speakers

    @property
    def speaker_labels(self) -> list[str]:
        return [f"spk{s}" for s in range(self.spec.n_speakers)]

    def target_mask(self, source: int) -> TfMask:
        return TfMask(self.masks[source], "target")


def speaker_activity(spec: SceneSpec) -> list[tuple[int, float, float]]:
    if spec.segments is not None:
        return sorted(spec.segments, key=lambda s: (s[1], s[0]))
    out = []
    dur = spec.duration_s
    for s in range(spec.n_speakers):
        rng = stream_rng(spec.seed, _ACTIVITY, s)
        t = rng.uniform(0.0, min(2.0, 0.4 * dur))
        while t < dur - 0.5:
            end = min(dur, t + rng.uniform(1.0, 3.0))
            out.append((s, round(t, 2), round(end, 2)))
            t = end + rng.uniform(0.5, 1.5) * max(1, spec.n_speakers - 1)
    return sorted(out, key=lambda x: (x[1], x[0]))


def _gate(segs, n, sr, ramp_s=0.01):
    g = np.zeros(n)
    r = max(1, int(ramp_s * sr))
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
    for a, b in segs:
        i, j = int(round(a * sr)), min(n, int(round(b * sr)))
        g[i:j] = 1.0
        k = min(r, (j - i) // 2)
        g[i : i + k] *= ramp[:k]
        g[j - k : j] *= ramp[:k][::-1]
    return g


def _source_signal(spec: SceneSpec, s: int, segs) -> np.ndarray:
    n = int(round(spec.duration_s * spec.sample_rate))
    rng = stream_rng(spec.seed, _SOURCE, s)
    t = np.arange(n) / spec.sample_rate
    phase = rng.uniform(0, 2 * np.pi)
    env = (1.0 + 0.9 * np.sin(2 * np.pi * 4.0 * t + phase)) / 1.9
    return pink_noise(n, rng) * env * _gate(segs, n, spec.sample_rate)


def _rirs(spec: SceneSpec, s: int) -> list[np.ndarray]:
    sr = spec.sample_rate
    out = []
    delay_rng = stream_rng(spec.seed, _DELAY, s)
    src_offset = delay_rng.uniform(0.0, 3.0, size=len(spec.mic_groups))
    mic_offset = delay_rng.uniform(0.0, 1.0, size=spec.n_mics)
    max_len = int(round((1.2 * max(spec.t60_s) + 0.05) * sr)) + int(round(max(spec.group_delays_ms) * sr / 1000)) + 100
    for m in range(spec.n_mics):
        g = spec.group_of(m)
        t60 = spec.t60_s[m]
        delay = spec.group_delays_ms[g] + src_offset[g] + mic_offset[m]
        shared = stream_rng(spec.seed, _TAIL_GROUP, s, g).standard_normal(max_len)
        own = stream_rng(spec.seed, _TAIL_MIC, s, m).standard_normal(max_len)
        tail = math.sqrt(spec.tail_shared) * shared + math.sqrt(1.0 - spec.tail_shared) * own
        if t60 > 0:
            tail_energy = 1.0 / (math.exp(2 * decay_rate(t60) / sr) - 1.0)
        else:
            tail_energy = 1.0
        gain = math.sqrt(tail_energy) * 10.0 ** (spec.drr_db / 20.0)
        h = make_rir(delay, t60, sr, max_len / sr, direct_gain=gain, tail_noise=tail).samples
        out.append(h / np.sqrt(np.sum(h**2)))
    return out


def oracle_masks(images: np.ndarray, mixture: np.ndarray, cfg: StftConfig, sample_rate: int) -> np.ndarray:
    """|S| / (|S| + |everything else|), magnitudes summed over microphones."""
    y = stft_multi(MultichannelRecording(mixture, sample_rate), cfg).data
    masks = []
    for img in images:
        x = stft_multi(MultichannelRecording(img, sample_rate), cfg).data
        s_mag = np.abs(x).sum(axis=-1)
        i_mag = np.abs(y - x).sum(axis=-1)
        tot = s_mag + i_mag
        masks.append(np.where(tot > 0, s_mag / np.where(tot > 0, tot, 1.0), 0.0))
    return np.clip(np.stack(masks), 0.0, 1.0)


def synthetic_embeddings(spec: SceneSpec, activity, piece_s: float = 1.5, min_cos: float = 0.9,
                         quality: Sequence[float] | None = None) -> EmbeddingSet:
    """Clustered embeddings standing in for an external speaker-embedding
    extractor: one vector per (microphone, activity piece of at most
    ``piece_s``), drawn around a per-speaker centroid."""
    d = spec.embedding_dim
    rng = stream_rng(spec.seed, _EMB, 0)
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    centroids = basis[:, : spec.n_speakers].T if spec.n_speakers <= d else rng.standard_normal((spec.n_speakers, d))
    quality = quality or [min_cos] * spec.n_mics
    vecs, spans, chans = [], [], []
    for m, cid in enumerate(spec.channel_ids):
        mrng = stream_rng(spec.seed, _EMB, 1, m)
        for s, a, b in activity:
            t = a
            while t < b - 1e-9:
                e = min(b, t + piece_s)
                u = mrng.standard_normal(d)
                c = centroids[s]
                u -= (u @ c) * c
                u /= np.linalg.norm(u)
                q = quality[m]
                vecs.append(q * c + math.sqrt(1 - q * q) * u)
                spans.append((t, e))
                chans.append(cid)
                t = e
    return EmbeddingSet(np.array(vecs).reshape(-1, d), np.array(spans).reshape(-1, 2), tuple(chans))


def clustered_vectors(k: int, rng: np.random.Generator, per_cluster: int = 12, dim: int = 64,
                      centroid_cos: float = 0.9, max_inter: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """``k`` clusters of unit vectors, each at cosine ``centroid_cos`` to its
    centroid, with centroids drawn until all pairwise |cosines| are at most
    ``max_inter``.  Returns ``(vectors, labels)``."""
    cents = []
    while len(cents) < k:
        c = rng.standard_normal(dim)
        c /= np.linalg.norm(c)
        if all(abs(c @ o) <= max_inter for o in cents):
            cents.append(c)
    vecs, labels = [], []
    for j, c in enumerate(cents):
        for _ in range(per_cluster):
            u = rng.standard_normal(dim)
            u -= (u @ c) * c
            u /= np.linalg.norm(u)
            vecs.append(centroid_cos * c + math.sqrt(1 - centroid_cos**2) * u)
            labels.append(j)
    return np.array(vecs), np.array(labels)


def simulate_scene(spec: SceneSpec) -> SceneTruth:
    sr = spec.sample_rate
    n = int(round(spec.duration_s * sr))
    activity = speaker_activity(spec)
    images = np.zeros((spec.n_speakers, spec.n_mics, n))
    rirs = []
    for s in range(spec.n_speakers):
        segs = [(a, b) for k, a, b in activity if k == s]
        src = _source_signal(spec, s, segs)
        hs = _rirs(spec, s)
        rirs.append(hs)
        for m, h in enumerate(hs):
            images[s, m] = fftconvolve(src, h)[:n]

    noise = np.zeros((spec.n_mics, n))
    for g, members in enumerate(spec.mic_groups):
        shared = stream_rng(spec.seed, _NOISE_GROUP, g).standard_normal(n)
        for m in members:
            own = stream_rng(spec.seed, _NOISE_MIC, m).standard_normal(n)
            noise[m] = math.sqrt(spec.noise_shared) * shared + math.sqrt(1 - spec.noise_shared) * own
    noise_power = float(np.mean(noise**2))

    for s in range(spec.n_speakers):
        active = _gate([(a, b) for k, a, b in activity if k == s], n, sr, ramp_s=0.0) > 0
        power = float(np.mean(images[s][:, active] ** 2)) if active.any() else 0.0
        if math.isinf(spec.snr_db[s]):
            continue
        if power > 0:
            images[s] *= math.sqrt(noise_power * 10.0 ** (spec.snr_db[s] / 10.0) / power)
    if all(math.isinf(v) and v > 0 for v in spec.snr_db):
        noise[:] = 0.0

    mixture = images.sum(axis=0) + noise
    peak = float(np.max(np.abs(mixture)))
    if peak > 0:
        scale = 0.9 / peak
        images *= scale
        noise *= scale
        mixture = images.sum(axis=0) + noise

    masks = oracle_masks(images, mixture, spec.stft, sr)
    rttm = SegmentationHypothesis(tuple((f"spk{s}", a, b) for s, a, b in activity), f"scene{spec.seed}")
    c50 = {cid: float(np.mean([c50_from_rir(Waveform(rirs[s][m], sr)) for s in range(spec.n_speakers)]))
           for m, cid in enumerate(spec.channel_ids)}
    return SceneTruth(
        spec=spec,
        mixture=MultichannelRecording(mixture, sr, spec.channel_ids),
        images=images,
        noise=noise,
        rirs=rirs,
        masks=masks,
        rttm=rttm,
        c50_db=c50,
        embeddings=synthetic_embeddings(spec, activity),
    )


def write_scene(truth: SceneTruth, out_dir) -> dict:
    """Session directory: ch-<id>.wav, refs/, masks/, emb/, ref.rttm,
    c50.json and a manifest.json listing everything."""
    out = Path(out_dir)
    for sub in ("refs", "masks", "emb"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    spec = truth.spec
    files = {"channels": {}, "references": {}, "masks": {}}
    for m, cid in enumerate(spec.channel_ids):
        name = f"ch-{cid}.wav"
        write_wav(out / name, truth.mixture.channel(m))
        files["channels"][cid] = name
    for s, label in enumerate(truth.speaker_labels):
        name = f"refs/{label}.wav"
        write_wav(out / name, MultichannelRecording(truth.images[s], spec.sample_rate, spec.channel_ids))
        files["references"][label] = name
        tname, nname = f"masks/{label}_target.msk", f"masks/{label}_noise.msk"
        write_mask(TfMask(truth.masks[s], "target"), out / tname)
        write_mask(TfMask(1.0 - truth.masks[s], "noise"), out / nname)
        files["masks"][label] = {"target": tname, "noise": nname}
    write_rttm(truth.rttm, out / "ref.rttm")
    files["rttm"] = "ref.rttm"
    dump_c50_scores(truth.c50_db, out / "c50.json")
    files["c50"] = "c50.json"
    if truth.embeddings is not None:
        write_embeddings(truth.embeddings, out / "emb" / "embeddings.emb")
        files["embeddings"] = "emb/embeddings.emb"
        files["embeddings_sidecar"] = "emb/embeddings.emb.json"
    manifest = {
        "session_id": truth.rttm.session_id,
        "sample_rate": spec.sample_rate,
        "n_speakers": spec.n_speakers,
        "speakers": truth.speaker_labels,
        "stft": asdict(spec.stft),
        "spec": spec.to_dict(),
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
