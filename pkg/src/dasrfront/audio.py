"""Waveform containers and a perfect-reconstruction STFT.

Padding policy: ``stft`` prepends ``frame_len - hop`` zeros and appends
zeros until the last sample of the signal sits inside a frame whose
trailing ``frame_len - hop`` samples are also padding.  Every original
sample is therefore covered by the same number of frames, which is what
makes weighted overlap-add exact.  ``istft`` trims back to the original
length, which the :class:`Spectrogram` remembers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

WINDOWS = ("hann", "sqrt_hann")


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int
    channel_id: str = "0"

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise DataError(f"waveform must be 1-D, got shape {x.shape}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise DataError(f"channel {self.channel_id}: non-finite samples")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class MultichannelRecording:
    """Sample-aligned channels, stored as a (channels, samples) array."""

    data: np.ndarray
    sample_rate: int
    channel_ids: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.data, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise DataError(f"recording must be (channels, samples), got {x.shape}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise DataError("recording contains non-finite samples")
        ids = tuple(str(c) for c in self.channel_ids) or tuple(str(i) for i in range(x.shape[0]))
        if len(ids) != x.shape[0]:
            raise DataError(f"{len(ids)} channel ids for {x.shape[0]} channels")
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate channel ids: {ids}")
        object.__setattr__(self, "data", x)
        object.__setattr__(self, "channel_ids", ids)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def channel(self, index: int) -> Waveform:
        return Waveform(self.data[index], self.sample_rate, self.channel_ids[index])

    def waveforms(self) -> list[Waveform]:
        return [self.channel(i) for i in range(self.n_channels)]

    def select(self, channel_ids: Sequence[str]) -> "MultichannelRecording":
        index = [self.channel_ids.index(c) for c in channel_ids]
        return MultichannelRecording(self.data[index], self.sample_rate, tuple(channel_ids))

    @classmethod
    def from_waveforms(cls, waves: Sequence[Waveform]) -> "MultichannelRecording":
        if not waves:
            raise DataError("no waveforms")
        rates = {w.sample_rate for w in waves}
        lengths = {len(w) for w in waves}
        if len(rates) != 1 or len(lengths) != 1:
            raise DataError("waveforms differ in sample rate or length")
        return cls(np.stack([w.samples for w in waves]), rates.pop(), tuple(w.channel_id for w in waves))


def make_window(name: str, frame_len: int) -> np.ndarray:
    # periodic hann: exactly COLA-friendly
    n = np.arange(frame_len)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len)
    if name == "hann":
        return hann
    if name == "sqrt_hann":
        return np.sqrt(hann)
    raise ConfigError(f"unknown window {name!r}, expected one of {WINDOWS}")


def _ola_profile(window: np.ndarray, hop: int) -> np.ndarray:
    """Steady-state sum of squared shifted windows, one value per phase."""
    w2 = window**2
    return np.array([w2[n::hop].sum() for n in range(hop)])


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 1024
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len & (self.frame_len - 1):
            raise ConfigError(f"frame_len must be a power of two, got {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise ConfigError(f"hop must be in (0, frame_len], got {self.hop}")
        if self.window not in WINDOWS:
            raise ConfigError(f"unknown window {self.window!r}")
        if not self.is_cola():
            raise ConfigError(
                f"{self.window} window with frame_len={self.frame_len}, hop={self.hop} is not COLA"
            )

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def analysis_window(self) -> np.ndarray:
        return make_window(self.window, self.frame_len)

    def is_cola(self, rtol: float = 1e-10) -> bool:
        """Analysis*synthesis window product overlap-adds to a constant."""
        prof = _ola_profile(make_window(self.window, self.frame_len), self.hop)
        return bool(prof.min() > 0 and prof.max() - prof.min() <= rtol * prof.mean())

    def ola_constant(self) -> float:
        return float(_ola_profile(self.analysis_window(), self.hop).mean())

    def padding(self, length: int) -> tuple[int, int]:
        front = self.frame_len - self.hop
        covered = front + length + (self.frame_len - self.hop)
        n_frames = max(1, -(-(covered - self.frame_len) // self.hop) + 1)
        back = (n_frames - 1) * self.hop + self.frame_len - front - length
        return front, back

    def n_frames(self, length: int) -> int:
        front, back = self.padding(length)
        return (front + length + back - self.frame_len) // self.hop + 1


SHIPPED_CONFIGS = (
    StftConfig(1024, 256, "hann"),
    StftConfig(512, 128, "hann"),
    StftConfig(1024, 512, "sqrt_hann"),
    StftConfig(512, 256, "sqrt_hann"),
)


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT values indexed ``data[frame, bin, channel]``."""

    data: np.ndarray
    config: StftConfig
    sample_rate: int
    length: int
    channel_ids: tuple = field(default=())

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[1] != self.config.n_bins:
            raise DataError(f"spectrogram shape {d.shape} does not match {self.config.n_bins} bins")
        object.__setattr__(self, "data", d.astype(np.complex128, copy=False))
        ids = tuple(self.channel_ids) or tuple(str(i) for i in range(d.shape[2]))
        object.__setattr__(self, "channel_ids", ids)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]

    def channel(self, index: int) -> "Spectrogram":
        return Spectrogram(self.data[:, :, index : index + 1], self.config, self.sample_rate,
                           self.length, (self.channel_ids[index],))

    def with_data(self, data: np.ndarray, channel_ids=()) -> "Spectrogram":
        return Spectrogram(data, self.config, self.sample_rate, self.length, channel_ids)


def _frames(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    front, back = cfg.padding(x.shape[-1])
    padded = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(front, back)])
    view = np.lib.stride_tricks.sliding_window_view(padded, cfg.frame_len, axis=-1)
    return view[..., :: cfg.hop, :]


def stft(wave: Waveform, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """One-sided STFT of a single channel; result has one channel."""
    if len(wave) < cfg.frame_len:
        raise DataError(f"signal of {len(wave)} samples is shorter than one frame ({cfg.frame_len})")
    frames = _frames(wave.samples, cfg) * cfg.analysis_window()
    spec = np.fft.rfft(frames, axis=-1)
    return Spectrogram(spec[:, :, None], cfg, wave.sample_rate, len(wave), (wave.channel_id,))


def stft_multi(rec: MultichannelRecording, cfg: StftConfig = StftConfig()) -> Spectrogram:
    if rec.n_samples < cfg.frame_len:
        raise DataError(f"signal of {rec.n_samples} samples is shorter than one frame ({cfg.frame_len})")
    frames = _frames(rec.data, cfg) * cfg.analysis_window()
    spec = np.fft.rfft(frames, axis=-1)  # (channels, frames, bins)
    return Spectrogram(np.transpose(spec, (1, 2, 0)), cfg, rec.sample_rate, rec.n_samples, rec.channel_ids)


def _overlap_add(spec: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    # spec: (..., frames, bins)
    win = cfg.analysis_window()
    frames = np.fft.irfft(spec, n=cfg.frame_len, axis=-1) * win
    n_frames = frames.shape[-2]
    front, back = cfg.padding(length)
    total = (n_frames - 1) * cfg.hop + cfg.frame_len
    out = np.zeros(frames.shape[:-2] + (total,))
    norm = np.zeros(total)
    w2 = win**2
    for t in range(n_frames):
        s = t * cfg.hop
        out[..., s : s + cfg.frame_len] += frames[..., t, :]
        norm[s : s + cfg.frame_len] += w2
    seg = slice(front, front + length)
    return out[..., seg] / norm[seg]


def istft(spec: Spectrogram) -> Waveform:
    if not spec.config.is_cola():
        raise ConfigError("istft requires a COLA-valid STFT configuration")
    if spec.n_channels != 1:
        raise DataError(f"istft expects a single-channel spectrogram, got {spec.n_channels}")
    expected = spec.config.n_frames(spec.length)
    if spec.n_frames != expected:
        raise DataError(f"spectrogram has {spec.n_frames} frames, expected {expected} for length {spec.length}")
    x = _overlap_add(spec.data[:, :, 0], spec.config, spec.length)
    return Waveform(x, spec.sample_rate, spec.channel_ids[0])


def istft_multi(spec: Spectrogram) -> MultichannelRecording:
    if not spec.config.is_cola():
        raise ConfigError("istft requires a COLA-valid STFT configuration")
    x = _overlap_add(np.transpose(spec.data, (2, 0, 1)), spec.config, spec.length)
    return MultichannelRecording(x, spec.sample_rate, spec.channel_ids)
