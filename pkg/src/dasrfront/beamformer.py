"""Mask-based spatial-prediction multichannel Wiener filter.

The filter predicts the target image at a reference microphone ``r``::

    w_f = (R_x[r, r] * R_n^-1 R_x e_r) / (mu * R_x[r, r] + (R_x e_r)^H R_n^-1 R_x e_r)

and the output is ``w_f^H y(t, f)``.  No normalisation post-gain is applied;
the only post-processing is a floored TF mask.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Spectrogram
from .errors import ConfigError, DataError, FileFormatError

MASK_MAGIC = b"MSK1"


@dataclass(frozen=True)
class TfMask:
    values: np.ndarray
    role: str = "target"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"mask must be (frames, bins), got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0 or v.max(initial=0.0) > 1:
            raise DataError("mask values must lie in [0, 1]")
        if self.role not in ("target", "noise"):
            raise ConfigError(f"mask role must be 'target' or 'noise', got {self.role!r}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def complement(self) -> "TfMask":
        return TfMask(1.0 - self.values, "noise" if self.role == "target" else "target")


def write_mask(mask: TfMask, path) -> None:
    frames, bins = mask.shape
    Path(path).write_bytes(MASK_MAGIC + struct.pack("<II", frames, bins) + mask.values.astype("<f4").tobytes())


def read_mask(path, role: str = "target") -> TfMask:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    if len(raw) < 12:
        raise FileFormatError(path, "header", 0, "file shorter than the 12-byte header")
    if raw[:4] != MASK_MAGIC:
        raise FileFormatError(path, "magic", 0, f"expected {MASK_MAGIC!r}, got {raw[:4]!r}")
    frames, bins = struct.unpack_from("<II", raw, 4)
    if len(raw) != 12 + 4 * frames * bins:
        raise FileFormatError(path, "payload", 12, f"expected {4 * frames * bins} bytes for "
                                                   f"{frames}x{bins}, got {len(raw) - 12}")
    v = np.frombuffer(raw, dtype="<f4", offset=12).reshape(frames, bins).astype(np.float64)
    if not np.all(np.isfinite(v)) or (v.size and (v.min() < 0 or v.max() > 1)):
        raise FileFormatError(path, "payload", 12, "mask values outside [0, 1]")
    return TfMask(v, role)


@dataclass(frozen=True)
class CovariancePair:
    r_x: np.ndarray  # (bins, M, M)
    r_n: np.ndarray
    frame_count: int

    @property
    def n_channels(self) -> int:
        return self.r_x.shape[-1]


@dataclass(frozen=True)
class FilterBank:
    w: np.ndarray  # (bins, M)
    reference: int
    mu: float = 0.0
    degenerate_bins: tuple = ()

    def __post_init__(self):
        if not np.all(np.isfinite(self.w)):
            raise DataError("non-finite filter weights")
        if not 0 <= self.reference < self.w.shape[1]:
            raise DataError(f"reference {self.reference} out of range for {self.w.shape[1]} channels")

    def to_json(self) -> str:
        return json.dumps({
            "reference": self.reference,
            "mu": self.mu,
            "degenerate_bins": list(self.degenerate_bins),
            "weights": [[[float(z.real), float(z.imag)] for z in row] for row in self.w],
        })


def _check_shape(spec: Spectrogram, mask: TfMask):
    if mask.shape != (spec.n_frames, spec.n_bins):
        raise DataError(f"{mask.role} mask shape {mask.shape} does not match spectrogram "
                        f"({spec.n_frames}, {spec.n_bins})")


def masked_covariance(y: np.ndarray, m: np.ndarray, role: str = "mask") -> np.ndarray:
    """sum_t m(t,f) y y^H / sum_t m(t,f) for y of shape (frames, bins, M)."""
    weight = m.sum(axis=0)
    empty = np.flatnonzero(weight <= 0)
    if empty.size:
        raise DataError(f"{role} mask is all-zero at frequency bin {int(empty[0])}")
    r = np.einsum("tf,tfi,tfj->fij", m, y, y.conj()) / weight[:, None, None]
    return 0.5 * (r + np.conj(np.swapaxes(r, -1, -2)))


def estimate_covariances(spec: Spectrogram, target_mask: TfMask, noise_mask: TfMask | None = None,
                         frames=None) -> CovariancePair:
    """Mask-weighted target and noise spatial covariances per frequency.

    ``noise_mask`` defaults to ``1 - target_mask``.  ``frames`` optionally
    restricts the estimate to a subset of frame indices.
    """
    if noise_mask is None:
        noise_mask = target_mask.complement()
    _check_shape(spec, target_mask)
    _check_shape(spec, noise_mask)
    y, mx, mn = spec.data, target_mask.values, noise_mask.values
    if frames is not None:
        y, mx, mn = y[frames], mx[frames], mn[frames]
    r_x = masked_covariance(y, mx, "target")
    r_n = masked_covariance(y, mn, "noise")
    return CovariancePair(r_x, r_n, y.shape[0])


def load_diagonal(r: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    m = r.shape[-1]
    tr = np.real(np.trace(r, axis1=-2, axis2=-1))
    return r + (eps * tr / m)[..., None, None] * np.eye(m)


def spmwf_weights(cov: CovariancePair, reference: int, mu: float = 0.0, loading: float = 1e-6) -> FilterBank:
    if mu < 0:
        raise ConfigError(f"mu must be >= 0, got {mu}")
    m = cov.n_channels
    if not 0 <= reference < m:
        raise ConfigError(f"reference {reference} out of range for {m} channels")
    r_n = load_diagonal(cov.r_n, loading)
    rx_r = cov.r_x[:, :, reference]  # R_x e_r, (bins, M)
    phi_r = np.real(cov.r_x[:, reference, reference])
    try:
        v = np.linalg.solve(r_n, rx_r[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise DataError("noise covariance is singular after diagonal loading") from exc
    den = mu * phi_r + np.real(np.einsum("fi,fi->f", rx_r.conj(), v))
    scale = np.max(np.abs(cov.r_x), axis=(-2, -1))
    bad = ~(np.abs(den) > 1e-300) | (phi_r <= 1e-14 * np.maximum(scale, 1e-300))
    w = np.zeros_like(v)
    ok = ~bad
    w[ok] = phi_r[ok, None] * v[ok] / den[ok, None]
    if not np.all(np.isfinite(w)):
        raise DataError("noise covariance is singular after diagonal loading")
    return FilterBank(w, reference, mu, tuple(int(f) for f in np.flatnonzero(bad)))


def select_reference(cov: CovariancePair) -> int:
    """Channel with the largest frequency-summed target-to-noise power ratio."""
    px = np.real(np.diagonal(cov.r_x, axis1=-2, axis2=-1))
    pn = np.real(np.diagonal(cov.r_n, axis1=-2, axis2=-1))
    ratio = px / np.maximum(pn, np.finfo(float).tiny)
    score = np.zeros(cov.n_channels)
    for f in range(ratio.shape[0]):  # fixed summation order
        score += ratio[f]
    return int(np.argmax(score))


def apply_filter(spec: Spectrogram, fb: FilterBank) -> Spectrogram:
    if fb.w.shape != (spec.n_bins, spec.n_channels):
        raise DataError(f"filter shape {fb.w.shape} does not match spectrogram "
                        f"({spec.n_bins} bins, {spec.n_channels} channels)")
    out = np.einsum("fm,tfm->tf", fb.w.conj(), spec.data)
    return spec.with_data(out[:, :, None], (spec.channel_ids[fb.reference],))


def mask_postfilter(spec: Spectrogram, mask: TfMask, floor: float = 0.1) -> Spectrogram:
    if spec.n_channels != 1:
        raise DataError("mask postfilter expects a single-channel spectrogram")
    _check_shape(spec, mask)
    gain = np.maximum(mask.values, floor)
    return spec.with_data(spec.data * gain[:, :, None], spec.channel_ids)


def enhance(spec: Spectrogram, target_mask: TfMask, noise_mask: TfMask | None = None, *, mu: float = 0.0,
            floor: float = 0.1, loading: float = 1e-6, reference: int | None = None, frames=None):
    """Covariances, reference choice, SP-MWF and postfilter in one call.

    Returns ``(enhanced single-channel spectrogram, FilterBank)``.
    """
    cov = estimate_covariances(spec, target_mask, noise_mask, frames)
    r = select_reference(cov) if reference is None else reference
    fb = spmwf_weights(cov, r, mu, loading)
    return mask_postfilter(apply_filter(spec, fb), target_mask, floor), fb
