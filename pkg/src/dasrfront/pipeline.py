"""Session-level orchestration used by the command line.

A session directory holds one ``ch-<id>.wav`` per microphone and, as
needed, ``masks/<speaker>_target.msk`` (optionally ``_noise.msk``),
``emb/embeddings.emb`` with its JSON sidecar, ``c50.json`` and
``manifest.json``.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .audio import MultichannelRecording, istft, stft_multi
from .beamformer import enhance, read_mask
from .channel_select import SelectionResult, load_c50_scores, score_channels, select_subset
from .config import PipelineConfig
from .counting import (
    CountEstimate,
    channel_correlation,
    cluster_channels,
    count_speakers,
    read_embeddings,
    resegment_embeddings,
)
from .errors import ConfigError, DataError
from .scene import SceneSpec, simulate_scene, write_scene
from .scoring import DerBreakdown, SegmentationHypothesis, der, read_rttm
from .wavfile import read_wav, write_wav

CHANNEL_RE = re.compile(r"^ch-(.+)\.wav$")


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _resolve(session: Path, value, default):
    if value is None:
        return session / default
    p = Path(value)
    return p if p.is_absolute() else session / p


def load_session(session_dir) -> MultichannelRecording:
    session = Path(session_dir)
    if not session.is_dir():
        raise DataError(f"session directory {session} does not exist")
    found = sorted((m.group(1), p) for p in session.iterdir() if (m := CHANNEL_RE.match(p.name)))
    if not found:
        raise DataError(f"no ch-<id>.wav files in {session}")
    waves = []
    rate = None
    for cid, path in found:
        rec = read_wav(path)
        if rec.n_channels != 1:
            raise DataError(f"{path}: expected a mono file, got {rec.n_channels} channels")
        if rate is not None and rec.sample_rate != rate:
            raise DataError(f"{path}: sample rate {rec.sample_rate} differs from {rate}")
        rate = rec.sample_rate
        waves.append((cid, rec.data[0]))
    n = min(len(x) for _, x in waves)
    if any(len(x) != n for _, x in waves):
        raise DataError(f"channels in {session} differ in length")
    return MultichannelRecording(np.stack([x for _, x in waves]), rate, tuple(c for c, _ in waves))


def micsel(session_dir, cfg: PipelineConfig = PipelineConfig(), rec=None) -> SelectionResult:
    session = Path(session_dir)
    rec = load_session(session) if rec is None else rec
    c50_path = _resolve(session, cfg.paths.c50, "c50.json")
    c50 = load_c50_scores(c50_path) if c50_path.exists() else None
    if c50 is None and cfg.paths.c50 is not None:
        raise DataError(f"C50 score file {c50_path} not found")
    return select_subset(score_channels(rec.waveforms(), c50), cfg.selection)


def count(session_dir, cfg: PipelineConfig = PipelineConfig(), embeddings=None) -> CountEstimate:
    session = Path(session_dir)
    rec = load_session(session)
    emb_path = Path(embeddings) if embeddings else _resolve(session, cfg.paths.embeddings, "emb/embeddings.emb")
    if not emb_path.exists():
        raise DataError(f"embedding file {emb_path} not found")
    emb = resegment_embeddings(read_embeddings(emb_path), cfg.counting.seg_len_s)
    unknown = set(emb.channel_ids) - set(rec.channel_ids)
    if unknown:
        raise DataError(f"embeddings reference unknown channels {sorted(unknown)}")
    corr = channel_correlation(rec, cfg.counting.window_s, cfg.counting.max_lag_ms)
    groups = cluster_channels(corr, cfg.counting.threshold)
    return count_speakers(emb, groups, cfg.counting.max_speakers, cfg.counting.background)


def _frames_for(segments, label, cfg, n_frames, sample_rate, context_s):
    front = cfg.frame_len - cfg.hop
    centers = (np.arange(n_frames) * cfg.hop - front + cfg.frame_len / 2) / sample_rate
    keep = np.zeros(n_frames, dtype=bool)
    for spk, s, e in segments.segments:
        if spk == label:
            keep |= (centers >= float(s) - context_s) & (centers < float(e) + context_s)
    return np.flatnonzero(keep)


def enhance_session(session_dir, cfg: PipelineConfig = PipelineConfig(), masks=None, segments=None,
                    out_dir=None) -> dict:
    """Mic selection, then per speaker: covariances, reference choice,
    SP-MWF, mask postfilter and resynthesis to ``<out_dir>/<speaker>.wav``."""
    session = Path(session_dir)
    rec = load_session(session)
    sel = micsel(session, cfg, rec)
    chosen = [c for c in rec.channel_ids if c in sel.selected]
    sub = rec.select(chosen)
    spec = stft_multi(sub, cfg.stft)

    mask_dir = Path(masks) if masks else _resolve(session, cfg.paths.masks, "masks")
    seg_path = segments if segments else cfg.paths.segments
    seg = read_rttm(_resolve(session, seg_path, "ref.rttm")) if seg_path else None
    labels = sorted(p.name[: -len("_target.msk")] for p in mask_dir.glob("*_target.msk")) if mask_dir.is_dir() else []
    if seg is not None:
        labels = sorted(set(labels) | set(seg.speakers))
    if not labels:
        raise DataError(f"no target masks found in {mask_dir}")

    out = Path(out_dir) if out_dir else session / "enhanced"
    results = {}
    pending = []
    for label in labels:
        tgt = mask_dir / f"{label}_target.msk"
        if not tgt.exists():
            raise DataError(f"missing mask file {tgt}")
        noise_path = mask_dir / f"{label}_noise.msk"
        target = read_mask(tgt, "target")
        noise = read_mask(noise_path, "noise") if noise_path.exists() else None
        frames = None
        if seg is not None:
            frames = _frames_for(seg, label, cfg.stft, spec.n_frames, spec.sample_rate, cfg.beamformer.context_s)
            if frames.size == 0:
                raise DataError(f"speaker {label} has no frames inside its segments")
        bf = cfg.beamformer
        y, fb = enhance(spec, target, noise, mu=bf.mu, floor=bf.floor, loading=bf.loading, frames=frames)
        pending.append((label, istft(y), fb))
    out.mkdir(parents=True, exist_ok=True)
    for label, wave, fb in pending:
        write_wav(out / f"{label}.wav", wave)
        results[label] = {
            "file": f"{label}.wav",
            "reference": chosen[fb.reference],
            "degenerate_bins": len(fb.degenerate_bins),
        }
    report = {"selection": sel.to_dict(), "speakers": results}
    dump_json(report, out / "enhance.json")
    return report


def score(ref_rttm, hyp_rttm, collar: float = 0.25) -> DerBreakdown:
    ref = read_rttm(ref_rttm)
    hyp = read_rttm(hyp_rttm)
    return der(ref, SegmentationHypothesis(hyp.segments, ref.session_id), collar)


def simulate(spec_json, out_dir, seed=None) -> dict:
    try:
        raw = json.loads(Path(spec_json).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scene spec {spec_json}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scene spec {spec_json} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("scene spec must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    spec = SceneSpec.from_dict(raw)
    return write_scene(simulate_scene(spec), out_dir)
