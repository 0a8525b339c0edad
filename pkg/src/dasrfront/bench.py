"""Reusable experiment loops for the benchmark scripts and acceptance suite."""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

from .audio import istft, stft_multi
from .beamformer import enhance
from .counting import nmesc_count
from .scene import SceneSpec, clustered_vectors, simulate_scene
from .scoring import si_snr

ENHANCEMENT_SCENE = dict(n_speakers=2, n_mics=8, mic_groups=((0, 1, 2, 3), (4, 5, 6, 7)),
                         t60_s=0.3, snr_db=5.0, duration_s=8.0)


@dataclass(frozen=True)
class EnhancementRun:
    seed: int
    speaker: int
    reference: int
    output_db: float
    best_input_db: float

    @property
    def improvement_db(self) -> float:
        return self.output_db - self.best_input_db


def enhancement_trial(seed: int, **overrides) -> list[EnhancementRun]:
    """Oracle-mask SP-MWF on one simulated scene.

    Each input channel is scored against the speaker's image at that same
    channel; the output is scored against the image at the chosen reference.
    """
    spec = SceneSpec(seed=seed, **{**ENHANCEMENT_SCENE, **overrides})
    truth = simulate_scene(spec)
    y = stft_multi(truth.mixture, spec.stft)
    runs = []
    for s in range(spec.n_speakers):
        out, fb = enhance(y, truth.target_mask(s))
        est = istft(out).samples
        best_in = max(si_snr(truth.images[s, m], truth.mixture.data[m]) for m in range(spec.n_mics))
        runs.append(EnhancementRun(seed, s, fb.reference, si_snr(truth.images[s, fb.reference], est), best_in))
    return runs


def enhancement_summary(seeds) -> dict:
    runs = [r for seed in seeds for r in enhancement_trial(seed)]
    by_seed = {}
    for r in runs:
        by_seed.setdefault(r.seed, []).append(r.improvement_db > 0)
    wins = sum(all(v) for v in by_seed.values())
    return {
        "seeds": len(by_seed),
        "seeds_improved": wins,
        "runs_improved": sum(r.improvement_db > 0 for r in runs),
        "runs": len(runs),
        "median_improvement_db": statistics.median(r.improvement_db for r in runs),
        "per_run": [(r.seed, r.speaker, r.reference, round(r.improvement_db, 3)) for r in runs],
    }


def counting_trials(n_trials: int, seed: int = 0, centroid_cos: float = 0.8, per_cluster: int = 12,
                    dim: int = 64, max_inter: float = 0.2) -> list[tuple[int, int]]:
    """``(true k, estimated k)`` for synthetic clusters, k cycling 1..8."""
    rng = np.random.default_rng(seed)
    out = []
    for t in range(n_trials):
        k = t % 8 + 1
        x, _ = clustered_vectors(k, rng, per_cluster, dim, centroid_cos, max_inter)
        out.append((k, nmesc_count(x)[0]))
    return out
