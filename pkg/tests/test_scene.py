import math

import numpy as np
import pytest

from dasrfront.audio import MultichannelRecording, Waveform
from dasrfront.channel_select import c50_from_rir
from dasrfront.counting import channel_correlation, cluster_channels
from dasrfront.errors import ConfigError
from dasrfront.scene import (
    SceneSpec,
    c50_analytic,
    make_rir,
    simulate_scene,
    speaker_activity,
    stream_rng,
    write_scene,
)


def small(**kw):
    base = dict(seed=5, n_speakers=2, n_mics=4, duration_s=3.0, sample_rate=8000, t60_s=0.2)
    base.update(kw)
    return SceneSpec(**base)


def test_rir_t60_zero_is_impulse():
    h = make_rir(2.0, 0.0, 16000).samples
    assert np.count_nonzero(h) == 1 and h[32] == 1.0
    assert c50_from_rir(Waveform(h, 16000)) == math.inf


def test_rir_c50_near_analytic():
    vals = [c50_from_rir(make_rir(0.0, 0.5, 16000, seed=s)) for s in range(20)]
    assert abs(np.mean(vals) - c50_analytic(0.5)) <= 0.3


def test_rir_delay_shift():
    a = c50_from_rir(make_rir(5.0, 0.4, 16000, seed=1))
    b = c50_from_rir(make_rir(10.0, 0.4, 16000, seed=1))
    assert abs(a - b) <= 0.05


def test_rir_energy_envelope():
    h = np.mean([make_rir(0.0, 0.5, 16000, seed=s).samples[1:] ** 2 for s in range(200)], axis=0)
    t = np.arange(1, h.size + 1) / 16000
    expected = np.exp(-2 * 3 * math.log(10) / 0.5 * t)
    block = 800
    ratio = h[: 5 * block].reshape(5, block).sum(1) / expected[: 5 * block].reshape(5, block).sum(1)
    np.testing.assert_allclose(ratio, 1.0, atol=0.15)


def test_streams_are_independent_of_order():
    a = stream_rng(3, 1, 2).standard_normal(5)
    stream_rng(3, 1, 1).standard_normal(100)
    assert np.array_equal(a, stream_rng(3, 1, 2).standard_normal(5))
    assert not np.array_equal(a, stream_rng(4, 1, 2).standard_normal(5))


def test_determinism():
    a, b = simulate_scene(small()), simulate_scene(small())
    assert np.array_equal(a.mixture.data, b.mixture.data)
    assert np.array_equal(a.masks, b.masks)
    assert a.rttm == b.rttm
    assert np.array_equal(a.embeddings.vectors, b.embeddings.vectors)
    c = simulate_scene(small(seed=6))
    assert not np.array_equal(a.mixture.data, c.mixture.data)


def test_mixture_consistency():
    t = simulate_scene(small(n_speakers=3, snr_db=5))
    resid = t.mixture.data - t.images.sum(0) - t.noise
    assert np.linalg.norm(resid) <= 1e-6 * np.linalg.norm(t.mixture.data)
    assert 0 <= t.masks.min() and t.masks.max() <= 1
    assert np.max(np.abs(t.mixture.data)) == pytest.approx(0.9)


def test_clean_single_source_mask_is_one():
    t = simulate_scene(small(n_speakers=1, snr_db=math.inf, t60_s=0.0, segments=((0, 0.5, 2.0),)))
    assert np.all(t.noise == 0)
    cfg = t.spec.stft
    centers = (np.arange(t.masks.shape[1]) * cfg.hop - (cfg.frame_len - cfg.hop) + cfg.frame_len / 2) / 8000
    # frames well inside the active segment
    inside = (centers > 0.5 + cfg.frame_len / 8000) & (centers < 2.0 - cfg.frame_len / 8000)
    assert inside.any()
    np.testing.assert_array_equal(t.masks[0][inside], 1.0)


def test_energy_bookkeeping():
    t = simulate_scene(small(snr_db=20, duration_s=6))
    mix = np.sum(t.mixture.data**2)
    parts = np.sum(t.images**2)
    assert abs(10 * np.log10(mix / parts)) <= 1.0


def test_snr_calibration():
    t = simulate_scene(small(n_speakers=1, snr_db=10.0, segments=((0, 0.0, 3.0),)))
    snr = 10 * np.log10(np.mean(t.images[0] ** 2) / np.mean(t.noise**2))
    assert snr == pytest.approx(10.0, abs=0.2)


def test_group_correlation_structure():
    spec = SceneSpec(seed=2, n_speakers=2, n_mics=8, mic_groups=((0, 1, 2, 3), (4, 5, 6, 7)),
                     snr_db=-5, duration_s=8, t60_s=0.3)
    t = simulate_scene(spec)
    corr = channel_correlation(t.mixture).matrix
    group = np.array([spec.group_of(m) for m in range(8)])
    same = (group[:, None] == group[None, :]) & ~np.eye(8, dtype=bool)
    assert corr[same].min() >= 0.5
    assert corr[group[:, None] != group[None, :]].max() <= 0.3
    assert cluster_channels(corr, 0.3, spec.channel_ids).groups == (
        ("00", "01", "02", "03"), ("04", "05", "06", "07"))


def test_activity_and_rttm_agree():
    spec = small(n_speakers=3, duration_s=10)
    t = simulate_scene(spec)
    act = speaker_activity(spec)
    assert {int(k[3:]) for k, _, _ in t.rttm.segments} == {0, 1, 2}
    assert len(t.rttm.segments) == len(act)


def test_embeddings_cover_every_mic():
    t = simulate_scene(small(n_mics=3))
    assert set(t.embeddings.channel_ids) == {"00", "01", "02"}
    assert np.all(t.embeddings.spans[:, 1] - t.embeddings.spans[:, 0] <= 1.5 + 1e-9)


@pytest.mark.parametrize(
    "kw",
    [
        dict(duration_s=1.0),
        dict(n_speakers=9),
        dict(segments=((0, 1.0, 5.0), (1, 0.0, 1.0))),
        dict(segments=((0, 0.0, 1.0),)),
        dict(mic_groups=((0, 1), (1, 2, 3))),
        dict(t60_s=-0.1),
    ],
)
def test_infeasible_specs(kw):
    with pytest.raises(ConfigError):
        small(**kw)


def test_spec_dict_round_trip():
    spec = small(mic_groups=((0, 1), (2, 3)), segments=((0, 0.0, 1.0), (1, 1.0, 2.5)))
    assert SceneSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        SceneSpec.from_dict({"bogus": 1})


def test_write_scene_manifest(tmp_path):
    t = simulate_scene(small())
    manifest = write_scene(t, tmp_path)
    listed = list(manifest["files"]["channels"].values()) + list(manifest["files"]["references"].values())
    listed += [p for d in manifest["files"]["masks"].values() for p in d.values()]
    listed += [manifest["files"][k] for k in ("rttm", "c50", "embeddings", "embeddings_sidecar")]
    for rel in listed:
        assert (tmp_path / rel).is_file(), rel
    assert (tmp_path / "manifest.json").is_file()
