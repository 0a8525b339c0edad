import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_hpd
from dasrfront.audio import Spectrogram, StftConfig
from dasrfront.beamformer import (
    CovariancePair,
    FilterBank,
    TfMask,
    apply_filter,
    enhance,
    estimate_covariances,
    mask_postfilter,
    read_mask,
    select_reference,
    spmwf_weights,
    write_mask,
)
from dasrfront.errors import DataError, FileFormatError

CFG = StftConfig(8, 2, "hann")  # 5 bins keeps the oracles small


def random_spec(rng, frames, m):
    y = rng.standard_normal((frames, CFG.n_bins, m)) + 1j * rng.standard_normal((frames, CFG.n_bins, m))
    return Spectrogram(y, CFG, 16000, 64)


def naive_cov(y, mask):
    frames, bins, m = y.shape
    out = np.zeros((bins, m, m), complex)
    for f in range(bins):
        acc = np.zeros((m, m), complex)
        tot = 0.0
        for t in range(frames):
            for i in range(m):
                for j in range(m):
                    acc[i, j] += mask[t, f] * y[t, f, i] * np.conj(y[t, f, j])
            tot += mask[t, f]
        out[f] = acc / tot
    return out


def one_bin(r_x, r_n):
    return CovariancePair(np.asarray(r_x)[None], np.asarray(r_n)[None], 1)


# --------------------------------------------------------- covariances


@given(seed=st.integers(0, 10**6), frames=st.integers(1, 16), m=st.integers(1, 4))
def test_covariance_matches_naive_oracle(seed, frames, m):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, frames, m)
    mask = rng.uniform(0.05, 1, (frames, CFG.n_bins))
    cov = estimate_covariances(spec, TfMask(mask))
    np.testing.assert_allclose(cov.r_x, naive_cov(spec.data, mask), rtol=0, atol=1e-12 * np.abs(spec.data).max() ** 2)
    np.testing.assert_allclose(cov.r_n, naive_cov(spec.data, 1 - mask), rtol=0, atol=1e-12 * np.abs(spec.data).max() ** 2)
    assert np.array_equal(cov.r_x, np.conj(np.swapaxes(cov.r_x, 1, 2)))


def test_unit_mask_is_sample_covariance(rng):
    spec = random_spec(rng, 10, 3)
    y = spec.data
    expected = np.einsum("tfi,tfj->fij", y, y.conj()) / 10
    cov = estimate_covariances(spec, TfMask(np.ones((10, CFG.n_bins))), TfMask(np.ones((10, CFG.n_bins)), "noise"))
    np.testing.assert_allclose(cov.r_x, expected, atol=1e-12)


def test_single_frame_rank_one(rng):
    spec = random_spec(rng, 1, 3)
    cov = estimate_covariances(spec, TfMask(np.ones((1, CFG.n_bins))), TfMask(np.ones((1, CFG.n_bins)), "noise"))
    y = spec.data[0]
    np.testing.assert_allclose(cov.r_x, y[:, :, None] * y[:, None, :].conj(), atol=1e-14)
    assert np.all(np.linalg.matrix_rank(cov.r_x) == 1)


def test_empty_mask_names_bin(rng):
    spec = random_spec(rng, 4, 2)
    mask = np.ones((4, CFG.n_bins))
    mask[:, 3] = 0
    with pytest.raises(DataError, match="bin 3"):
        estimate_covariances(spec, TfMask(mask), TfMask(np.ones_like(mask), "noise"))


def test_mask_shape_checked(rng):
    with pytest.raises(DataError):
        estimate_covariances(random_spec(rng, 4, 2), TfMask(np.ones((3, CFG.n_bins))))


# -------------------------------------------------------------- SP-MWF


def test_scalar_channel_weight_is_one():
    fb = spmwf_weights(one_bin([[2.5]], [[0.7]]), 0)
    assert fb.w[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_two_channel_closed_form():
    d = np.array([1.0, 1.0])
    fb = spmwf_weights(one_bin(np.outer(d, d), np.eye(2)), 1, loading=0.0)
    np.testing.assert_allclose(fb.w[0], [0.5, 0.5], atol=1e-15)
    assert np.vdot(fb.w[0], d) == pytest.approx(1.0)


def test_closed_form_general_rank_one(rng):
    m = 4
    d = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    rn = random_hpd(rng, m)
    r = 2
    fb = spmwf_weights(one_bin(3.0 * np.outer(d, d.conj()), rn), r, loading=0.0)
    rinv_d = np.linalg.inv(rn) @ d
    expected = rinv_d * np.conj(d[r]) / np.vdot(d, rinv_d)
    np.testing.assert_allclose(fb.w[0], expected, atol=1e-10)


def test_distortionless_random_draws(rng):
    for _ in range(100):
        m = int(rng.integers(2, 9))
        d = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        r = int(rng.integers(0, m))
        rx = rng.uniform(0.1, 10) * np.outer(d, d.conj())
        fb = spmwf_weights(one_bin(rx, random_hpd(rng, m, 1e3)), r)
        assert abs(np.vdot(fb.w[0], d) - d[r]) / abs(d[r]) <= 1e-8


@given(seed=st.integers(0, 10**6), m=st.integers(2, 8), alpha=st.sampled_from([0.01, 1.0, 100.0]))
def test_noise_scale_invariance(seed, m, alpha):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    rx = a @ a.conj().T
    rn = random_hpd(rng, m)
    w1 = spmwf_weights(one_bin(rx, rn), 0).w
    w2 = spmwf_weights(one_bin(rx, alpha * rn), 0).w
    np.testing.assert_allclose(w2, w1, rtol=0, atol=1e-10 * np.abs(w1).max())


def test_mu_shrinks_weights(rng):
    m = 3
    d = rng.standard_normal(m) + 0j
    cov = one_bin(np.outer(d, d), random_hpd(rng, m))
    w0 = spmwf_weights(cov, 0, mu=0.0).w
    w1 = spmwf_weights(cov, 0, mu=1.0).w
    assert np.linalg.norm(w1) < np.linalg.norm(w0)
    np.testing.assert_allclose(w1 / np.linalg.norm(w1), w0 / np.linalg.norm(w0), atol=1e-12)


def test_zero_target_flags_degenerate_bin():
    cov = CovariancePair(np.stack([np.zeros((2, 2)), np.eye(2)]).astype(complex),
                         np.stack([np.eye(2), np.eye(2)]).astype(complex), 1)
    fb = spmwf_weights(cov, 0)
    assert fb.degenerate_bins == (0,)
    assert np.all(fb.w[0] == 0) and np.all(np.isfinite(fb.w))


# ---------------------------------------------------------- reference


def test_reference_tie_goes_to_lowest():
    assert select_reference(one_bin(np.eye(3), np.eye(3))) == 0


def test_reference_prefers_strong_target():
    rx = np.diag([1.0, 1.0, 10.0, 1.0]).astype(complex)
    assert select_reference(one_bin(rx, np.eye(4))) == 2


def test_reference_skips_dead_channel():
    rx = np.diag([0.0, 1e-3, 0.0]).astype(complex)
    assert select_reference(one_bin(rx, np.eye(3))) == 1


# ------------------------------------------------------- filter + post


def test_pass_through_and_zero_filter(rng):
    spec = random_spec(rng, 6, 3)
    w = np.zeros((CFG.n_bins, 3), complex)
    w[:, 1] = 1
    np.testing.assert_array_equal(apply_filter(spec, FilterBank(w, 1)).data[:, :, 0], spec.data[:, :, 1])
    assert np.all(apply_filter(spec, FilterBank(np.zeros_like(w), 0)).data == 0)


def test_apply_filter_hand_computed():
    y = np.zeros((3, CFG.n_bins, 2), complex)
    y[:, 0, 0] = [1, 2j, -1]
    y[:, 0, 1] = [1j, 1, 3]
    w = np.zeros((CFG.n_bins, 2), complex)
    w[0] = [2, 1j]
    out = apply_filter(Spectrogram(y, CFG, 16000, 64), FilterBank(w, 0)).data[:, 0, 0]
    # conj(w) . y = 2*y0 - 1j*y1
    np.testing.assert_array_equal(out, [2 + 1, 4j - 1j, -2 - 3j])


def test_postfilter(rng):
    spec = random_spec(rng, 5, 1)
    ones, zeros = np.ones((5, CFG.n_bins)), np.zeros((5, CFG.n_bins))
    np.testing.assert_array_equal(mask_postfilter(spec, TfMask(ones)).data, spec.data)
    np.testing.assert_array_equal(mask_postfilter(spec, TfMask(zeros), 0.1).data, spec.data * 0.1)
    m = rng.uniform(0, 1, (5, CFG.n_bins))
    expected = spec.data[:, :, 0] * np.maximum(m, 0.1)
    np.testing.assert_array_equal(mask_postfilter(spec, TfMask(m)).data[:, :, 0], expected)


def test_enhance_single_channel_is_masked_input(rng):
    spec = random_spec(rng, 20, 1)
    m = rng.uniform(0.1, 0.9, (20, CFG.n_bins))
    out, fb = enhance(spec, TfMask(m))
    np.testing.assert_allclose(out.data[:, :, 0], spec.data[:, :, 0] * m, rtol=1e-12)


# ----------------------------------------------------------- mask file


def test_mask_file_round_trip(tmp_path, rng):
    m = rng.uniform(0, 1, (7, 3)).astype(np.float32).astype(np.float64)
    write_mask(TfMask(m), tmp_path / "m.msk")
    raw = (tmp_path / "m.msk").read_bytes()
    assert raw[:4] == b"MSK1" and len(raw) == 12 + 4 * 21
    np.testing.assert_array_equal(read_mask(tmp_path / "m.msk").values, m)


def test_mask_file_errors(tmp_path):
    write_mask(TfMask(np.ones((2, 2))), tmp_path / "m.msk")
    raw = (tmp_path / "m.msk").read_bytes()
    (tmp_path / "bad.msk").write_bytes(raw[:-1])
    with pytest.raises(FileFormatError):
        read_mask(tmp_path / "bad.msk")
    (tmp_path / "bad.msk").write_bytes(raw[:12] + np.float32([2, 0, 0, 0]).tobytes())
    with pytest.raises(FileFormatError):
        read_mask(tmp_path / "bad.msk")
    with pytest.raises(DataError):
        TfMask(np.full((2, 2), -0.1))
