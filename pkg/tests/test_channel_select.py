import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import fftconvolve

from dasrfront.audio import Waveform
from dasrfront.channel_select import (
    ChannelScore,
    SelectionPolicy,
    apply_rule,
    c50_from_rir,
    dump_c50_scores,
    envelope_variance,
    load_c50_scores,
    select_subset,
)
from dasrfront.errors import ConfigError, DataError, DegenerateSignalError
from dasrfront.scene import c50_analytic, make_rir, pink_noise, stream_rng

SR = 16000


def am_noise(seconds=4.0, seed=0):
    n = int(seconds * SR)
    t = np.arange(n) / SR
    return pink_noise(n, stream_rng(seed, 1)) * (0.55 + 0.45 * np.sin(2 * np.pi * 4 * t))


def ref_select(scores, k_pct=0.65, min_mics=15):
    """Straight transcription of the four-branch rule, used as oracle."""
    m = len(scores)
    k = -(-round(k_pct * m * 1000) // 1000)  # ceil on a 1e-3 grid, no float fuzz
    ev = sorted(scores, key=lambda s: (-s[1], s[0]))
    c5 = sorted(scores, key=lambda s: (-s[2], s[0]))
    i_ev = {s[0] for s in ev[:k]}
    i_c = {s[0] for s in c5[:k]}
    if m < min_mics:
        return {s[0] for s in scores}, "all"
    if len(i_ev & i_c) >= min_mics:
        return i_ev & i_c, "intersection"
    if len(i_ev) >= min_mics:
        return i_ev, "ev_set"
    return {s[0] for s in ev[:min_mics]}, "top15_ev"


# --------------------------------------------------------------- EV


def test_ev_gain_invariance():
    x = am_noise()
    ref = envelope_variance(Waveform(x, SR))
    for a in (0.1, 2.0, 10.0):
        assert abs(envelope_variance(Waveform(a * x, SR)) - ref) <= 1e-9


def test_ev_constant_tone_near_zero():
    t = np.arange(3 * SR) / SR
    assert envelope_variance(Waveform(0.5 * np.sin(2 * np.pi * 1000 * t), SR)) <= 1e-3


def test_ev_dry_exceeds_reverberant():
    for seed in range(3):
        dry = am_noise(seed=seed)
        rir = make_rir(0.0, 0.5, SR, seed=seed).samples
        wet = fftconvolve(dry, rir)[: dry.size]
        assert envelope_variance(Waveform(dry, SR)) > envelope_variance(Waveform(wet, SR))


def test_ev_silent_is_an_error():
    with pytest.raises(DegenerateSignalError, match="degenerate signal"):
        envelope_variance(Waveform(np.zeros(3 * SR), SR))


def test_ev_requires_two_seconds():
    with pytest.raises(DataError):
        envelope_variance(Waveform(am_noise(1.0), SR))


# -------------------------------------------------------------- C50


def test_c50_unit_impulse_is_inf():
    assert c50_from_rir(Waveform(np.r_[1.0, np.zeros(2000)], SR)) == math.inf


def test_c50_all_zero_is_error():
    with pytest.raises(DataError):
        c50_from_rir(Waveform(np.zeros(100), SR))


def test_c50_analytic_value():
    # continuous-time energy decay integral, evaluated independently
    delta = 3 * math.log(10) / 0.5
    early = (1 - math.exp(-2 * delta * 0.05)) / (2 * delta)
    late = math.exp(-2 * delta * 0.05) / (2 * delta)
    assert 10 * math.log10(early / late) == pytest.approx(4.744, abs=1e-3)
    assert c50_analytic(0.5) == pytest.approx(10 * math.log10(early / late), abs=1e-12)


def test_c50_of_deterministic_envelope():
    # noiseless energy envelope, direct impulse suppressed to the tail level
    t = np.arange(int(1.0 * SR)) / SR
    h = np.exp(-3 * math.log(10) / 0.5 * t)
    assert c50_from_rir(Waveform(h, SR)) == pytest.approx(c50_analytic(0.5), abs=0.1)


def test_c50_shift_invariance(rng):
    h = make_rir(0.0, 0.4, SR, seed=3).samples
    a = c50_from_rir(Waveform(h, SR))
    b = c50_from_rir(Waveform(np.r_[np.zeros(100), h], SR))
    assert a == b


def test_c50_file_round_trip(tmp_path):
    scores = {"00": 3.25, "01": math.inf, "02": -1.5}
    dump_c50_scores(scores, tmp_path / "c50.json")
    assert load_c50_scores(tmp_path / "c50.json") == scores


def test_c50_file_rejects_garbage(tmp_path):
    (tmp_path / "c.json").write_text('{"00": "loud"}')
    with pytest.raises(DataError):
        load_c50_scores(tmp_path / "c.json")


# ------------------------------------------------------- selection rule


def make_scores(ev, c50):
    return [ChannelScore(f"{i:02d}", float(e), float(c)) for i, (e, c) in enumerate(zip(ev, c50))]


def test_ten_mics_selects_all():
    res = select_subset(make_scores(range(10), range(10)))
    assert res.rule_branch == "all"
    assert len(res.selected) == 10


def test_forty_mics_intersection_of_twenty():
    # EV top 26 = ids 0..25, C50 top 26 = ids 6..31 -> overlap 6..25 (20 ids)
    ev = [100 - i for i in range(40)]
    c50 = [0.0] * 40
    for rank, i in enumerate(range(6, 32)):
        c50[i] = 100 - rank
    res = select_subset(make_scores(ev, c50))
    assert res.rule_branch == "intersection"
    assert res.selected == {f"{i:02d}" for i in range(6, 26)}


def test_twenty_mics_top15_ev():
    rng = np.random.default_rng(0)
    ev, c50 = rng.permutation(20), rng.permutation(20)
    res = select_subset(make_scores(ev, c50))
    assert SelectionPolicy().top_k(20) == 13
    assert res.rule_branch == "top15_ev"
    best = {f"{i:02d}" for i in np.argsort(-ev)[:15]}
    assert res.selected == best


def test_ev_set_branch():
    # M = 24: K = 16; rankings disjoint enough that |I| < 15
    ev = list(range(24, 0, -1))
    c50 = list(range(1, 25))
    res = select_subset(make_scores(ev, c50))
    assert res.rule_branch == "ev_set"
    assert res.selected == res.i_ev and len(res.selected) == 16


def test_ties_broken_by_channel_id():
    res = select_subset(make_scores([1.0] * 20, [1.0] * 20))
    assert res.selected == {f"{i:02d}" for i in range(15)}


def test_duplicate_ids_rejected():
    with pytest.raises(DataError):
        select_subset([ChannelScore("a", 1, 1), ChannelScore("a", 2, 2)])


@pytest.mark.parametrize("kw", [dict(k_pct=0), dict(k_pct=1.5), dict(min_mics=0)])
def test_policy_validation(kw):
    with pytest.raises(ConfigError):
        SelectionPolicy(**kw)


scores_strategy = st.integers(1, 45).flatmap(
    lambda m: st.tuples(
        st.lists(st.integers(0, 6), min_size=m, max_size=m),
        st.lists(st.one_of(st.integers(-5, 5), st.just(math.inf)), min_size=m, max_size=m),
    )
)


@given(scores_strategy)
def test_rule_matches_oracle(data):
    ev, c50 = data
    scores = make_scores(ev, c50)
    res = select_subset(scores)
    sel, branch = ref_select([(s.channel_id, s.ev, s.c50_db) for s in scores])
    assert res.rule_branch == branch
    assert set(res.selected) == sel
    assert res.selected and res.selected <= {s.channel_id for s in scores}


@given(scores_strategy)
def test_audit_replay(data):
    scores = make_scores(*data)
    res = select_subset(scores)
    again, branch = apply_rule(len(scores), res.i_ev, res.i_c50, res.ev_ranking, SelectionPolicy())
    assert again == res.selected and branch == res.rule_branch


@given(scores_strategy, st.randoms())
def test_permutation_invariance(data, rnd):
    scores = make_scores(*data)
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    assert select_subset(shuffled).selected == select_subset(scores).selected
