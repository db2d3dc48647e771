from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnedec.codec import conv_encode, default_interleaver, turbo_encode
from cnedec.errors import FramingError, UnsupportedRateError
from cnedec.ratematch import (
    STANDARD_PATTERNS,
    derate_conv,
    derate_turbo,
    load_patterns,
    puncture_conv,
    rate_match_plan,
    turbo_block_length,
    turbo_rate_match,
)


def count_kept(pattern, K):
    # counting oracle: ones in the mask times the number of whole periods
    assert K % pattern.period == 0
    return int(pattern.keep_mask.sum()) * (K // pattern.period)


def test_pattern_file_matches_builtin():
    for name, p in load_patterns().items():
        np.testing.assert_array_equal(p.keep_mask, STANDARD_PATTERNS[name].keep_mask)
        assert p.rate == Fraction(name)


def test_rate_half_identity(rng):
    s = rng.integers(0, 2, (120, 2))
    out = puncture_conv(s, STANDARD_PATTERNS["1/2"])
    assert out.size == 240
    np.testing.assert_array_equal(out, s.reshape(-1))


@pytest.mark.parametrize("rate,E", [("3/4", 160), ("5/6", 144), ("2/3", 180)])
def test_punctured_lengths(rate, E):
    p = STANDARD_PATTERNS[rate]
    assert count_kept(p, 120) == E
    assert puncture_conv(np.zeros((120, 2), dtype=int), p).size == E


def test_serialized_order_3_4():
    s = np.arange(12).reshape(6, 2)  # z_t = 2t, z'_t = 2t+1
    out = puncture_conv(s, STANDARD_PATTERNS["3/4"])
    # A0 B0 A1 B2 per period
    assert out.tolist() == [0, 1, 2, 5, 6, 7, 8, 11]


def test_derate_all_keep(rng):
    x = rng.normal(size=240)
    L, P = derate_conv(x, STANDARD_PATTERNS["1/2"], 120)
    assert (P == 1).all()
    np.testing.assert_array_equal(L, x.reshape(120, 2))


def test_derate_2_3_stolen_positions(rng):
    p = STANDARD_PATTERNS["2/3"]
    x = rng.normal(size=count_kept(p, 20)) + 5.0
    L, P = derate_conv(x, p, 20)
    stolen = p.mask_for(20) == 0
    assert (L[stolen] == 0).all() and (P[stolen] == 0).all()
    assert (P[~stolen] == 1).all() and (L[~stolen] != 0).all()
    assert stolen[1::2, 1].all() and not stolen[0::2].any()


@pytest.mark.parametrize("rate", list(STANDARD_PATTERNS))
def test_conv_round_trip(rate, rng):
    p = STANDARD_PATTERNS[rate]
    x = rng.normal(size=(3, p.transmitted_length(126)))
    L, P = derate_conv(x, p, 126)
    np.testing.assert_array_equal(puncture_conv(L, p), x)
    assert ((P == 0) <= (L == 0)).all()


def test_derate_conv_length_mismatch():
    with pytest.raises(FramingError):
        derate_conv(np.zeros(100), STANDARD_PATTERNS["3/4"], 120)


def test_hard_map_round_trip(rng):
    p = STANDARD_PATTERNS["5/6"]
    code = conv_encode(rng.integers(0, 2, 60))
    tx = puncture_conv(code, p)
    L, _ = derate_conv(2.0 * tx - 1.0, p, code.shape[0])
    hard = (L > 0).astype(int)
    np.testing.assert_array_equal(puncture_conv(hard, p), tx)


def test_turbo_full_read():
    plan = rate_match_plan(120, 360)
    assert sorted(plan.selected.tolist()) == list(range(360))


def test_turbo_rate_half_skips_k():
    plan = rate_match_plan(120, 240)
    assert len(set(plan.selected.tolist())) == 240
    assert 360 - plan.indicator().sum() == 120


def test_turbo_rate_5_6_punctured_count():
    plan = rate_match_plan(120, 144)
    assert (plan.indicator() == 0).sum() == 360 - 144  # 1.8 K


def test_turbo_rate_too_high():
    with pytest.raises(UnsupportedRateError):
        rate_match_plan(120, 100)


def test_subblock_filler_skipped():
    plan = rate_match_plan(40, 120)
    assert plan.rows == 2 and plan.n_filler == 24
    assert (plan.subblock_index == -1).sum() == 3 * 24
    assert (plan.selected >= 0).all()


def test_derate_turbo_full(rng):
    K = 120
    pi = default_interleaver(K)
    streams = turbo_encode(rng.integers(0, 2, K), pi)
    tx, plan = turbo_rate_match(streams, 3 * K)
    ls, lz, lz2, ps, pz, pz2 = derate_turbo(2.0 * tx - 1.0, plan)
    assert ps.all() and pz.all() and pz2.all()
    np.testing.assert_array_equal(ls, 2.0 * streams.systematic - 1)
    np.testing.assert_array_equal(lz, 2.0 * streams.parity0 - 1)
    np.testing.assert_array_equal(lz2, 2.0 * streams.parity1 - 1)


def test_derate_turbo_accounting():
    plan = rate_match_plan(120, 180)
    *_, ps, pz, pz2 = derate_turbo(np.ones(180), plan)
    assert ps.sum() + pz.sum() + pz2.sum() == 180


def test_derate_turbo_zero_input():
    plan = rate_match_plan(120, 160)
    ls, lz, lz2, ps, pz, pz2 = derate_turbo(np.zeros(160), plan)
    assert not (ls.any() or lz.any() or lz2.any())
    np.testing.assert_array_equal(np.stack([ps, pz, pz2]), plan.indicator())


def test_repetition_is_summed():
    plan = rate_match_plan(40, 250)
    x = np.ones(250)
    ls, lz, lz2, *_ = derate_turbo(x, plan)
    counts = np.bincount(plan.selected, minlength=120)
    np.testing.assert_array_equal(np.concatenate([ls, lz, lz2]), counts)
    assert counts.sum() == 250


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([40, 120, 240]), st.floats(1.0, 3.5), st.integers(0, 2**31 - 1))
def test_turbo_inversion_property(K, factor, seed):
    E = int(K * factor)
    plan = rate_match_plan(K, E)
    x = np.random.default_rng(seed).normal(size=E)
    ls, lz, lz2, ps, pz, pz2 = derate_turbo(x, plan)
    flat = np.concatenate([ls, lz, lz2])
    ind = np.concatenate([ps, pz, pz2])
    assert ((ind == 0) <= (flat == 0)).all()
    if E <= plan.n_coded:
        np.testing.assert_allclose(flat[plan.selected], x)


def test_framing_error():
    with pytest.raises(FramingError):
        derate_turbo(np.zeros(10), rate_match_plan(40, 60))


@pytest.mark.parametrize("rate", ["1/3", "1/2", "2/3", "3/4", "5/6"])
def test_turbo_block_length(rate):
    E = turbo_block_length(120, rate)
    assert E * Fraction(rate) == 120
