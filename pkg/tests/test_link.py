from fractions import Fraction

import numpy as np
import pytest

from cnedec.classical import turbo_decode_classical, viterbi_decode
from cnedec.errors import ConfigurationError, UnsupportedRateError
from cnedec.link import encode_and_select, make_interleaver, n_positions, parse_rate, transmit


def test_parse_rate():
    assert parse_rate("5/6") == Fraction(5, 6)
    assert parse_rate(0.5) == Fraction(1, 2)
    for bad in ("x", "1/0", "0", "4/3"):
        with pytest.raises(UnsupportedRateError):
            parse_rate(bad)


@pytest.mark.parametrize("rate,E", [("1/2", 2 * 66), ("2/3", 99), ("3/4", 88), ("5/6", 80)])
def test_conv_transmitted_lengths(rate, E, rng):
    bits = rng.integers(0, 2, (3, 60))
    coded, _ = encode_and_select(bits, "conv", rate, None)
    assert coded.shape == (3, E)
    assert n_positions("conv", 60) == 66


def test_turbo_transmitted_length(rng):
    K = 40
    coded, _ = encode_and_select(rng.integers(0, 2, (2, K)), "turbo", "1/2", make_interleaver(K))
    assert coded.shape == (2, 80)
    with pytest.raises(UnsupportedRateError):
        encode_and_select(np.zeros((1, K)), "conv", "1/3", None)
    with pytest.raises(ConfigurationError):
        encode_and_select(np.zeros((1, K)), "turbo", "1/2", None)


@pytest.mark.parametrize("rate", ["1/2", "3/4"])
def test_awgn_link_round_trip(rate, rng):
    bits = rng.integers(0, 2, (4, 50))
    rec = transmit(bits, "conv", rate, 30.0, rng, normalize=False)
    assert rec.llr.shape == (4, 56, 2)
    np.testing.assert_array_equal(rec.llr[rec.ind == 0], 0)
    np.testing.assert_array_equal(viterbi_decode(rec.llr, terminated=True), bits)


def test_turbo_link_round_trip(rng):
    K = 40
    pi = make_interleaver(K)
    bits = rng.integers(0, 2, (3, K))
    rec = transmit(bits, "turbo", "2/3", 30.0, rng, pi)
    assert rec.llr.shape == rec.ind.shape == (3, 3, K)
    out = turbo_decode_classical(rec.llr[:, 0], rec.llr[:, 1], rec.llr[:, 2], pi, n_iter=2)
    np.testing.assert_array_equal(out.bits, bits)


def test_rayleigh_link_round_trip(rng):
    bits = rng.integers(0, 2, (2, 60))
    rec = transmit(bits, "conv", "1/2", 40.0, rng, channel="rayleigh")
    np.testing.assert_array_equal(viterbi_decode(rec.llr, terminated=True), bits)


def test_normalized_llrs_keep_signs(rng):
    bits = rng.integers(0, 2, (2, 30))
    a = transmit(bits, "conv", "1/2", 5.0, np.random.default_rng(3), normalize=False)
    b = transmit(bits, "conv", "1/2", 5.0, np.random.default_rng(3), normalize=True)
    np.testing.assert_array_equal(np.sign(a.llr), np.sign(b.llr))


def test_unknown_channel(rng):
    with pytest.raises(ConfigurationError):
        transmit(np.zeros((1, 8)), "conv", "1/2", 1.0, rng, channel="optical")
