import numpy as np
import pytest
from scipy import stats

from cnedec.channel import (
    ChannelRealization,
    awgn,
    constellation,
    default_pilots,
    demap_llr,
    draw_rayleigh,
    ebn0_to_snr,
    ls_estimate,
    mmse_detect,
    modulate,
    normalize_llr,
    rayleigh_mimo,
    rayleigh_receive,
    snr_to_sigma2,
)
from cnedec.errors import EstimationError, FramingError


def test_bpsk_convention():
    np.testing.assert_array_equal(modulate([0, 1, 1, 0]), [-1, 1, 1, -1])


@pytest.mark.parametrize("name", ["bpsk", "qpsk", "16qam", "64qam"])
def test_unit_energy(name):
    c = constellation(name)
    assert abs(np.mean(np.abs(c.points) ** 2) - 1) < 1e-12


def test_16qam_gray_neighbours():
    c = constellation("16qam")
    pts = c.points
    d = np.abs(pts[:, None] - pts[None, :])
    dmin = d[d > 1e-9].min()
    pairs = [(i, j) for i in range(16) for j in range(i + 1, 16) if abs(d[i, j] - dmin) < 1e-9]
    assert len(pairs) == 24  # 4x4 grid: 12 horizontal + 12 vertical
    for i, j in pairs:
        assert bin(i ^ j).count("1") == 1


def test_modulate_framing():
    with pytest.raises(FramingError):
        modulate([0, 1, 1], "16qam")


def test_awgn_zero_noise(rng):
    x = modulate(rng.integers(0, 2, 100))
    np.testing.assert_array_equal(awgn(x, 0.0, rng), x)


def test_awgn_variance():
    r = np.random.default_rng(5)
    x = np.zeros(10**6)
    s2 = 0.37
    assert abs(np.var(awgn(x, s2, r)) / s2 - 1) < 0.01
    xc = np.zeros(10**6, dtype=complex)
    yc = awgn(xc, s2, r)
    assert abs(np.mean(np.abs(yc) ** 2) / s2 - 1) < 0.01
    assert abs(np.var(yc.real) / (s2 / 2) - 1) < 0.01


def test_awgn_seeded():
    x = np.ones(50)
    a = awgn(x, 0.5, np.random.default_rng(9))
    b = awgn(x, 0.5, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_snr_conventions():
    assert snr_to_sigma2(0.0) == 1.0
    assert ebn0_to_snr(1.0, 0.5) == pytest.approx(1.0)
    assert ebn0_to_snr(3.0, 0.5, 4, real=False) == pytest.approx(3.0 + 10 * np.log10(2))


def test_identity_channel_passthrough(rng):
    taps = np.eye(4, dtype=complex)[None]
    x = modulate(rng.integers(0, 2, 4 * 4 * 20), "16qam").reshape(4, -1)
    y = rayleigh_mimo(x, ChannelRealization(taps, 64), 0.0, rng)
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_single_tap_flat(rng):
    r = draw_rayleigh(rng, n_taps=1)
    Hf = r.freq
    np.testing.assert_allclose(Hf, np.broadcast_to(Hf[0], Hf.shape))


def test_tap_power_normalization():
    r = np.random.default_rng(11)
    p = np.mean([np.sum(np.abs(draw_rayleigh(r).taps) ** 2, axis=0).mean() for _ in range(10000)])
    assert abs(p - 1) < 0.01


def test_received_power_matches_transmitted():
    r = np.random.default_rng(12)
    ratios = []
    for _ in range(3000):
        x = modulate(r.integers(0, 2, 4 * 4 * 64), "16qam").reshape(4, -1)
        y = rayleigh_mimo(x, draw_rayleigh(r), 0.0, r)
        # per receive antenna: sum over transmit antennas of unit-gain links
        ratios.append(np.mean(np.abs(y) ** 2) / np.sum(np.mean(np.abs(x) ** 2, axis=1)))
    assert abs(np.mean(ratios) - 1) < 0.01


def test_ls_noiseless_unitary(rng):
    H = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    Om = default_pilots(4) / 2.0  # unitary
    np.testing.assert_allclose(ls_estimate(H @ Om, Om), H, atol=1e-12)


def test_ls_identity_pilots(rng):
    Y = rng.normal(size=(4, 4)) + 0j
    np.testing.assert_allclose(ls_estimate(Y, np.eye(4)), Y)


def test_ls_singular():
    with pytest.raises(EstimationError):
        ls_estimate(np.ones((4, 4)), np.ones((4, 4)))


def test_ls_error_scales_with_noise():
    r = np.random.default_rng(3)
    Om = default_pilots(4)
    H = (r.normal(size=(4, 4)) + 1j * r.normal(size=(4, 4))) / np.sqrt(2)
    mse = []
    for s2 in (1e-2, 1e-3):
        err = [np.mean(np.abs(ls_estimate(awgn(H @ Om, s2, r), Om) - H) ** 2) for _ in range(4000)]
        mse.append(np.mean(err))
    slope = np.log10(mse[0] / mse[1])
    assert abs(slope - 1.0) < 0.05
    # orthogonal pilots with |entries| = 1: error variance sigma2 / N_T
    assert mse[0] == pytest.approx(1e-2 / 4, rel=0.05)


def test_mmse_identity():
    y = np.array([0.3 + 0.1j, -1.0, 0.5j, 2.0])
    xh = mmse_detect(y, np.eye(4), 0.0)
    np.testing.assert_allclose(xh, y, rtol=1e-5)


def test_mmse_linear(rng):
    H = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    y = rng.normal(size=4) + 1j * rng.normal(size=4)
    np.testing.assert_allclose(mmse_detect(3.5 * y, H, 0.1), 3.5 * mmse_detect(y, H, 0.1))


def test_mmse_recovers_noiseless(rng):
    H = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    x = modulate(rng.integers(0, 2, 16), "16qam")
    xh = mmse_detect(H @ x, H, 0.0)
    np.testing.assert_allclose(xh, np.linalg.inv(H) @ (H @ x), rtol=1e-4)
    assert np.linalg.norm(xh - x) / np.linalg.norm(x) < 1e-4


def test_bpsk_llr():
    assert demap_llr(np.array([1.0]), "bpsk", 1.0)[0] == 2.0


@pytest.mark.parametrize("name", ["qpsk", "16qam", "64qam"])
def test_demap_noiseless_signs(name, rng):
    c = constellation(name)
    bits = rng.integers(0, 2, 600 * c.bits_per_symbol)
    for mode in ("distance", "maxlog"):
        llr = demap_llr(modulate(bits, c), c, 0.1, mode)
        np.testing.assert_array_equal((llr > 0).astype(int), bits)


def test_demap_16qam_bruteforce(rng):
    c = constellation("16qam")
    xh = rng.normal(size=50) + 1j * rng.normal(size=50)
    llr = demap_llr(xh, c, mode="distance").reshape(50, 4)
    for n in range(50):
        for i in range(4):
            d0 = min(abs(xh[n] - c.points[s]) for s in range(16) if not (s >> (3 - i)) & 1)
            d1 = min(abs(xh[n] - c.points[s]) for s in range(16) if (s >> (3 - i)) & 1)
            assert llr[n, i] == pytest.approx(d0 - d1, abs=1e-12)


def test_normalize_preserves_standardized(rng):
    x = rng.normal(size=10000)
    x = (x - x.mean()) / x.std()
    out = normalize_llr(x)
    np.testing.assert_allclose(np.abs(out), np.abs(x), rtol=1e-5)
    np.testing.assert_array_equal(np.sign(out), np.sign(x))


def test_normalize_sign_always(rng):
    x = rng.normal(loc=3.0, size=(5, 300))
    np.testing.assert_array_equal(np.sign(normalize_llr(x)), np.sign(x))


def test_normalize_constant():
    out = normalize_llr(np.full(20, 2.5))
    assert np.all(out >= 0) and np.all(np.abs(out) < 1e-9)


def test_rayleigh_receive_noiseless(rng):
    x = modulate(rng.integers(0, 2, 4 * 4 * 128), "16qam").reshape(4, -1)
    for csi in ("perfect", "ls"):
        xh = rayleigh_receive(x, rng, 0.0, csi=csi)
        assert np.linalg.norm(xh - x) / np.linalg.norm(x) < 1e-4


def test_uncoded_bpsk_ber_matches_theory():
    r = np.random.default_rng(0)
    s2 = snr_to_sigma2(4.0)
    bits = r.integers(0, 2, 400000)
    y = awgn(modulate(bits), s2, r)
    ber = np.mean((y > 0) != bits)
    assert ber == pytest.approx(stats.norm.sf(1 / np.sqrt(s2)), rel=0.03)
