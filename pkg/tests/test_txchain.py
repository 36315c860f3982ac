import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmse_lab.errors import InvalidInputError
from mmse_lab.txchain import SimConfig, frame_rng, generate_frame, map_gray_qam, snr_to_n0


class TestMapGrayQam:
    def test_qpsk_first_entry(self):
        assert map_gray_qam([0, 0], 4) == pytest.approx((1 + 1j) / math.sqrt(2))

    def test_bpsk(self):
        assert map_gray_qam([0], 2) == pytest.approx((1 + 1j) / math.sqrt(2))
        assert map_gray_qam([1], 2) == pytest.approx(-(1 + 1j) / math.sqrt(2))

    def test_16qam_first_entry(self):
        assert map_gray_qam([0, 0, 0, 0], 16) == pytest.approx((1 + 1j) / math.sqrt(10))

    def test_64qam_levels(self):
        bits = np.array([[int(c) for c in f"{k:06b}"] for k in range(64)])
        x = map_gray_qam(bits, 64) * math.sqrt(42)
        assert set(np.round(x.real).astype(int)) == {-7, -5, -3, -1, 1, 3, 5, 7}

    def test_scales_with_energy(self):
        assert map_gray_qam([1, 0, 1, 1], 16, Es=4.0) == pytest.approx(2 * map_gray_qam([1, 0, 1, 1], 16))

    def test_unsupported_order(self):
        with pytest.raises(InvalidInputError):
            map_gray_qam([0, 0, 0], 8)

    @pytest.mark.parametrize("m", [2, 4, 16, 64])
    def test_empirical_energy(self, m):
        q = int(math.log2(m))
        bits = np.random.default_rng(m).integers(0, 2, size=(100_000, q))
        assert np.mean(np.abs(map_gray_qam(bits, m, Es=2.5)) ** 2) == pytest.approx(2.5, rel=0.01)


class TestSnrToN0:
    def test_unit(self):
        assert snr_to_n0(0, 1, 1) == 1

    def test_ten_db(self):
        assert snr_to_n0(10, 4, 1) == pytest.approx(0.4)

    def test_array_gain(self):
        assert snr_to_n0(21.07, 128, 1) == pytest.approx(1.0, rel=1e-3)

    def test_bad_energy(self):
        with pytest.raises(InvalidInputError):
            snr_to_n0(10, 4, 0)


class TestSimConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(U=5, B=4), dict(L=0), dict(M=8), dict(trials=0), dict(Es=0.0), dict(channel="winner")],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(InvalidInputError):
            SimConfig(**kwargs)

    def test_noiseless_forces_zero(self):
        assert SimConfig(noiseless=True).n0 == 0.0


class TestGenerateFrame:
    def test_noiseless_identity(self):
        cfg = SimConfig(B=6, U=3, L=12, M=16, channel="identity", noiseless=True)
        f = generate_frame(cfg)
        expected = np.zeros((12, 6), dtype=complex)
        expected[:, :3] = f.s.T
        np.testing.assert_array_equal(f.y, expected)

    def test_shapes(self):
        f = generate_frame(SimConfig(B=8, U=2, L=5, M=64))
        assert f.bits.shape == (2, 5, 6)
        assert f.x.shape == f.s.shape == (2, 5)
        assert f.channels.shape == (5, 8, 2)
        assert f.y.shape == (5, 8)
        assert (f.U, f.L, f.B) == (2, 5, 8)

    def test_channel_variance(self):
        cfg = SimConfig(B=100, U=10, L=100, M=4)
        h = generate_frame(cfg).channels
        assert h.size == 100_000
        assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.02)
        assert abs(np.mean(h)) < 0.02

    def test_noise_variance(self):
        cfg = SimConfig(B=1000, U=1, L=100, M=4, channel="identity")
        f = generate_frame(cfg, n0=0.4)
        noise = f.y.copy()
        noise[:, 0] -= f.s[0]
        assert noise.size == 100_000
        assert np.mean(np.abs(noise) ** 2) == pytest.approx(0.4, abs=0.01)

    def test_deterministic(self):
        cfg = SimConfig(B=8, U=2, L=6, seed=99)
        a, b = generate_frame(cfg, trial=3), generate_frame(cfg, trial=3)
        for field in ("bits", "x", "s", "channels", "y"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
        assert not np.array_equal(a.y, generate_frame(cfg, trial=4).y)

    def test_explicit_rng_matches_substream(self):
        cfg = SimConfig(B=8, U=2, L=6, seed=5)
        np.testing.assert_array_equal(generate_frame(cfg, rng=frame_rng(5, 2)).y, generate_frame(cfg, trial=2).y)

    def test_common_random_numbers_across_snr(self):
        cfg = SimConfig(B=8, U=2, L=6, seed=5)
        lo, hi = generate_frame(cfg, n0=1.0), generate_frame(cfg, n0=0.25)
        np.testing.assert_array_equal(lo.channels, hi.channels)
        clean = np.einsum("wbu,uw->wb", lo.channels, lo.s)
        np.testing.assert_allclose(lo.y - clean, 2 * (hi.y - clean), atol=1e-12)

    def test_negative_noise(self):
        with pytest.raises(InvalidInputError):
            generate_frame(SimConfig(B=4, U=1, L=2), n0=-1.0)

    @settings(max_examples=30, deadline=None)
    @given(
        st.integers(1, 4), st.integers(1, 80), st.sampled_from([2, 4, 16, 64]),
        st.floats(0.1, 10.0), st.integers(0, 2**63),
    )
    def test_unitary_spreading_and_alphabet(self, u, l, m, es, seed):
        cfg = SimConfig(B=4, U=u, L=l, M=m, Es=es, seed=seed)
        f = generate_frame(cfg)
        np.testing.assert_allclose(np.linalg.norm(f.s, axis=1), np.linalg.norm(f.x, axis=1), rtol=0, atol=1e-10 * max(1, es * l))
        np.testing.assert_array_equal(f.x, map_gray_qam(f.bits, m, es))
