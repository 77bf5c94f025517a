"""Frame subsampling and the chunked-causal streaming encoder."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ftrans.autodiff as ad
from ftrans.encoder import SUBSAMPLE, ChunkedEncoder, subsample


def _enc(chunk=4, d_feat=6, **kw):
    kw.setdefault("d_model", 16)
    kw.setdefault("n_layers", 2)
    kw.setdefault("n_heads", 2)
    kw.setdefault("d_ff", 24)
    kw.setdefault("seed", 0)
    return ChunkedEncoder(d_feat=d_feat, chunk_frames=chunk, **kw)


class TestSubsample:
    def test_exact_multiple_concatenates(self):
        x = np.arange(4 * 3, dtype=np.float32).reshape(4, 3)
        out = subsample(x)
        assert out.shape == (1, 12)
        np.testing.assert_array_equal(out[0], x.reshape(-1))

    def test_remainder_zero_padded(self):
        x = np.ones((5, 2), dtype=np.float32)
        out = subsample(x)
        assert out.shape == (2, 8)
        np.testing.assert_array_equal(out[1], [1, 1, 0, 0, 0, 0, 0, 0])

    def test_output_length_law(self):
        for T0 in range(1, 20):
            x = np.zeros((T0, 3), dtype=np.float32)
            assert subsample(x).shape[0] == -(-T0 // SUBSAMPLE)

    def test_matches_reshape_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((8, 5)).astype(np.float32)
        np.testing.assert_array_equal(subsample(x), x.reshape(2, 20))


class TestFullEncode:
    def test_big_chunk_equals_unchunked(self):
        """chunk_frames >= T degenerates to full self-attention."""
        rng = np.random.default_rng(1)
        x = rng.standard_normal((16, 6)).astype(np.float32)
        with ad.no_grad():
            a = _enc(chunk=64).encode_full(x).data
            b = _enc(chunk=1000).encode_full(x).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_chunk_causality_exact(self):
        rng = np.random.default_rng(2)
        enc = _enc(chunk=2)
        x = rng.standard_normal((32, 6)).astype(np.float32)
        y = x.copy()
        y[-4:] += 1.0  # perturb the last subsampled chunk only
        with ad.no_grad():
            a = enc.encode_full(x).data
            b = enc.encode_full(y).data
        T = a.shape[0]
        np.testing.assert_array_equal(a[: (T - 1) // 2 * 2], b[: (T - 1) // 2 * 2])

    def test_chunk_size_changes_output(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((32, 6)).astype(np.float32)
        with ad.no_grad():
            a = _enc(chunk=1).encode_full(x).data
            b = _enc(chunk=1000).encode_full(x).data
        assert np.max(np.abs(a - b)) > 0

    def test_output_shape(self):
        x = np.zeros((10, 6), dtype=np.float32)
        with ad.no_grad():
            out = _enc().encode_full(x).data
        assert out.shape == (3, 16)

    def test_gradient_flows_to_all_params(self):
        rng = np.random.default_rng(4)
        enc = _enc(n_layers=1)
        x = rng.standard_normal((8, 6)).astype(np.float32)
        out = enc.encode_full(x)
        ad.tsum(out * out).backward()
        for name, p in enc.params.items():
            assert p.grad is not None, name


class TestStreaming:
    def test_single_push_equals_full(self):
        rng = np.random.default_rng(5)
        enc = _enc(chunk=4)
        x = rng.standard_normal((24, 6)).astype(np.float32)
        with ad.no_grad():
            full = enc.encode_full(x).data
        st = enc.new_state()
        parts = [enc.encode_stream(st, x), enc.finalize(st)]
        got = np.concatenate(parts, axis=0)
        np.testing.assert_allclose(got, full, atol=1e-5)

    def test_frame_at_a_time_equals_full(self):
        rng = np.random.default_rng(6)
        enc = _enc(chunk=3)
        x = rng.standard_normal((18, 6)).astype(np.float32)
        with ad.no_grad():
            full = enc.encode_full(x).data
        st = enc.new_state()
        parts = [enc.encode_stream(st, x[i:i + 1]) for i in range(18)]
        parts.append(enc.finalize(st))
        got = np.concatenate([p for p in parts if p.shape[0]], axis=0)
        np.testing.assert_allclose(got, full, atol=1e-5)
        assert got.shape[0] == -(-18 // SUBSAMPLE)

    def test_finalize_flushes_residual(self):
        enc = _enc(chunk=4)
        x = np.ones((9, 6), dtype=np.float32)  # 9 raw frames -> 3 subsampled
        st = enc.new_state()
        n = enc.encode_stream(st, x).shape[0]
        n += enc.finalize(st).shape[0]
        assert n == 3

    def test_push_after_finalize_rejected(self):
        enc = _enc()
        st = enc.new_state()
        enc.finalize(st)
        with pytest.raises(RuntimeError):
            enc.encode_stream(st, np.zeros((4, 6), dtype=np.float32))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_random_chunkings_equal_full(self, seed):
        rng = np.random.default_rng(seed)
        T0 = int(rng.integers(5, 40))
        x = rng.standard_normal((T0, 6)).astype(np.float32)
        enc = _enc(chunk=int(rng.integers(1, 6)))
        with ad.no_grad():
            full = enc.encode_full(x).data
        st = enc.new_state()
        parts = []
        pos = 0
        while pos < T0:
            step = int(rng.integers(1, T0 - pos + 1))
            parts.append(enc.encode_stream(st, x[pos:pos + step]))
            pos += step
        parts.append(enc.finalize(st))
        got = np.concatenate([p for p in parts if p.shape[0]], axis=0)
        np.testing.assert_allclose(got, full, atol=1e-5)
