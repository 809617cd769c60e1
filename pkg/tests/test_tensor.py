"""Tests for matrix validation, the synthetic generator, and RFT1 file I/O."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rainfusion.errors import (
    DimensionOverflowError,
    InvalidArgumentError,
    MagicMismatchError,
    NonFiniteValueError,
    TensorFormatError,
    TensorIOError,
    TruncatedPayloadError,
)
from rainfusion.models import TENSOR_HEADER, Precision, VideoLayout
from rainfusion.tensor import (
    SyntheticSpec,
    as_matrix,
    check_attention_inputs,
    generate_synthetic_qkv,
    load_qkv,
    load_tensor,
    save_qkv,
    save_tensor,
)


def _cos(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a * b).sum(axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))


def _adjacent_vs_random(x: np.ndarray, layout: VideoLayout, pairs: int = 2000, seed: int = 0) -> tuple[float, float]:
    grid = np.arange(layout.n).reshape(layout.f, layout.h, layout.w)
    neighbors = np.concatenate([
        np.stack([grid[:-1].ravel(), grid[1:].ravel()], axis=1),
        np.stack([grid[:, :-1].ravel(), grid[:, 1:].ravel()], axis=1),
        np.stack([grid[:, :, :-1].ravel(), grid[:, :, 1:].ravel()], axis=1),
    ])
    rng = np.random.default_rng(seed)
    random_pairs = rng.integers(0, layout.n, size=(pairs, 2))
    random_pairs = random_pairs[random_pairs[:, 0] != random_pairs[:, 1]]
    x = x.astype(np.float64)
    adjacent = _cos(x[neighbors[:, 0]], x[neighbors[:, 1]]).mean()
    scattered = _cos(x[random_pairs[:, 0]], x[random_pairs[:, 1]]).mean()
    return adjacent, scattered


def _raw_tensor(code: int, rows: int, cols: int, values, dtype="<f4") -> bytes:
    return struct.pack(TENSOR_HEADER, b"RFT1", code, rows, cols) + np.asarray(values, dtype=dtype).tobytes()


# ── Matrix validation ────────────────────────────────────────────────────────

class TestAsMatrix:
    def test_keeps_float32(self):
        assert as_matrix(np.zeros((2, 3), dtype=np.float32)).dtype == np.float32

    def test_casts_to_precision(self):
        assert as_matrix([[1, 2]], Precision.F64).dtype == np.float64

    def test_rejects_1d(self):
        with pytest.raises(InvalidArgumentError):
            as_matrix(np.zeros(3))

    def test_rejects_empty(self):
        with pytest.raises(InvalidArgumentError):
            as_matrix(np.zeros((0, 3)))

    def test_rejects_nan(self):
        with pytest.raises(NonFiniteValueError):
            as_matrix([[1.0, np.nan]])

    def test_attention_input_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            check_attention_inputs(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)))
        with pytest.raises(InvalidArgumentError):
            check_attention_inputs(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((3, 3)))


# ── Synthetic generator ──────────────────────────────────────────────────────

class TestSyntheticGenerator:
    def test_single_token_deterministic(self):
        spec = SyntheticSpec(seed=7, layout=VideoLayout(1, 1, 1), d=4, smoothness=0.0)
        first = generate_synthetic_qkv(spec)
        second = generate_synthetic_qkv(spec)
        for a, b in zip(first, second):
            assert a.shape == (1, 4)
            np.testing.assert_array_equal(a, b)

    def test_smoothed_deterministic(self):
        spec = SyntheticSpec(seed=2, layout=VideoLayout(2, 4, 4), d=8, smoothness=0.5)
        for a, b in zip(generate_synthetic_qkv(spec), generate_synthetic_qkv(spec)):
            np.testing.assert_array_equal(a, b)

    def test_seed_sensitivity(self):
        layout = VideoLayout(2, 4, 4)
        q3, _, _ = generate_synthetic_qkv(SyntheticSpec(seed=3, layout=layout, d=8))
        q4, _, _ = generate_synthetic_qkv(SyntheticSpec(seed=4, layout=layout, d=8))
        assert not np.array_equal(q3, q4)

    def test_shapes_and_precision(self):
        spec = SyntheticSpec(seed=1, layout=VideoLayout(2, 3, 5), d=6, precision=Precision.F64)
        q, k, v = generate_synthetic_qkv(spec)
        assert q.shape == k.shape == v.shape == (30, 6)
        assert q.dtype == np.float64

    def test_adjacent_tokens_more_similar(self):
        layout = VideoLayout(4, 8, 8)
        q, k, _ = generate_synthetic_qkv(SyntheticSpec(seed=3, layout=layout, d=16, smoothness=0.9))
        for x in (q, k):
            adjacent, scattered = _adjacent_vs_random(x, layout)
            assert adjacent > scattered

    @pytest.mark.parametrize("seed", range(5))
    def test_locality_margin(self, seed):
        layout = VideoLayout(4, 8, 8)
        q, _, _ = generate_synthetic_qkv(SyntheticSpec(seed=seed, layout=layout, d=16, smoothness=0.8))
        adjacent, scattered = _adjacent_vs_random(q, layout, seed=seed)
        assert adjacent - scattered > 0.1

    def test_invalid_arguments(self):
        with pytest.raises(InvalidArgumentError):
            SyntheticSpec(seed=0, layout=VideoLayout(1, 1, 1), d=0)
        with pytest.raises(InvalidArgumentError):
            SyntheticSpec(seed=0, layout=VideoLayout(1, 1, 1), d=4, smoothness=1.5)
        with pytest.raises(InvalidArgumentError):
            VideoLayout(0, 4, 4)


# ── RFT1 files ───────────────────────────────────────────────────────────────

class TestTensorFile:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_round_trip(self, tmp_path, dtype):
        m = np.arange(6, dtype=dtype).reshape(3, 2)
        path = save_tensor(m, tmp_path / "m.rft")
        loaded = load_tensor(path)
        assert loaded.dtype == dtype
        np.testing.assert_array_equal(loaded, m)

    @settings(max_examples=25, deadline=None)
    @given(
        rows=st.integers(1, 6),
        cols=st.integers(1, 6),
        seed=st.integers(0, 2**16),
        precision=st.sampled_from(list(Precision)),
    )
    def test_round_trip_bit_exact(self, tmp_path_factory, rows, cols, seed, precision):
        m = np.random.default_rng(seed).standard_normal((rows, cols)).astype(precision.dtype)
        path = save_tensor(m, tmp_path_factory.mktemp("rft") / "m.rft")
        assert load_tensor(path).tobytes() == m.tobytes()

    def test_header_layout(self, tmp_path):
        path = save_tensor(np.ones((2, 3), dtype=np.float64), tmp_path / "m.rft")
        raw = path.read_bytes()
        assert raw[:4] == b"RFT1"
        assert raw[4] == 1
        assert struct.unpack_from("<QQ", raw, 8) == (2, 3)
        assert len(raw) == 24 + 2 * 3 * 8

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rft"
        path.write_bytes(b"XXXX" + _raw_tensor(0, 1, 1, [0.0])[4:])
        with pytest.raises(MagicMismatchError) as err:
            load_tensor(path)
        assert err.value.field == "magic"

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.rft"
        path.write_bytes(_raw_tensor(0, 2, 2, [1.0, 2.0, 3.0]))
        with pytest.raises(TruncatedPayloadError) as err:
            load_tensor(path)
        assert err.value.field == "payload"

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "header.rft"
        path.write_bytes(b"RFT1\x00\x00")
        with pytest.raises(TruncatedPayloadError) as err:
            load_tensor(path)
        assert err.value.field == "header"

    def test_dimension_overflow(self, tmp_path):
        path = tmp_path / "huge.rft"
        path.write_bytes(_raw_tensor(0, 2**40, 2**20, [0.0]))
        with pytest.raises(DimensionOverflowError):
            load_tensor(path)

    def test_zero_rows(self, tmp_path):
        path = tmp_path / "zero.rft"
        path.write_bytes(_raw_tensor(0, 0, 2, []))
        with pytest.raises(DimensionOverflowError) as err:
            load_tensor(path)
        assert err.value.field == "rows"

    def test_unknown_precision(self, tmp_path):
        path = tmp_path / "prec.rft"
        path.write_bytes(_raw_tensor(7, 1, 1, [0.0]))
        with pytest.raises(TensorFormatError) as err:
            load_tensor(path)
        assert err.value.field == "precision"

    def test_non_finite(self, tmp_path):
        path = tmp_path / "nan.rft"
        path.write_bytes(_raw_tensor(0, 1, 2, [1.0, np.inf]))
        with pytest.raises(NonFiniteValueError) as err:
            load_tensor(path)
        assert err.value.field == "data"

    def test_missing_file(self, tmp_path):
        with pytest.raises(TensorIOError) as err:
            load_tensor(tmp_path / "missing.rft")
        assert err.value.exit_code == 4

    def test_qkv_triplet(self, tmp_path, make_qkv):
        q, k, v = make_qkv(0, 5, 3, dtype=np.float32)
        paths = save_qkv(tmp_path / "case", q, k, v)
        assert [p.name for p in paths] == ["case.q.rft", "case.k.rft", "case.v.rft"]
        for a, b in zip(load_qkv(tmp_path / "case"), (q, k, v)):
            np.testing.assert_array_equal(a, b)
