"""Tests for the first-frame sink and frame-0 relocation."""

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rainfusion.errors import InvalidArgumentError
from rainfusion.models import BlockingSpec, BlockMask, PermutationMap, VideoLayout, WindowSpec
from rainfusion.permutation import apply_permutation, build_window_permutation, compose, invert
from rainfusion.sink import SinkSpec, apply_first_frame_sink, build_relocation


@st.composite
def sink_cases(draw):
    layout = VideoLayout(draw(st.integers(1, 4)), draw(st.integers(1, 4)), draw(st.integers(1, 4)))
    block = draw(st.integers(1, 6))
    blocking = BlockingSpec.square(block, layout.n)
    seed = draw(st.integers(0, 2**16))
    bits = np.random.default_rng(seed).random((blocking.t_q, blocking.t_k)) < 0.3
    relocated = draw(st.booleans()) and layout.f > 1
    order = build_relocation(layout) if relocated else None
    return BlockMask(bits), SinkSpec(layout, order), blocking


class TestApplySink:
    def test_forces_first_row_and_column(self):
        blocking = BlockingSpec.square(4, 16)
        sink = SinkSpec(VideoLayout(4, 2, 2))
        out = apply_first_frame_sink(BlockMask(np.eye(4, dtype=bool)), sink, blocking)
        np.testing.assert_array_equal(
            out.bits,
            [[1, 1, 1, 1], [1, 1, 0, 0], [1, 0, 1, 0], [1, 0, 0, 1]],
        )

    def test_frame0_fills_first_block(self):
        blocking = BlockingSpec.square(4, 8)
        out = apply_first_frame_sink(BlockMask(np.zeros((2, 2), dtype=bool)), SinkSpec(VideoLayout(2, 2, 2)), blocking)
        np.testing.assert_array_equal(out.bits, [[1, 1], [1, 0]])

    def test_all_ones_unchanged(self):
        blocking = BlockingSpec.square(4, 16)
        full = BlockMask.full(4, 4)
        assert apply_first_frame_sink(full, SinkSpec(VideoLayout(4, 2, 2)), blocking) == full

    def test_single_frame_is_dense(self):
        blocking = BlockingSpec.square(4, 16)
        out = apply_first_frame_sink(BlockMask(np.eye(4, dtype=bool)), SinkSpec(VideoLayout(1, 4, 4)), blocking)
        assert out == BlockMask.full(4, 4)

    def test_partial_block_forced_in_full(self):
        blocking = BlockingSpec.square(3, 12)
        out = apply_first_frame_sink(BlockMask(np.eye(4, dtype=bool)), SinkSpec(VideoLayout(3, 2, 2)), blocking)
        np.testing.assert_array_equal(
            out.bits,
            [[1, 1, 1, 1], [1, 1, 1, 1], [1, 1, 1, 0], [1, 1, 0, 1]],
        )

    def test_layout_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            apply_first_frame_sink(BlockMask.full(2, 2), SinkSpec(VideoLayout(2, 2, 2)), BlockingSpec.square(4, 6))

    @settings(max_examples=60, deadline=None)
    @given(case=sink_cases())
    def test_only_adds_bits(self, case):
        mask, sink, blocking = case
        out = apply_first_frame_sink(mask, sink, blocking)
        assert (out.bits | mask.bits == out.bits).all()

    @settings(max_examples=60, deadline=None)
    @given(case=sink_cases())
    def test_idempotent(self, case):
        mask, sink, blocking = case
        once = apply_first_frame_sink(mask, sink, blocking)
        assert apply_first_frame_sink(once, sink, blocking) == once

    @settings(max_examples=60, deadline=None)
    @given(case=sink_cases())
    def test_every_row_reaches_frame0(self, case):
        mask, sink, blocking = case
        out = apply_first_frame_sink(mask, sink, blocking)
        forced = np.unique(sink.frame0_positions // blocking.b_k)
        assert out.bits[:, forced].all()
        assert (out.row_counts() >= math.ceil(sink.layout.frame_tokens / blocking.b_k)).all()


class TestSinkSpec:
    def test_default_positions(self):
        np.testing.assert_array_equal(SinkSpec(VideoLayout(3, 2, 2)).frame0_positions, [0, 1, 2, 3])

    def test_positions_follow_permutation(self):
        layout = VideoLayout(4, 4, 4)
        order = build_window_permutation(layout, WindowSpec(2, 2, 2))
        positions = SinkSpec(layout, order).frame0_positions
        assert len(positions) == 16
        assert (order.forward[positions] < 16).all()

    def test_order_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            SinkSpec(VideoLayout(2, 2, 2), PermutationMap.identity(4))


class TestRelocation:
    def test_two_frames(self):
        np.testing.assert_array_equal(build_relocation(VideoLayout(2, 1, 2)).forward, [2, 3, 0, 1])

    def test_single_frame_is_identity(self, caplog):
        with caplog.at_level(logging.WARNING, logger="rainfusion.sink"):
            perm = build_relocation(VideoLayout(1, 4, 4))
        assert perm.is_identity
        assert "single-frame" in caplog.text

    def test_round_trip(self):
        x = np.arange(24)[:, None]
        perm = build_relocation(VideoLayout(3, 2, 4))
        np.testing.assert_array_equal(apply_permutation(apply_permutation(x, perm), invert(perm)), x)

    def test_frame0_moves_to_end(self):
        layout = VideoLayout(3, 2, 4)
        positions = SinkSpec(layout, build_relocation(layout)).frame0_positions
        np.testing.assert_array_equal(positions, np.arange(16, 24))

    def test_forced_columns_trail(self):
        layout = VideoLayout(4, 4, 4)
        blocking = BlockingSpec.square(16, layout.n)
        out = apply_first_frame_sink(BlockMask(np.eye(4, dtype=bool)), SinkSpec(layout, build_relocation(layout)), blocking)
        assert out.bits[:, 3].all() and out.bits[3].all()
        assert not out.bits[0, 1]

    def test_windowed_tail(self):
        layout = VideoLayout(3, 4, 4)
        perm = build_relocation(layout, WindowSpec(4, 2, 2))
        tail = build_window_permutation(VideoLayout(2, 4, 4), WindowSpec(2, 2, 2))
        np.testing.assert_array_equal(perm.forward[:32], 16 + tail.forward)
        np.testing.assert_array_equal(perm.forward[32:], np.arange(16))

    def test_composes_with_window_permutation(self):
        layout = VideoLayout(3, 2, 2)
        order = compose(build_window_permutation(layout, WindowSpec(1, 2, 1)), build_relocation(layout))
        np.testing.assert_array_equal(np.sort(order.forward), np.arange(12))
        assert (order.forward[SinkSpec(layout, order).frame0_positions] < 4).all()
