"""First-frame sink: dense rows/columns for blocks holding frame-0 tokens."""

import logging
from dataclasses import dataclass

import numpy as np

from rainfusion.errors import InvalidArgumentError
from rainfusion.models import BlockingSpec, BlockMask, PermutationMap, VideoLayout, WindowSpec
from rainfusion.permutation import build_window_permutation

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SinkSpec:
    """Frame-0 token set of a layout under a token order.

    `order` is None for the default [F, H, W] flattening; otherwise the
    permutation (window, relocation, or both) the sequence went through.
    """

    layout: VideoLayout
    order: PermutationMap | None = None

    def __post_init__(self):
        if self.order is not None and len(self.order) != self.layout.n:
            raise InvalidArgumentError(
                f"token order has length {len(self.order)}, layout has {self.layout.n} tokens",
                module="first-frame-sink",
            )

    @property
    def frame0_positions(self) -> np.ndarray:
        """Sorted sequence positions of the H*W frame-0 tokens."""
        frame0 = np.arange(self.layout.frame_tokens)
        if self.order is None:
            return frame0
        return np.sort(self.order.inverse[frame0])


def apply_first_frame_sink(mask: BlockMask, sink: SinkSpec, blocking: BlockingSpec) -> BlockMask:
    """Force rows of query blocks and columns of key blocks touching frame 0.

    A block that only partly overlaps frame 0 is forced in full. No bit is
    ever cleared.
    """
    mask.check_matches(blocking)
    if (blocking.n_q, blocking.n_k) != (sink.layout.n, sink.layout.n):
        raise InvalidArgumentError(
            f"blocking covers {(blocking.n_q, blocking.n_k)} tokens, layout has {sink.layout.n}",
            module="first-frame-sink",
        )
    positions = sink.frame0_positions
    bits = mask.bits.copy()
    bits[np.unique(positions // blocking.b_q), :] = True
    bits[:, np.unique(positions // blocking.b_k)] = True
    return BlockMask(bits)


def build_relocation(layout: VideoLayout, window: WindowSpec | None = None) -> PermutationMap:
    """Move frame-0 tokens to the end of the sequence.

    Frames 1..F-1 come first in their original relative order, or window
    permuted when `window` is given (clipped to F-1 frames); frame-0 tokens
    follow unwindowed. A single-frame layout yields the identity.
    """
    if layout.is_image:
        log.warning("relocation requested on a single-frame layout; using identity order")
        return PermutationMap.identity(layout.n)

    hw = layout.frame_tokens
    if window is None:
        rest = np.arange(hw, layout.n)
    else:
        tail = VideoLayout(layout.f - 1, layout.h, layout.w)
        rest = hw + build_window_permutation(tail, window.clipped(tail)).forward
    return PermutationMap(np.concatenate([rest, np.arange(hw)]))
