"""Spatiotemporal window permutation of flattened [F, H, W] token sequences.

Windows are enumerated in raster order (f-major, then h, then w) and the
tokens inside a window keep their local (f, h, w) raster order. Boundary
windows are ragged, so the map is a bijection on exactly N tokens. Images
are the F = 1 case with a 2D window (1, w_h, w_w).
"""

import numpy as np

from rainfusion.errors import InvalidArgumentError
from rainfusion.models import (
    DEFAULT_IMAGE_WINDOW,
    DEFAULT_WINDOW,
    PermutationMap,
    VideoLayout,
    WindowSpec,
)


def default_window(layout: VideoLayout) -> WindowSpec:
    extents = DEFAULT_IMAGE_WINDOW if layout.is_image else DEFAULT_WINDOW
    return WindowSpec(*extents).clipped(layout)


def build_window_permutation(layout: VideoLayout, window: WindowSpec) -> PermutationMap:
    """Reorder tokens window by window; forward[new] = old index f*H*W + h*W + w."""
    window.check_fits(layout)
    f, h, w = np.indices((layout.f, layout.h, layout.w)).reshape(3, -1)
    # np.lexsort treats the last key as primary
    forward = np.lexsort((
        w % window.w_w,
        h % window.w_h,
        f % window.w_f,
        w // window.w_w,
        h // window.w_h,
        f // window.w_f,
    ))
    return PermutationMap(forward)


def apply_permutation(x: np.ndarray, p: PermutationMap) -> np.ndarray:
    """Row r of the result is row forward[r] of x."""
    if x.shape[0] != len(p):
        raise InvalidArgumentError(
            f"matrix has {x.shape[0]} rows, permutation has length {len(p)}", module="permutation"
        )
    return x[p.forward]


def invert(p: PermutationMap) -> PermutationMap:
    return PermutationMap(forward=p.inverse, inverse=p.forward)


def compose(first: PermutationMap, second: PermutationMap) -> PermutationMap:
    """Map equivalent to applying `first` and then `second`."""
    if len(first) != len(second):
        raise InvalidArgumentError(
            f"cannot compose permutations of length {len(first)} and {len(second)}", module="permutation"
        )
    return PermutationMap(first.forward[second.forward])
