"""Run-length and box-overlap kernels with a compiled core.

The compiled Cython extension is preferred when available; setting the
environment variable ``PLAINSEG_PURE_PY=1`` (or a failed extension build)
selects the pure numpy fallback. Both backends expose identical functions and
are kept in lockstep by parity tests; ``BACKEND`` reports which one is active.
"""

import os

if os.environ.get("PLAINSEG_PURE_PY"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pykernels as _impl

BACKEND: str = _impl.BACKEND

rle_encode = _impl.rle_encode
rle_decode = _impl.rle_decode
rle_area = _impl.rle_area
rle_intersection = _impl.rle_intersection
box_iou_matrix = _impl.box_iou_matrix
nms = _impl.nms

__all__ = [
    "BACKEND",
    "rle_encode",
    "rle_decode",
    "rle_area",
    "rle_intersection",
    "box_iou_matrix",
    "nms",
]
