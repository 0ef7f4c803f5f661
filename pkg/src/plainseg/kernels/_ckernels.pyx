# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled run-length / overlap kernels (hot inner loops).

Same signatures as the pure-python fallback in ``_pykernels``; parity between
the two backends is enforced by the test suite.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def rle_encode(mask):
    """Encode a dense binary mask as column-major run lengths."""
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("mask must be a non-empty 2-d array")
    cdef cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] m = \
        np.ascontiguousarray(arr != 0, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0]
    cdef Py_ssize_t w = m.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] buf = np.empty(h * w + 1, dtype=np.int64)
    cdef Py_ssize_t n_runs = 0
    cdef cnp.uint8_t cur = 0
    cdef cnp.int64_t run = 0
    cdef Py_ssize_t r, c
    cdef cnp.uint8_t v
    for c in range(w):
        for r in range(h):
            v = m[r, c]
            if v == cur:
                run += 1
            else:
                buf[n_runs] = run
                n_runs += 1
                cur = v
                run = 1
    buf[n_runs] = run
    n_runs += 1
    return buf[:n_runs].copy()


def rle_decode(counts, height, width):
    """Expand run lengths back into a dense uint8 mask of shape (height, width)."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cts = \
        np.ascontiguousarray(counts, dtype=np.int64)
    cdef Py_ssize_t h = height
    cdef Py_ssize_t w = width
    if h <= 0 or w <= 0:
        raise ValueError("mask dimensions must be positive")
    cdef Py_ssize_t i
    cdef cnp.int64_t total = 0
    for i in range(cts.shape[0]):
        if cts[i] < 0:
            raise ValueError("run lengths must be non-negative")
        total += cts[i]
    if total != h * w:
        raise ValueError(
            "run lengths sum to %d, expected %d" % (total, h * w)
        )
    flat = np.zeros(h * w, dtype=np.uint8)
    cdef cnp.uint8_t[::1] o = flat
    cdef Py_ssize_t pos = 0, k
    for i in range(cts.shape[0]):
        if i & 1:
            for k in range(pos, pos + cts[i]):
                o[k] = 1
        pos += cts[i]
    return np.ascontiguousarray(flat.reshape((h, w), order="F"))


def rle_area(counts):
    """Number of foreground pixels (sum of the one-runs)."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cts = \
        np.ascontiguousarray(counts, dtype=np.int64)
    cdef cnp.int64_t area = 0
    cdef Py_ssize_t i
    for i in range(1, cts.shape[0], 2):
        area += cts[i]
    return int(area)


def rle_intersection(a_counts, b_counts):
    """Foreground overlap of two run-length masks, computed on the runs."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] a = \
        np.ascontiguousarray(a_counts, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] b = \
        np.ascontiguousarray(b_counts, dtype=np.int64)
    cdef Py_ssize_t ia = 0, ib = 0
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    cdef cnp.int64_t rem_a = a[0] if na else 0
    cdef cnp.int64_t rem_b = b[0] if nb else 0
    cdef int val_a = 0, val_b = 0
    cdef cnp.int64_t inter = 0, step
    while True:
        while ia < na and rem_a == 0:
            ia += 1
            if ia < na:
                rem_a = a[ia]
                val_a = ia & 1
        while ib < nb and rem_b == 0:
            ib += 1
            if ib < nb:
                rem_b = b[ib]
                val_b = ib & 1
        if ia >= na or ib >= nb:
            break
        step = rem_a if rem_a < rem_b else rem_b
        if val_a and val_b:
            inter += step
        rem_a -= step
        rem_b -= step
    return int(inter)


def box_iou_matrix(a, b):
    """Pairwise IoU of two sets of xyxy boxes; degenerate unions give 0."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] aa = \
        np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] bb = \
        np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = aa.shape[0], m = bb.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double ax0, ay0, ax1, ay1, area_a, area_b, iw, ih, inter, union
    for i in range(n):
        ax0 = aa[i, 0]; ay0 = aa[i, 1]; ax1 = aa[i, 2]; ay1 = aa[i, 3]
        area_a = max(ax1 - ax0, 0.0) * max(ay1 - ay0, 0.0)
        for j in range(m):
            iw = min(ax1, bb[j, 2]) - max(ax0, bb[j, 0])
            if iw <= 0:
                continue
            ih = min(ay1, bb[j, 3]) - max(ay0, bb[j, 1])
            if ih <= 0:
                continue
            inter = iw * ih
            area_b = max(bb[j, 2] - bb[j, 0], 0.0) * max(bb[j, 3] - bb[j, 1], 0.0)
            union = area_a + area_b - inter
            if union > 0:
                out[i, j] = inter / union
    return out


def nms(boxes, scores, iou_threshold):
    """Greedy non-maximum suppression over xyxy boxes.

    Boxes are visited in descending score order (ties broken by lower index);
    a box is suppressed when its IoU with an already kept box exceeds
    ``iou_threshold``. Returns the kept indices in visit order.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] bx = \
        np.ascontiguousarray(np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sc = \
        np.ascontiguousarray(np.asarray(scores, dtype=np.float64).ravel())
    if bx.shape[0] != sc.shape[0]:
        raise ValueError("boxes and scores must have equal length")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = \
        np.argsort(-sc, kind="stable").astype(np.int64)
    cdef Py_ssize_t n = bx.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] suppressed = np.zeros(n, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] keep = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t n_keep = 0, pos, q, i, j
    cdef double thr = iou_threshold
    cdef double ix0, iy0, ix1, iy1, area_i, area_j, iw, ih, inter, union
    for pos in range(n):
        if suppressed[pos]:
            continue
        i = order[pos]
        keep[n_keep] = i
        n_keep += 1
        ix0 = bx[i, 0]; iy0 = bx[i, 1]; ix1 = bx[i, 2]; iy1 = bx[i, 3]
        area_i = max(ix1 - ix0, 0.0) * max(iy1 - iy0, 0.0)
        for q in range(pos + 1, n):
            if suppressed[q]:
                continue
            j = order[q]
            iw = min(ix1, bx[j, 2]) - max(ix0, bx[j, 0])
            if iw <= 0:
                continue
            ih = min(iy1, bx[j, 3]) - max(iy0, bx[j, 1])
            if ih <= 0:
                continue
            inter = iw * ih
            area_j = max(bx[j, 2] - bx[j, 0], 0.0) * max(bx[j, 3] - bx[j, 1], 0.0)
            union = area_i + area_j - inter
            if union > 0 and inter / union > thr:
                suppressed[q] = 1
    return keep[:n_keep].copy()
