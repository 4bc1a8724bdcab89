"""Hot numeric kernels: direct 2-D convolution and batched B-spline bases.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy
version. Both paths implement the same arithmetic and agree to ~1e-15
relative (loop order differs, so not bitwise).

``KANCUT_BACKEND`` picks the set: ``numpy`` or ``numba`` force one path
everywhere, the default ``auto`` uses what benchmarks faster per kernel on
desk-scale shapes -- BLAS-backed numpy for the wide-channel convolutions,
numba for the pointwise spline recursion (~16x over vectorized numpy).
``benchmarks/bench_backends.py`` reproduces those numbers.

Convolution kernels operate on already-padded inputs (padding and its
adjoint live in the autodiff layer, where the pad mode is known).
"""

import os

import numpy as np

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    import numba  # noqa: F401
    from numba import njit, prange

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def conv2d_forward_numpy(xp, weight, stride):
    """Valid cross-correlation of padded input [n,c,hp,wp] with [o,c,kh,kw]."""
    n, c, hp, wp = xp.shape
    o, _, kh, kw = weight.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    y = np.zeros((n, o, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            win = xp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                     j : j + (wo - 1) * stride + 1 : stride]
            contrib = np.tensordot(win, weight[:, :, i, j], axes=([1], [1]))
            y += contrib.transpose(0, 3, 1, 2)
    return y


def conv2d_grad_input_numpy(g, weight, stride, hp, wp):
    """Gradient wrt the padded input."""
    n, o, ho, wo = g.shape
    _, c, kh, kw = weight.shape
    gxp = np.zeros((n, c, hp, wp), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(g, weight[:, :, i, j], axes=([1], [0]))
            gxp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                j : j + (wo - 1) * stride + 1 : stride] += contrib.transpose(0, 3, 1, 2)
    return gxp


def conv2d_grad_kernel_numpy(g, xp, stride, kh, kw):
    """Gradient wrt the kernel."""
    n, o, ho, wo = g.shape
    _, c, hp, wp = xp.shape
    gw = np.zeros((o, c, kh, kw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            win = xp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                     j : j + (wo - 1) * stride + 1 : stride]
            gw[:, :, i, j] = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def bspline_bases_numpy(u, knots, degree):
    """All degree-`degree` basis values and derivatives at each point.

    Returns (B, dB), both [len(u), len(knots)-degree-1]. Uses the standard
    two-term recursion with the 0/0 := 0 convention; degree-0 spans are
    half-open [u_i, u_{i+1}).
    """
    x = u[:, None]
    cur = ((knots[:-1] <= x) & (x < knots[1:])).astype(np.float64)
    prev = cur
    for k in range(1, degree + 1):
        prev = cur
        d1 = knots[k:-1] - knots[: -1 - k]
        d2 = knots[k + 1 :] - knots[1:-k]
        a = np.where(d1 != 0.0, (x - knots[: -1 - k]) / np.where(d1 == 0.0, 1.0, d1), 0.0)
        b = np.where(d2 != 0.0, (knots[k + 1 :] - x) / np.where(d2 == 0.0, 1.0, d2), 0.0)
        cur = a * cur[:, :-1] + b * cur[:, 1:]
    if degree == 0:
        return cur, np.zeros_like(cur)
    d1 = knots[degree:-1] - knots[: -1 - degree]
    d2 = knots[degree + 1 :] - knots[1:-degree]
    t1 = np.where(d1 != 0.0, prev[:, :-1] / np.where(d1 == 0.0, 1.0, d1), 0.0)
    t2 = np.where(d2 != 0.0, prev[:, 1:] / np.where(d2 == 0.0, 1.0, d2), 0.0)
    return cur, degree * (t1 - t2)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def conv2d_forward_numba(xp, weight, stride):
        n, c, hp, wp = xp.shape
        o, _, kh, kw = weight.shape
        ho = (hp - kh) // stride + 1
        wo = (wp - kw) // stride + 1
        y = np.zeros((n, o, ho, wo), dtype=np.float64)
        for img in range(n):
            for oc in prange(o):
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            wv = weight[oc, ic, i, j]
                            if stride == 1:
                                # unit stride kept explicit so the inner loop vectorizes
                                for h in range(ho):
                                    xrow = xp[img, ic, h + i]
                                    yrow = y[img, oc, h]
                                    for w in range(wo):
                                        yrow[w] += wv * xrow[w + j]
                            else:
                                for h in range(ho):
                                    xrow = xp[img, ic, h * stride + i]
                                    yrow = y[img, oc, h]
                                    for w in range(wo):
                                        yrow[w] += wv * xrow[w * stride + j]
        return y

    @njit(cache=True, parallel=True)
    def conv2d_grad_input_numba(g, weight, stride, hp, wp):
        n, o, ho, wo = g.shape
        _, c, kh, kw = weight.shape
        gxp = np.zeros((n, c, hp, wp), dtype=np.float64)
        for img in range(n):
            for ic in prange(c):
                for oc in range(o):
                    for i in range(kh):
                        for j in range(kw):
                            wv = weight[oc, ic, i, j]
                            if stride == 1:
                                for h in range(ho):
                                    grow = g[img, oc, h]
                                    xrow = gxp[img, ic, h + i]
                                    for w in range(wo):
                                        xrow[w + j] += wv * grow[w]
                            else:
                                for h in range(ho):
                                    grow = g[img, oc, h]
                                    xrow = gxp[img, ic, h * stride + i]
                                    for w in range(wo):
                                        xrow[w * stride + j] += wv * grow[w]
        return gxp

    @njit(cache=True, parallel=True)
    def conv2d_grad_kernel_numba(g, xp, stride, kh, kw):
        n, o, ho, wo = g.shape
        _, c, hp, wp = xp.shape
        gw = np.zeros((o, c, kh, kw), dtype=np.float64)
        for oc in prange(o):
            for img in range(n):
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            acc = 0.0
                            if stride == 1:
                                for h in range(ho):
                                    grow = g[img, oc, h]
                                    xrow = xp[img, ic, h + i]
                                    for w in range(wo):
                                        acc += grow[w] * xrow[w + j]
                            else:
                                for h in range(ho):
                                    grow = g[img, oc, h]
                                    xrow = xp[img, ic, h * stride + i]
                                    for w in range(wo):
                                        acc += grow[w] * xrow[w * stride + j]
                            gw[oc, ic, i, j] += acc
        return gw

    @njit(cache=True)
    def bspline_bases_numba(u, knots, degree):
        m = u.shape[0]
        nspans = knots.shape[0] - 1
        nb = nspans - degree
        B = np.zeros((m, nb), dtype=np.float64)
        dB = np.zeros((m, nb), dtype=np.float64)
        cur = np.empty(nspans, dtype=np.float64)
        prev = np.empty(nspans, dtype=np.float64)
        for p in range(m):
            x = u[p]
            for i in range(nspans):
                cur[i] = 1.0 if (knots[i] <= x < knots[i + 1]) else 0.0
            for k in range(1, degree + 1):
                if k == degree:
                    for i in range(nspans - k + 1):
                        prev[i] = cur[i]
                for i in range(nspans - k):
                    d1 = knots[i + k] - knots[i]
                    d2 = knots[i + k + 1] - knots[i + 1]
                    a = (x - knots[i]) / d1 * cur[i] if d1 != 0.0 else 0.0
                    b = (knots[i + k + 1] - x) / d2 * cur[i + 1] if d2 != 0.0 else 0.0
                    cur[i] = a + b
            for i in range(nb):
                B[p, i] = cur[i]
            if degree > 0:
                for i in range(nb):
                    d1 = knots[i + degree] - knots[i]
                    d2 = knots[i + degree + 1] - knots[i + 1]
                    t1 = prev[i] / d1 if d1 != 0.0 else 0.0
                    t2 = prev[i + 1] / d2 if d2 != 0.0 else 0.0
                    dB[p, i] = degree * (t1 - t2)
        return B, dB


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

_BACKENDS = {"auto", "numpy", "numba"}


def _pick_backend():
    name = os.environ.get("KANCUT_BACKEND", "auto").strip().lower() or "auto"
    if name not in _BACKENDS:
        raise ValueError(f"KANCUT_BACKEND must be one of {sorted(_BACKENDS)}, got {name!r}")
    if name == "numba" and not _HAS_NUMBA:
        raise ValueError("KANCUT_BACKEND=numba but numba is not importable")
    if name == "auto":
        return "numpy", ("numba" if _HAS_NUMBA else "numpy")
    return name, name


BACKEND = os.environ.get("KANCUT_BACKEND", "auto").strip().lower() or "auto"
CONV_BACKEND, BSPLINE_BACKEND = _pick_backend()

if CONV_BACKEND == "numba":
    conv2d_forward = conv2d_forward_numba
    conv2d_grad_input = conv2d_grad_input_numba
    conv2d_grad_kernel = conv2d_grad_kernel_numba
else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_grad_input = conv2d_grad_input_numpy
    conv2d_grad_kernel = conv2d_grad_kernel_numpy

if BSPLINE_BACKEND == "numba":
    bspline_bases = bspline_bases_numba
else:
    bspline_bases = bspline_bases_numpy


def backend_pairs():
    """(name, kernel dict) for every available backend; used by tests/benchmarks."""
    out = [("numpy", {
        "conv2d_forward": conv2d_forward_numpy,
        "conv2d_grad_input": conv2d_grad_input_numpy,
        "conv2d_grad_kernel": conv2d_grad_kernel_numpy,
        "bspline_bases": bspline_bases_numpy,
    })]
    if _HAS_NUMBA:
        out.append(("numba", {
            "conv2d_forward": conv2d_forward_numba,
            "conv2d_grad_input": conv2d_grad_input_numba,
            "conv2d_grad_kernel": conv2d_grad_kernel_numba,
            "bspline_bases": bspline_bases_numba,
        }))
    return out
