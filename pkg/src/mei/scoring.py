"""Score kernels for the block-term interaction model.

Three equivalent ways to compute the same score are provided:

* :func:`mei_score` sums one Tucker contraction per partition,
* :func:`block_diagonal_score` is the bilinear form ``h^T M t`` with a
  block-diagonal matching matrix,
* :func:`sparse_tucker_score` contracts full vectors with the direct-sum core.

Cores are indexed ``w[x, y, z]`` with ``x`` the head mode, ``y`` the tail mode
and ``z`` the relation mode. Everything runs in float64.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _as_vec(v, name):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be a vector, got shape {v.shape}")
    return v


def _as_core(w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 3 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"core must have shape (Ce, Ce, Cr), got {w.shape}")
    return w


def matching_matrix(w, r_k) -> np.ndarray:
    """Contract the relation mode: ``m[x, y] = sum_z w[x, y, z] r_k[z]``."""
    w = _as_core(w)
    r_k = _as_vec(r_k, "r_k")
    if w.shape[2] != r_k.shape[0]:
        raise ShapeError(f"core relation mode {w.shape[2]} != len(r_k) {r_k.shape[0]}")
    return w @ r_k


def tucker_score_local(w, h_k, t_k, r_k) -> float:
    w = _as_core(w)
    h_k = _as_vec(h_k, "h_k")
    t_k = _as_vec(t_k, "t_k")
    if h_k.shape[0] != w.shape[0] or t_k.shape[0] != w.shape[1]:
        raise ShapeError(f"entity partitions {h_k.shape[0]}, {t_k.shape[0]} "
                         f"do not match core {w.shape}")
    return float(h_k @ matching_matrix(w, r_k) @ t_k)


def _cores_for(cores, k):
    if isinstance(cores, np.ndarray):
        cores = [cores] if cores.ndim == 3 else list(cores)
    cores = [_as_core(c) for c in cores]
    if len(cores) == 1:
        return cores * k
    if len(cores) != k:
        raise ShapeError(f"expected 1 or {k} cores, got {len(cores)}")
    return cores


def mei_score(H, T, R, cores) -> float:
    """Sum of per-partition Tucker scores.

    ``H`` and ``T`` are ``(K, Ce)``, ``R`` is ``(K, Cr)``; ``cores`` is either a
    single shared core or a sequence of ``K`` cores.
    """
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if not (H.shape[0] == T.shape[0] == R.shape[0]):
        raise ShapeError(f"partition counts differ: {H.shape[0]}, {T.shape[0]}, {R.shape[0]}")
    ws = _cores_for(cores, H.shape[0])
    return float(sum(tucker_score_local(w, h, t, r) for w, h, t, r in zip(ws, H, T, R)))


def _split(v, k, name):
    v = _as_vec(v, name)
    if v.shape[0] % k:
        raise ShapeError(f"len({name})={v.shape[0]} is not divisible by K={k}")
    return v.reshape(k, -1)


def block_diagonal_score(h, t, blocks) -> float:
    """``h^T blockdiag(M_1..M_K) t`` without materialising the full matrix."""
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    k = len(blocks)
    ce = blocks[0].shape[0]
    if any(b.shape != (ce, ce) for b in blocks):
        raise ShapeError("blocks must all be square with the same size")
    H = _split(h, k, "h")
    T = _split(t, k, "t")
    if H.shape[1] != ce or T.shape[1] != ce:
        raise ShapeError(f"K*Ce={k * ce} does not match len(h)={len(h)}")
    return float(np.einsum("kx,kxy,ky->", H, np.stack(blocks), T))


def sparse_tucker_score(h, t, r, cores) -> float:
    """Score of full vectors against the direct sum of the partition cores."""
    first = cores if isinstance(cores, np.ndarray) and cores.ndim == 3 else cores[0]
    ce, _, cr = _as_core(first).shape
    R = _split(r, len(_as_vec(r, "r")) // cr, "r")
    k = R.shape[0]
    ws = np.stack(_cores_for(cores, k))
    H = _split(h, k, "h")
    T = _split(t, k, "t")
    if H.shape[1] != ce or T.shape[1] != ce or R.shape[1] != cr:
        raise ShapeError("vector sizes do not match the cores")
    return float(np.einsum("kxyz,kx,ky,kz->", ws, H, T, R))


def direct_sum_core(cores, k=None) -> np.ndarray:
    """Dense ``(K*Ce, K*Ce, K*Cr)`` core with the partition cores on its diagonal."""
    if k is None:
        k = 1 if isinstance(cores, np.ndarray) and cores.ndim == 3 else len(cores)
    cores = _cores_for(cores, k)
    ce, _, cr = cores[0].shape
    n = len(cores)
    dense = np.zeros((n * ce, n * ce, n * cr))
    for i, w in enumerate(cores):
        dense[i * ce:(i + 1) * ce, i * ce:(i + 1) * ce, i * cr:(i + 1) * cr] = w
    return dense


def trilinear_score(h, t, r) -> float:
    """``sum_i h_i t_i r_i`` (DistMult)."""
    h, t, r = (_as_vec(v, n) for v, n in ((h, "h"), (t, "t"), (r, "r")))
    if not (h.shape == t.shape == r.shape):
        raise ShapeError(f"trilinear product needs equal sizes, got {h.shape}, {t.shape}, {r.shape}")
    return float(np.sum(h * t * r))


def rescal_score(h, t, M) -> float:
    """Full bilinear score ``h^T M t`` (RESCAL)."""
    h = _as_vec(h, "h")
    t = _as_vec(t, "t")
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (h.shape[0], t.shape[0]):
        raise ShapeError(f"matching matrix {M.shape} does not fit {h.shape[0]}x{t.shape[0]}")
    return float(h @ M @ t)
