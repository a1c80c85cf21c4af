"""Selective state-space scan and multi-path 2-D cycle scanning.

The recurrence, per channel ``c`` and state ``n``::

    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * x_t
    y_t = sum_n C_t[n] * h_t[n] + D * x_t

is evaluated sequentially in ``t`` (cost ``O(L * C * N)``) with every other
axis vectorised. The backward pass runs the adjoint recurrence in reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError, ShapeError
from .layers import Module, avgpool2, upsample2
from .tensor import Tensor


def selective_scan(x, delta, A, B, C, D=None) -> Tensor:
    """Fused differentiable scan.

    Shapes: ``x, delta: [..., L, Ch]``; ``A: [..., Ch, N]`` (broadcast over the
    leading axes); ``B, C: [..., L, N]``; ``D: [..., Ch]`` or ``None``.
    """
    x, delta, A, B, C = (T.as_tensor(v) for v in (x, delta, A, B, C))
    if x.shape[-2] < 1:
        raise ShapeError("scan needs a sequence of length >= 1")
    if delta.shape != x.shape:
        raise ShapeError(f"delta {delta.shape} must match x {x.shape}")
    parents = [x, delta, A, B, C] + ([T.as_tensor(D)] if D is not None else [])
    for p in parents:
        if not np.all(np.isfinite(p.data)):
            raise NumericError("non-finite scan parameters")
    xd, dd, Ad, Bd, Cd = x.data, delta.data, A.data, B.data, C.data
    Dd = parents[5].data if D is not None else None
    L = xd.shape[-2]
    if not (T.is_grad_enabled() and any(p.requires_grad for p in parents)):
        return Tensor(_scan_forward_chunked(xd, dd, Ad, Bd, Cd, Dd))

    # time-major working layout: [L, ..., Ch, N]
    d_t = np.ascontiguousarray(np.moveaxis(dd, -2, 0))
    dx_t = np.ascontiguousarray(np.moveaxis(dd * xd, -2, 0))
    B_t = np.ascontiguousarray(np.moveaxis(Bd, -2, 0))
    C_t = np.ascontiguousarray(np.moveaxis(Cd, -2, 0))
    dA_t = np.exp(d_t[..., None] * Ad)
    u_t = dx_t[..., None] * B_t[..., None, :]
    lead = np.broadcast_shapes(dA_t.shape, u_t.shape)
    dA_t = np.ascontiguousarray(np.broadcast_to(dA_t, lead))
    hs = np.array(np.broadcast_to(u_t, lead), order="C")
    for t in range(1, L):
        hs[t] += dA_t[t] * hs[t - 1]
    y = np.moveaxis(np.einsum("...cn,...n->...c", hs, C_t), 0, -2)
    if Dd is not None:
        y = y + Dd[..., None, :] * xd

    def bw(g):
        g_t = np.moveaxis(g, -2, 0)
        gC = np.moveaxis(np.einsum("...cn,...c->...n", hs, g_t), 0, -2)
        gh = np.array(np.broadcast_to(g_t[..., None] * C_t[..., None, :], lead), order="C")
        for t in range(L - 2, -1, -1):
            gh[t] += dA_t[t + 1] * gh[t + 1]
        gz = gh * dA_t                                   # d/dz of the exp(z) path
        gz[0] = 0
        gz[1:] *= hs[:-1]
        gu_b = np.einsum("...cn,...n->...c", gh, B_t)
        gd_t = np.einsum("...cn,...cn->...c", gz, np.broadcast_to(Ad, lead)) + gu_b * np.moveaxis(xd, -2, 0)
        gx = np.moveaxis(gu_b * d_t, 0, -2)
        gdelta = np.moveaxis(gd_t, 0, -2)
        gA = np.einsum("l...cn,l...c->...cn", gz, np.broadcast_to(d_t, lead[:-1]))
        gB = np.moveaxis(np.einsum("...cn,...c->...n", gh, dx_t), 0, -2)
        grads = [gx, gdelta, gA, gB, gC]
        if Dd is not None:
            gx = gx + g * Dd[..., None, :]
            grads[0] = gx
            grads.append((g * xd).sum(axis=-2))
        return grads

    return T.custom_op(y, parents, bw)


SCAN_CHUNK = 256


def _scan_forward_chunked(xd, dd, Ad, Bd, Cd, Dd, chunk: int = SCAN_CHUNK) -> np.ndarray:
    """Forward-only scan over time chunks, carrying the state across chunk edges.

    Nothing is kept for a backward pass, so the working set is one chunk
    instead of the whole ``[L, ..., Ch, N]`` state history.
    """
    L = xd.shape[-2]
    d_t = np.moveaxis(dd, -2, 0)
    x_t = np.moveaxis(xd, -2, 0)
    B_t = np.moveaxis(Bd, -2, 0)
    C_t = np.moveaxis(Cd, -2, 0)
    ys = []
    h = None
    for s0 in range(0, L, chunk):
        sl = slice(s0, min(s0 + chunk, L))
        d = d_t[sl]
        dA = np.exp(d[..., None] * Ad)
        u = (d * x_t[sl])[..., None] * B_t[sl][..., None, :]
        lead = np.broadcast_shapes(dA.shape, u.shape)
        dA = np.ascontiguousarray(np.broadcast_to(dA, lead))
        hs = np.array(np.broadcast_to(u, lead), order="C")
        if h is not None:
            hs[0] += dA[0] * h
        for t in range(1, hs.shape[0]):
            hs[t] += dA[t] * hs[t - 1]
        h = hs[-1]
        ys.append(np.einsum("...cn,...n->...c", hs, C_t[sl]))
    y = np.moveaxis(np.concatenate(ys, axis=0), 0, -2)
    if Dd is not None:
        y = y + Dd[..., None, :] * xd
    return y


def reference_scan(x, delta, A, B, C, D=None) -> np.ndarray:
    """Plain-loop recurrence on numpy arrays (no batching, no tape)."""
    x, delta, A, B, C = (np.asarray(v, dtype=np.float64) for v in (x, delta, A, B, C))
    L, Ch = x.shape
    N = A.shape[-1]
    h = np.zeros((Ch, N))
    y = np.zeros((L, Ch))
    for t in range(L):
        for c in range(Ch):
            for n in range(N):
                h[c, n] = math.exp(delta[t, c] * A[c, n]) * h[c, n] + delta[t, c] * B[t, n] * x[t, c]
            y[t, c] = sum(C[t, n] * h[c, n] for n in range(N))
            if D is not None:
                y[t, c] += D[c] * x[t, c]
    return y


@dataclass
class ScanParams:
    """Input-dependent S6 parameterisation for one path (or a stack of paths).

    ``A = -exp(A_log)``; ``[dt, B, C] = x @ w_x``; ``delta = softplus(dt @ w_dt + b_dt)``.
    Leading axes of every field broadcast against the sequence's leading axes.
    """

    A_log: Tensor      # [..., Ch, N]
    w_x: Tensor        # [..., Ch, R + 2N]
    w_dt: Tensor       # [..., R, Ch]
    b_dt: Tensor       # [..., 1, Ch]
    D: Tensor          # [..., Ch]

    @property
    def state_dim(self) -> int:
        return self.A_log.shape[-1]

    @property
    def dt_rank(self) -> int:
        return self.w_dt.shape[-2]

    def select(self, index) -> "ScanParams":
        """Slice one path out of a stacked parameter set."""
        return ScanParams(*(T.getitem(getattr(self, f), index) for f in ("A_log", "w_x", "w_dt", "b_dt", "D")))


def s6_scan(seq, p: ScanParams) -> Tensor:
    """Project the sequence into (delta, B, C) and run the selective scan."""
    seq = T.as_tensor(seq)
    R, N = p.dt_rank, p.state_dim
    proj = T.matmul(seq, p.w_x)
    dt = T.getitem(proj, (Ellipsis, slice(0, R)))
    Bm = T.getitem(proj, (Ellipsis, slice(R, R + N)))
    Cm = T.getitem(proj, (Ellipsis, slice(R + N, R + 2 * N)))
    delta = T.softplus(T.matmul(dt, p.w_dt) + p.b_dt)
    A = -T.exp(p.A_log)
    return selective_scan(seq, delta, A, Bm, Cm, p.D)


def init_scan_params(channels, state_dim, rng, n_paths=None, dt_rank=None, dt_init=0.1, dtype=np.float64) -> ScanParams:
    """Mamba-style init: A = -(1..N), softplus(b_dt) = dt_init, D = 1."""
    R = dt_rank or math.ceil(channels / 16)
    lead = () if n_paths is None else (n_paths, 1)
    A_log = np.broadcast_to(np.log(np.arange(1, state_dim + 1, dtype=np.float64)), lead + (channels, state_dim))
    w_x = rng.uniform(-1, 1, lead + (channels, R + 2 * state_dim)) / math.sqrt(channels)
    w_dt = rng.uniform(-1, 1, lead + (R, channels)) / math.sqrt(R)
    b_dt = np.full(lead + (1, channels), math.log(math.expm1(dt_init)))
    D = np.ones(lead + (channels,))
    make = lambda a: T.parameter(np.array(a, order="C"), dtype=dtype)
    return ScanParams(make(A_log), make(w_x), make(w_dt), make(b_dt), make(D))


# ---------------------------------------------------------------------------
# traversal paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanPath:
    ordering: np.ndarray      # flat grid position visited at each step
    scale: str = "full"       # "full" or "pooled2"
    direction: str = "forward"
    name: str = ""

    def __post_init__(self):
        order = np.asarray(self.ordering)
        if order.ndim != 1 or not np.array_equal(np.sort(order), np.arange(order.size)):
            raise ContractError(f"path {self.name or ''} ordering is not a permutation")
        if self.scale not in ("full", "pooled2"):
            raise ContractError(f"unknown path scale {self.scale!r}")

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.ordering)
        inv[self.ordering] = np.arange(self.ordering.size)
        return inv


def grid_paths(H: int, W: int, scale: str = "full") -> list:
    """Row-major and column-major traversals, each forward and reversed."""
    grid = np.arange(H * W).reshape(H, W)
    row, col = grid.reshape(-1), grid.T.reshape(-1)
    return [
        ScanPath(row, scale, "forward", f"row_fwd_{scale}"),
        ScanPath(row[::-1].copy(), scale, "reverse", f"row_rev_{scale}"),
        ScanPath(col, scale, "forward", f"col_fwd_{scale}"),
        ScanPath(col[::-1].copy(), scale, "reverse", f"col_rev_{scale}"),
    ]


def build_paths(H: int, W: int, mode: str = "cycle") -> list:
    """``cycle``: 4 full-scale + 4 pooled paths; ``ss2d``: the 4 full-scale paths only."""
    paths = grid_paths(H, W, "full")
    if mode == "cycle":
        if H % 2 or W % 2:
            raise ShapeError(f"pooled paths need even extents, got {H}x{W}")
        paths += grid_paths(H // 2, W // 2, "pooled2")
    elif mode != "ss2d":
        raise ContractError(f"unknown scan mode {mode!r}")
    return paths


def _grid_extent(path: ScanPath, H: int, W: int) -> tuple:
    h, w = (H, W) if path.scale == "full" else (H // 2, W // 2)
    if h * w != path.ordering.size:
        raise ContractError(f"path {path.name} covers {path.ordering.size} cells, grid has {h * w}")
    return h, w


def unfold(x, path: ScanPath) -> Tensor:
    """[..., H, W, C] -> [..., L, C] along ``path``."""
    x = T.as_tensor(x)
    H, W, C = x.shape[-3:]
    h, w = _grid_extent(path, H, W)
    if path.scale == "pooled2":
        x = avgpool2(x)
    flat = T.reshape(x, x.shape[:-3] + (h * w, C))
    return T.take(flat, path.ordering, axis=-2)


def fold(seq, path: ScanPath, H: int, W: int) -> Tensor:
    """Inverse of :func:`unfold`; pooled paths are nearest-unpooled to ``H x W``."""
    seq = T.as_tensor(seq)
    h, w = _grid_extent(path, H, W)
    if seq.shape[-2] != h * w:
        raise ShapeError(f"sequence length {seq.shape[-2]} does not match path length {h * w}")
    grid = T.take(seq, path.inverse, axis=-2)
    grid = T.reshape(grid, seq.shape[:-2] + (h, w, seq.shape[-1]))
    return upsample2(grid) if path.scale == "pooled2" else grid


def mcss(x, paths, params) -> Tensor:
    """Mean over paths of fold(s6_scan(unfold(x, path))); one ScanParams per path."""
    x = T.as_tensor(x)
    if len(paths) != len(params):
        raise ContractError("need one ScanParams per path")
    H, W = x.shape[-3], x.shape[-2]
    total = None
    for path, p in zip(paths, params):
        y = fold(s6_scan(unfold(x, path), p), path, H, W)
        total = y if total is None else total + y
    return total * (1.0 / len(paths))


class CycleScan(Module):
    """Multi-path selective scan over a feature map with per-path S6 parameters.

    Paths of the same scale are stacked along a leading axis so one scan call
    handles all of them.
    """

    def __init__(self, channels, height, width, state_dim=4, mode="cycle", dt_rank=None, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.height, self.width, self.mode = channels, height, width, mode
        self.paths = build_paths(height, width, mode)
        self.groups = []
        for scale in ("full", "pooled2"):
            group = [p for p in self.paths if p.scale == scale]
            if group:
                self.groups.append((scale, group))
        self.full = init_scan_params(channels, state_dim, rng, n_paths=4, dt_rank=dt_rank, dtype=dtype)
        self.pooled = (init_scan_params(channels, state_dim, rng, n_paths=4, dt_rank=dt_rank, dtype=dtype)
                       if mode == "cycle" else None)

    def named_parameters(self, prefix=""):
        for attr in ("full", "pooled"):
            p = getattr(self, attr)
            if p is None:
                continue
            for field in ("A_log", "w_x", "w_dt", "b_dt", "D"):
                yield f"{prefix}{attr}.{field}", getattr(p, field)

    def path_params(self) -> list:
        """Per-path views of the stacked parameters, in ``self.paths`` order."""
        out = []
        for scale, group in self.groups:
            stacked = self.full if scale == "full" else self.pooled
            out += [stacked.select((i, 0)) for i in range(len(group))]
        return out

    def forward(self, x):
        x = T.as_tensor(x)
        lead = x.shape[:-3]
        H, W, C = x.shape[-3:]
        if (H, W) != (self.height, self.width) or C != self.channels:
            raise ShapeError(f"CycleScan built for {(self.height, self.width, self.channels)}, got {x.shape[-3:]}")
        total = None
        for scale, group in self.groups:
            src = avgpool2(x) if scale == "pooled2" else x
            h, w = src.shape[-3], src.shape[-2]
            L = h * w
            flat = T.reshape(src, lead + (L, C))
            order = np.concatenate([p.ordering for p in group])
            seq = T.take(flat, order, axis=-2)                         # [..., P*L, C]
            seq = T.reshape(seq, lead + (len(group), L, C))
            nd = len(lead)
            seq = T.transpose(seq, (nd,) + tuple(range(nd)) + (nd + 1, nd + 2))  # [P, ..., L, C]
            params = self.full if scale == "full" else self.pooled
            if nd != 1:
                params = _reshape_lead(params, nd)
            out = s6_scan(seq, params)
            out = T.transpose(out, tuple(range(1, nd + 1)) + (0, nd + 1, nd + 2))  # [..., P, L, C]
            out = T.reshape(out, lead + (len(group) * L, C))
            inv = np.concatenate([p.inverse + i * L for i, p in enumerate(group)])
            grid = T.take(out, inv, axis=-2)
            grid = T.reshape(grid, lead + (len(group), h, w, C)).sum(axis=len(lead))
            if scale == "pooled2":
                grid = upsample2(grid) if grid.ndim in (3, 4) else grid
            total = grid if total is None else total + grid
        return total * (1.0 / len(self.paths))


def _reshape_lead(p: ScanParams, nd: int) -> ScanParams:
    """Adapt stacked [P, 1, ...] params to a sequence with ``nd`` leading axes."""
    fields = []
    for f in ("A_log", "w_x", "w_dt", "b_dt", "D"):
        t = getattr(p, f)
        core = t.shape[2:]
        fields.append(T.reshape(t, (t.shape[0],) + (1,) * nd + core))
    return ScanParams(*fields)


# ---------------------------------------------------------------------------
# quadratic baseline (benchmarks only)
# ---------------------------------------------------------------------------

def attention_reference(x, wq, wk, wv, chunk: int = 1024) -> np.ndarray:
    """Scaled dot-product self-attention over ``[L, C]``; O(L^2) time.

    Rows are processed in chunks so memory stays O(L * chunk).
    """
    x = np.asarray(getattr(x, "data", x))
    q, k, v = x @ wq, x @ wk, x @ wv
    scale = 1.0 / math.sqrt(q.shape[-1])
    out = np.empty((x.shape[0], v.shape[-1]), dtype=np.result_type(x, v))
    for s in range(0, x.shape[0], chunk):
        logits = (q[s:s + chunk] @ k.T) * scale
        logits -= logits.max(axis=-1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=-1, keepdims=True)
        out[s:s + chunk] = logits @ v
    return out
