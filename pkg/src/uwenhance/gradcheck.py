"""Central finite-difference gradient checks.

``check_gradients`` compares tape gradients against ``(f(x+h) - f(x-h)) / 2h``
for selected scalars of each tensor. The reported error for a tensor is
``max|analytic - numeric| / max(max|numeric|, max|analytic|, floor)`` over the
checked entries.

``CHECKS`` registers the suites run by ``uwenhance gradcheck``; each returns
a list of :class:`GradResult`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

FLOOR = 1e-6


@dataclass
class GradResult:
    name: str
    error: float
    tol: float
    checked: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)


def relative_error(analytic, numeric, floor: float = FLOOR) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def _pick(size, n, rng):
    if n is None or n >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, size=n, replace=False))


def check_gradients(loss_fn, tensors, h: float = 1e-5, entries=None, rng=None, floor: float = FLOOR) -> dict:
    """``{name: (error, n_checked)}``.

    ``loss_fn()`` must rebuild the scalar loss from the tensors' current
    ``.data``. ``entries`` maps names (or all tensors, if an int) to how many
    flat positions to probe; ``None`` probes every position.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tensors = dict(tensors)
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    out = {}
    for name, t in tensors.items():
        n = entries.get(name) if isinstance(entries, dict) else entries
        if not t.data.flags.c_contiguous or not t.data.flags.writeable:
            t.data = np.array(t.data, order="C")
        flat = t.data.reshape(-1)  # a view, so writes reach the tensor
        picks = _pick(flat.size, n, rng)
        analytic = np.zeros(len(picks))
        grad = t.grad.reshape(-1) if t.grad is not None else np.zeros(flat.size)
        numeric = np.zeros(len(picks))
        for j, i in enumerate(picks):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * h)
            analytic[j] = grad[i]
        out[name] = (relative_error(analytic, numeric, floor), len(picks))
    return out


def _results(prefix, report, tol):
    return [GradResult(f"{prefix}.{name}" if name else prefix, err, tol, n) for name, (err, n) in report.items()]


def _weighted(y: Tensor, rng) -> Tensor:
    """Random linear functional of ``y`` so every output entry matters."""
    w = rng.standard_normal(y.shape)
    return (y * w).sum()


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def _unary_cases():
    return {
        "neg": (lambda a: -a, (-2, 2)),
        "exp": (T.exp, (-2, 2)),
        "log": (T.log, (0.2, 2)),
        "sqrt": (T.sqrt, (0.2, 2)),
        "abs": (T.abs_, (-2, 2)),
        "relu": (T.relu, (-2, 2)),
        "sigmoid": (T.sigmoid, (-2, 2)),
        "silu": (T.silu, (-2, 2)),
        "gelu": (T.gelu, (-2, 2)),
        "softplus": (T.softplus, (-2, 2)),
        "pow3": (lambda a: a ** 3, (-2, 2)),
        "sum": (lambda a: a.sum(axis=1), (-2, 2)),
        "mean": (lambda a: a.mean(axis=0, keepdims=True), (-2, 2)),
        "transpose": (lambda a: T.transpose(a), (-2, 2)),
        "reshape": (lambda a: T.reshape(a, (-1,)), (-2, 2)),
        "flip": (lambda a: T.flip(a, 1), (-2, 2)),
        "getitem": (lambda a: a[1:, ::2], (-2, 2)),
        "take": (lambda a: T.take(a, np.array([0, 2, 2, 1]), 1), (-2, 2)),
        "abs2_complex": (lambda a: T.abs2(T.complex_(a, a * a)), (-2, 2)),
    }


def _binary_cases():
    return {
        "add": (T.add, (-2, 2), (-2, 2)),
        "sub": (T.sub, (-2, 2), (-2, 2)),
        "mul": (T.mul, (-2, 2), (-2, 2)),
        "div": (T.div, (-2, 2), (0.5, 2)),
        "matmul": (lambda a, b: T.matmul(a, T.transpose(b)), (-2, 2), (-2, 2)),
        "concat": (lambda a, b: T.concat([a, b], axis=0), (-2, 2), (-2, 2)),
        "stack": (lambda a, b: T.stack([a, b], axis=1), (-2, 2), (-2, 2)),
        "complex_mul": (lambda a, b: T.real(T.complex_(a, b) * T.conj(T.complex_(b, a))), (-2, 2), (-2, 2)),
    }


def check_ops(trials: int = 100, seed: int = 0, tol: float = 1e-4) -> list:
    rng = np.random.default_rng(seed)
    worst = {}
    for _ in range(trials):
        for name, (fn, (lo, hi)) in _unary_cases().items():
            a = T.Tensor(rng.uniform(lo, hi, (3, 4)), requires_grad=True)
            w = rng.standard_normal(fn(a).shape)
            err, _ = check_gradients(lambda: (fn(a) * w).sum(), {"a": a})["a"]
            worst[name] = max(worst.get(name, 0.0), err)
        for name, (fn, ra, rb) in _binary_cases().items():
            a = T.Tensor(rng.uniform(*ra, (3, 4)), requires_grad=True)
            b = T.Tensor(rng.uniform(*rb, (3, 4)), requires_grad=True)
            w = rng.standard_normal(fn(a, b).shape)
            rep = check_gradients(lambda: (fn(a, b) * w).sum(), {"a": a, "b": b})
            worst[name] = max(worst.get(name, 0.0), rep["a"][0], rep["b"][0])
        # broadcasting add/mul against a row vector
        a = T.Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        b = T.Tensor(rng.uniform(-2, 2, (4,)), requires_grad=True)
        w = rng.standard_normal((3, 4))
        rep = check_gradients(lambda: ((a * b + b) * w).sum(), {"a": a, "b": b})
        worst["broadcast"] = max(worst.get("broadcast", 0.0), rep["a"][0], rep["b"][0])
    return [GradResult(f"op.{k}", v, tol, trials) for k, v in worst.items()]


def check_layers(seed: int = 0, tol: float = 1e-4) -> list:
    from . import layers as Lr

    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.uniform(-2, 2, (2, 6, 6, 3)), requires_grad=True)
    out = []
    cases = {
        "conv3x3": Lr.Conv2d(3, 4, 3, rng=rng),
        "conv3x3_stride2": Lr.Conv2d(3, 4, 3, stride=2, rng=rng),
        "conv1x1": Lr.Conv2d(3, 4, 1, rng=rng),
        "dwconv": Lr.DepthwiseConv2d(3, 3, rng=rng),
        "linear_silu": Lr.Linear(3, 5, activation="silu", rng=rng),
        "layernorm": Lr.LayerNorm(3),
        "batchnorm": Lr.BatchNorm(3),
        "mlp": Lr.Mlp(3, 2, rng=rng),
        "conv_block": Lr.conv_block(3, 4, rng, np.float64),
    }
    for name, layer in cases.items():
        if name in ("layernorm", "batchnorm"):
            for p in layer.parameters():
                p.data = p.data + rng.uniform(-0.5, 0.5, p.shape)
        w = rng.standard_normal(layer(x).shape)
        tensors = {"x": x, **dict(layer.named_parameters())}
        out += _results(f"layer.{name}", check_gradients(lambda: (layer(x) * w).sum(), tensors), tol)
    for name, fn in {
        "maxpool2": Lr.maxpool2,
        "avgpool2": Lr.avgpool2,
        "upsample_nearest": lambda t: Lr.upsample2(t, "nearest"),
        "upsample_bilinear": lambda t: Lr.upsample2(t, "bilinear"),
    }.items():
        w = rng.standard_normal(fn(x).shape)
        out += _results(f"layer.{name}", check_gradients(lambda: (fn(x) * w).sum(), {"x": x}), tol)
    return out


def check_spectral(seed: int = 0, tol: float = 1e-4) -> list:
    from .spectral import dft2, fft2, idft2, ifft2, irfft2, rfft2

    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.uniform(-2, 2, (4, 4, 2)), requires_grad=True)
    x5 = T.Tensor(rng.uniform(-2, 2, (4, 5, 2)), requires_grad=True)
    out = []
    out += _results("spectral.power", check_gradients(lambda: T.abs2(fft2(x)).sum(), {"x": x}), tol)
    wr = rng.standard_normal((4, 4, 2))
    out += _results("spectral.roundtrip",
                    check_gradients(lambda: (idft2(dft2(x * x)) * wr).sum(), {"x": x}), tol)
    wc = rng.standard_normal((4, 4, 2))
    out += _results("spectral.ifft_real",
                    check_gradients(lambda: (T.real(ifft2(fft2(x) * T.Tensor(wc))) * wr).sum(), {"x": x}), tol)
    for name, src in (("even", x), ("odd", x5)):
        W = src.shape[-2]
        wh = rng.standard_normal((4, W // 2 + 1, 2))
        wo = rng.standard_normal(src.shape)
        out += _results(f"spectral.rfft2_{name}",
                        check_gradients(lambda: (T.abs2(rfft2(src)) * wh).sum(), {"x": src}), tol)
        out += _results(f"spectral.irfft2_{name}",
                        check_gradients(lambda: (irfft2(rfft2(src) * T.Tensor(wh), W) * wo).sum(), {"x": src}), tol)
    out += _results("spectral.half_layout",
                    check_gradients(lambda: (idft2(dft2(x, "hermitian_half")) * wr).sum(), {"x": x}), tol)
    return out


def check_scan(seed: int = 0, tol_op: float = 1e-4, tol_mcss: float = 1e-3) -> list:
    from .scan import CycleScan, build_paths, init_scan_params, mcss, selective_scan

    rng = np.random.default_rng(seed)
    L, Ch, N = 6, 3, 2
    x = T.Tensor(rng.uniform(-2, 2, (L, Ch)), requires_grad=True)
    delta = T.Tensor(rng.uniform(0.05, 1.0, (L, Ch)), requires_grad=True)
    A = T.Tensor(-rng.uniform(0.5, 2.0, (Ch, N)), requires_grad=True)
    B = T.Tensor(rng.uniform(-2, 2, (L, N)), requires_grad=True)
    C = T.Tensor(rng.uniform(-2, 2, (L, N)), requires_grad=True)
    D = T.Tensor(rng.uniform(-2, 2, (Ch,)), requires_grad=True)
    w = rng.standard_normal((L, Ch))
    tensors = dict(x=x, delta=delta, A=A, B=B, C=C, D=D)
    out = _results("scan.selective_scan",
                   check_gradients(lambda: (selective_scan(x, delta, A, B, C, D) * w).sum(), tensors), tol_op)
    img = T.Tensor(rng.uniform(-2, 2, (4, 4, 2)), requires_grad=True)
    paths = build_paths(4, 4, "cycle")
    plist = [init_scan_params(2, 2, rng) for _ in paths]
    wimg = rng.standard_normal((4, 4, 2))
    tensors = {"x": img}
    for i, p in enumerate(plist):
        for f in ("A_log", "w_x", "w_dt", "b_dt", "D"):
            tensors[f"path{i}.{f}"] = getattr(p, f)
    out += _results("scan.mcss", check_gradients(lambda: (mcss(img, paths, plist) * wimg).sum(), tensors,
                                                 entries=4, rng=rng), tol_mcss)
    cs = CycleScan(2, 4, 4, 2, "cycle", rng=rng)
    tensors = {"x": img, **dict(cs.named_parameters())}
    out += _results("scan.cycle_scan", check_gradients(lambda: (cs(img[None]) * wimg).sum(), tensors,
                                                       entries=6, rng=rng), tol_mcss)
    return out


def check_swsa(seed: int = 0, tol: float = 1e-3) -> list:
    from .spectral_filter import SpectralAttention

    rng = np.random.default_rng(seed)
    sa = SpectralAttention(4, 4, 2, rng=rng)
    x = T.Tensor(rng.uniform(-2, 2, (1, 4, 4, 2)), requires_grad=True)
    w = rng.standard_normal((1, 4, 4, 2))
    tensors = {"x": x, **dict(sa.named_parameters())}
    out = _results("swsa.forward", check_gradients(lambda: (sa(x) * w).sum(), tensors), tol)
    out += _results("swsa.bypass", check_gradients(lambda: (sa(x, bypass=True) * w).sum(),
                                                   {"x": x, "K": sa.K, "alpha1": sa.alpha1}), tol)
    return out


def check_block(seed: int = 0, tol: float = 1e-3, modes=("parallel", "serial", "swsa", "mcss", "baseline")) -> list:
    from .block import SSBlock, SSBlockConfig

    rng = np.random.default_rng(seed)
    out = []
    x = T.Tensor(rng.uniform(-2, 2, (1, 4, 4, 4)), requires_grad=True)
    for mode in modes:
        blk = SSBlock(SSBlockConfig(channels=4, height=4, width=4, mode=mode, state_dim=2), rng=rng)
        tensors = {"x": x, **dict(blk.named_parameters())}
        out += _results(f"block.{mode}", check_gradients(lambda: blk(x).sum(), tensors), tol)
    return out


def check_loss(seed: int = 0, tol: float = 1e-3) -> list:
    from .losses import focus_weights, fwl, l1_loss

    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 1, (5, 6, 3))
    pred = T.Tensor(rng.uniform(0, 1, (5, 6, 3)), requires_grad=True)
    out = []
    for mode in ("sqrt_raw", "sqrt_normalized"):
        d = np.abs(np.fft.fft2(gt - pred.data, axes=(0, 1))) ** 2
        theta = focus_weights(d, mode)   # frozen at the base point
        out += _results(f"loss.fwl_{mode}", check_gradients(lambda: fwl(gt, pred, mode, theta=theta),
                                                            {"pred": pred}), tol)
    out += _results("loss.l1", check_gradients(lambda: l1_loss(gt, pred), {"pred": pred}), tol)
    return out


def check_network(seed: int = 0, tol: float = 1e-3, n_scalars: int = 50, preset_name: str = "desk",
                  block_mode: str = "parallel") -> list:
    """Desk model in real64; loss = L1 + lambda * FWL with theta frozen."""
    from .losses import balance_weight, focus_weights, fwl, l1_loss
    from .network import EnhancementNet, preset

    rng = np.random.default_rng(seed)
    net = EnhancementNet(preset(preset_name, dtype="real64", seed=seed, block_mode=block_mode))
    H, W = net.cfg.height, net.cfg.width
    x = rng.uniform(0, 1, (1, H, W, 3))
    gt = rng.uniform(0, 1, (1, H, W, 3))
    with T.no_grad():
        y0 = net(x).data
    theta = focus_weights(np.abs(np.fft.fft2(gt - y0, axes=(-3, -2))) ** 2, "sqrt_normalized")
    lam = balance_weight(np.abs(gt - y0).mean(), float(fwl(gt, y0, theta=theta).data))

    def loss_fn():
        y = net(x)
        return l1_loss(gt, y) + fwl(gt, y, theta=theta) * lam

    params = dict(net.named_parameters())
    names = list(params)
    chosen = rng.choice(len(names), size=n_scalars, replace=True)
    entries = {}
    for c in chosen:
        entries[names[c]] = entries.get(names[c], 0) + 1
    subset = {n: params[n] for n in entries}
    report = check_gradients(loss_fn, subset, entries=entries, rng=rng)
    errs = [e for e, _ in report.values()]
    total = sum(n for _, n in report.values())
    out = [GradResult("network.end_to_end", max(errs), tol, total)]
    out += _results("network", report, tol)
    return out


CHECKS = {
    "ops": check_ops,
    "layers": check_layers,
    "spectral": check_spectral,
    "scan": check_scan,
    "swsa": check_swsa,
    "block": check_block,
    "loss": check_loss,
    "network": check_network,
}


def run_checks(modules=None) -> list:
    modules = list(CHECKS) if modules is None else list(modules)
    results = []
    for m in modules:
        results += CHECKS[m]()
    return results
