"""Central finite-difference verification of every hand-wired backward pass.

Everything here runs in float64: the tight tolerances are unreachable in
float32. The error metric is max over entries of |fd - analytic| divided by
max(1, |fd|, |analytic|).

`run_suite` is the programmatic entry point behind the `gradcheck` CLI
subcommand; it covers the primitive ops, >= 20 random mask-conv layer
configurations (all five kinds, full parameter sets including the LBAM
activation scalars), and a small full-network check through the masked loss.
"""

import time
from dataclasses import dataclass

import numpy as np

from .blindspot import masked_mse, sample_bernoulli
from .engine import ops
from .engine.rng import make_rng
from .layers import make_mask_conv
from .unet import NetConfig, Network

DEFAULT_EPS = 1e-5
LAYER_TOL = 1e-5
NET_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def fd_gradient(f, x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient of scalar f w.r.t. every entry of x (in place)."""
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
    return float(np.max(np.abs(analytic - fd) / denom))


def _randomize_lbam_scalars(layer, rng):
    # Spread the activation scalars so both Gaussian branches and their
    # gradients are actually exercised (the init puts mu far above typical Mc).
    p = layer.params()
    for prefix in ("gate", "update"):
        p[f"{prefix}_a"].val[...] = rng.uniform(0.6, 1.5, size=p[f"{prefix}_a"].shape)
        p[f"{prefix}_mu"].val[...] = rng.normal(0.0, 0.3, size=p[f"{prefix}_mu"].shape)
        p[f"{prefix}_gl"].val[...] = rng.uniform(0.4, 1.5, size=p[f"{prefix}_gl"].shape)
        p[f"{prefix}_gr"].val[...] = rng.uniform(0.4, 1.5, size=p[f"{prefix}_gr"].shape)


def check_mask_conv(kind: str, seed: int, eps: float = DEFAULT_EPS) -> CheckResult:
    """FD-check one random layer configuration: all parameters plus both inputs."""
    rng = make_rng(seed)
    n = int(rng.integers(1, 3))
    c_in = int(rng.integers(1, 4))
    c_out = int(rng.integers(1, 4))
    k = int(rng.choice([1, 3]))
    h = int(rng.choice([4, 6]))
    w = int(rng.choice([4, 6]))
    first = kind == "gated" and bool(rng.integers(2))
    mask_in = 1 if (kind in ("pconv", "gated") or bool(rng.integers(2))) else c_in

    layer = make_mask_conv(kind, c_in, c_out, k, rng, dtype=np.float64,
                           mask_in=mask_in, first_layer=first)
    if kind == "lbam":
        _randomize_lbam_scalars(layer, rng)
    # random biases move the relu/pow/sigmoid operating points off zero
    for name, p in layer.params().items():
        if name.startswith("b"):
            p.val[...] = rng.normal(0.0, 0.3, size=p.shape)

    feat = rng.normal(0.0, 1.0, size=(n, c_in, h, w))
    if kind in ("pconv", "gated"):
        mask = (rng.random((n, 1, h, w)) > 0.4).astype(np.float64)
    else:
        mask = np.abs(rng.normal(0.7, 0.5, size=(n, mask_in, h, w)))
    r_feat = rng.normal(size=(n, c_out, h, w))
    mask_probe_c = {"pconv": 1, "gated": 1}.get(kind, c_out)
    r_mask = rng.normal(size=(n, mask_probe_c, h, w))
    use_mask_out = kind in ("mgr", "lbam")  # other kinds' mask outputs are hard rules

    def loss():
        f, m = layer.forward(feat, mask)
        val = float((f * r_feat).sum())
        if use_mask_out:
            val += float((m * r_mask).sum())
        return val

    layer.zero_grads()
    f, m = layer.forward(feat, mask, cache=True)
    g_feat, g_mask = layer.backward(r_feat.copy(), r_mask.copy() if use_mask_out else None)

    worst = 0.0
    for name, p in layer.params().items():
        fd = fd_gradient(loss, p.val, eps)
        worst = max(worst, relative_error(p.grad, fd))
    if g_feat is not None:
        worst = max(worst, relative_error(g_feat, fd_gradient(loss, feat, eps)))
    if g_mask is not None:
        worst = max(worst, relative_error(g_mask, fd_gradient(loss, mask, eps)))
    cfg = f"n{n} {c_in}->{c_out} k{k} {h}x{w}" + (" first" if first else "")
    return CheckResult(f"layer/{kind} [{cfg}] seed={seed}", worst, LAYER_TOL)


def check_conv2d(seed: int, eps: float = DEFAULT_EPS) -> CheckResult:
    rng = make_rng(seed)
    n, c_in, c_out = 1, int(rng.integers(1, 3)), int(rng.integers(1, 4))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    h = w = 6
    x = rng.normal(size=(n, c_in, h, w))
    wgt = rng.normal(size=(c_out, c_in, k, k)) * 0.5
    b = rng.normal(size=c_out) * 0.2
    pad = k // 2
    probe = rng.normal(size=ops.conv2d(x, wgt, b, stride=stride, padding=pad).shape)

    def loss():
        return float((ops.conv2d(x, wgt, b, stride=stride, padding=pad) * probe).sum())

    gx, gw, gb = ops.conv2d_backward(probe, x, wgt, stride=stride, padding=pad)
    worst = max(relative_error(gx, fd_gradient(loss, x, eps)),
                relative_error(gw, fd_gradient(loss, wgt, eps)),
                relative_error(gb, fd_gradient(loss, b, eps)))
    return CheckResult(f"op/conv2d [s{stride} k{k}] seed={seed}", worst, LAYER_TOL)


def check_elementwise(seed: int, eps: float = DEFAULT_EPS) -> CheckResult:
    rng = make_rng(seed)
    shape = (2, 3, 4, 4)
    x = rng.normal(size=shape)
    y = rng.normal(size=shape)
    probe = rng.normal(size=shape)
    worst = 0.0

    cases = {
        "sigmoid": (lambda: float((ops.sigmoid(x) * probe).sum()),
                    lambda: ops.sigmoid_backward(probe, ops.sigmoid(x))),
        "leaky_relu": (lambda: float((ops.leaky_relu(x, 0.1) * probe).sum()),
                       lambda: ops.leaky_relu_backward(probe, x, 0.1)),
        "relu": (lambda: float((ops.relu(x) * probe).sum()),
                 lambda: ops.relu_backward(probe, x)),
        "mul": (lambda: float((ops.mul(x, y) * probe).sum()),
                lambda: ops.mul_backward(probe, x, y)[0]),
        "add": (lambda: float((ops.add(x, y) * probe).sum()),
                lambda: ops.add_backward(probe)[0]),
        "scale": (lambda: float((ops.scale(x, 1.7) * probe).sum()),
                  lambda: ops.scale_backward(probe, 1.7)),
    }
    for name, (loss, analytic) in cases.items():
        worst = max(worst, relative_error(analytic(), fd_gradient(loss, x, eps)))

    xp = np.abs(rng.normal(1.0, 0.5, size=shape)) + 0.05  # keep clear of the x=0 kink
    loss_pow = lambda: float((ops.pow_alpha(xp, 0.8) * probe).sum())
    worst = max(worst, relative_error(ops.pow_alpha_backward(probe, xp, 0.8),
                                      fd_gradient(loss_pow, xp, eps)))
    return CheckResult(f"op/elementwise seed={seed}", worst, LAYER_TOL)


def check_pool_and_resample(seed: int, eps: float = DEFAULT_EPS) -> CheckResult:
    rng = make_rng(seed)
    x = rng.normal(size=(2, 2, 6, 6))
    yshape = (2, 2, 3, 3)
    probe = rng.normal(size=yshape)

    def loss_pool():
        y, _ = ops.maxpool2(x)
        return float((y * probe).sum())

    _, idx = ops.maxpool2(x)
    g = ops.maxpool2_backward(probe, idx, 6, 6)
    worst = relative_error(g, fd_gradient(loss_pool, x, eps))

    probe_up = rng.normal(size=(2, 2, 12, 12))
    loss_up = lambda: float((ops.upsample_nearest2(x) * probe_up).sum())
    worst = max(worst, relative_error(ops.upsample_nearest2_backward(probe_up),
                                      fd_gradient(loss_up, x, eps)))
    return CheckResult(f"op/pool+upsample seed={seed}", worst, LAYER_TOL)


def check_masked_loss(seed: int, eps: float = DEFAULT_EPS) -> CheckResult:
    rng = make_rng(seed)
    pred = rng.normal(0.5, 0.3, size=(1, 3, 6, 6))
    target = rng.normal(0.5, 0.3, size=(1, 3, 6, 6))
    mask = (rng.random((1, 1, 6, 6)) > 0.5).astype(np.float64)
    _, grad = masked_mse(pred, target, mask)
    fd = fd_gradient(lambda: masked_mse(pred, target, mask)[0], pred, eps)
    return CheckResult(f"op/masked_mse seed={seed}", relative_error(grad, fd), LAYER_TOL)


def check_network(seed: int, n_params: int = 10, eps: float = DEFAULT_EPS) -> CheckResult:
    """FD vs analytic through a small full net and the masked loss, on a random
    subset of parameter entries."""
    rng = make_rng(seed)
    cfg = NetConfig(in_channels=1, depth=2, enc_channels=4, dec_channels=6,
                    conv_kind="mgr", decoder_dropout=0.0)
    net = Network(cfg, rng, dtype=np.float64)
    y = rng.random((1, 1, 8, 8))
    sample = sample_bernoulli(y, 0.5, rng)

    def loss():
        pred = net.forward(sample.manipulated, sample.guide_mask)
        return masked_mse(pred, sample.target, sample.guide_mask)[0]

    pred = net.forward(sample.manipulated, sample.guide_mask, training=True)
    _, grad = masked_mse(pred, sample.target, sample.guide_mask)
    net.backward(grad)

    params = net.params()
    names = sorted(params)
    worst = 0.0
    for _ in range(n_params):
        name = names[int(rng.integers(len(names)))]
        p = params[name]
        i = int(rng.integers(p.val.size))
        flat = p.val.reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        fp = loss()
        flat[i] = orig - eps
        fm = loss()
        flat[i] = orig
        fd = (fp - fm) / (2 * eps)
        an = p.grad.reshape(-1)[i]
        worst = max(worst, abs(an - fd) / max(1.0, abs(an), abs(fd)))
    return CheckResult(f"network/depth2 seed={seed}", worst, NET_TOL)


def run_suite(layer_configs: int = 20, seed: int = 0):
    """The full 64-bit gradient suite. Returns (results, elapsed_seconds)."""
    t0 = time.perf_counter()
    results = []
    kinds = ("vanilla", "pconv", "lbam", "gated", "mgr")
    for i in range(layer_configs):
        results.append(check_mask_conv(kinds[i % len(kinds)], seed=seed + i))
    for i in range(3):
        results.append(check_conv2d(seed=seed + 100 + i))
    results.append(check_elementwise(seed=seed + 200))
    results.append(check_pool_and_resample(seed=seed + 201))
    results.append(check_masked_loss(seed=seed + 202))
    results.append(check_network(seed=seed + 300))
    return results, time.perf_counter() - t0
