"""Mask-aware convolution layers with hand-wired backpropagation.

Four layer families, each mapping (feature, mask) -> (feature, mask):

* PConv      -- masked conv with window-sum renormalization and hard binary
                mask update.
* LBAMConv   -- separate mask/image convs, asymmetric-Gaussian mask attention
                with learnable per-channel (a, mu, gamma_l, gamma_r), a second
                independent scalar set for the mask update, and an output conv
                over the gated feature.
* GatedConv  -- two filter banks, feature branch gated by a sigmoid of the
                gate branch; the mask is fused into the input at the first
                layer and carried as an all-ones placeholder afterwards.
* MGRConv    -- mask-guided residual gating: I' = Ic + phi(Ic) * sigmoid(Mc),
                mask update M' = relu(Mc)**0.8.

Plus VanillaConv (plain conv in the same interface) and a FLOP cost model.

Conventions: forward(feature, mask, cache=...) returns the new pair; backward
takes upstream gradients for both outputs (mask gradient may be None) and
returns gradients for both inputs, accumulating parameter gradients in place.
"""

from dataclasses import dataclass

import numpy as np

from .engine import ops

LEAKY_SLOPE = 0.1       # phi: leaky-ReLU slope used by the gated/residual layers
MASK_UPDATE_ALPHA = 0.8  # exponent of the MGRConv mask update
LBAM_GAMMA_FLOOR = 1e-4  # gamma_l/gamma_r are floored here after optimizer steps


class Param:
    """A learnable array with its same-shape gradient buffer."""

    __slots__ = ("val", "grad")

    def __init__(self, val: np.ndarray):
        self.val = val
        self.grad = np.zeros_like(val)

    @property
    def shape(self):
        return self.val.shape


def glorot_uniform(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)) for (c_out, c_in, k, k)."""
    c_out, c_in, kh, kw = shape
    fan_in = c_in * kh * kw
    fan_out = c_out * kh * kw
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class MaskConvBase:
    """Shared parameter bookkeeping and cache discipline."""

    kind = "?"

    def __init__(self):
        self._params: dict[str, Param] = {}
        self._cache = None

    def _add_param(self, name: str, val: np.ndarray) -> Param:
        p = Param(val)
        self._params[name] = p
        return p

    def params(self) -> dict[str, Param]:
        return self._params

    def num_params(self) -> int:
        return sum(p.val.size for p in self._params.values())

    def zero_grads(self):
        for p in self._params.values():
            p.grad[...] = 0

    def post_update(self):
        """Hook applied after each optimizer step (e.g. positivity floors)."""

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a cached forward")
        cache, self._cache = self._cache, None
        return cache


class VanillaConv(MaskConvBase):
    """Plain conv2d in the masked-layer interface; the mask passes through untouched."""

    kind = "vanilla"

    def __init__(self, c_in, c_out, k, rng, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.w = self._add_param("w", glorot_uniform(rng, (c_out, c_in, k, k), dtype))
        self.b = self._add_param("b", np.zeros(c_out, dtype=dtype))

    def forward(self, feat, mask=None, cache=False):
        y, cols = ops.conv2d(feat, self.w.val, self.b.val, return_cols=True)
        if cache:
            self._cache = (feat, cols)
        return y, mask

    def backward(self, g_feat, g_mask=None, need_input_grad=True):
        feat, cols = self._take_cache()
        gx, gw, gb = ops.conv2d_backward(g_feat, feat, self.w.val, cols=cols,
                                         need_input_grad=need_input_grad)
        self.w.grad += gw
        self.b.grad += gb
        return gx, g_mask


_OVERLAP_CACHE: dict = {}


def window_overlap_counts(h: int, w: int, k: int, dtype) -> np.ndarray:
    """Number of in-bounds pixels under a k x k window at every position (stride 1,
    zero padding k//2). This is the numerator of the PConv renormalization, so an
    all-ones mask renormalizes to exactly 1 everywhere, borders included."""
    key = (h, w, k, np.dtype(dtype).str)
    if key not in _OVERLAP_CACHE:
        ones = np.ones((1, 1, h, w), dtype=dtype)
        kernel = np.ones((1, 1, k, k), dtype=dtype)
        _OVERLAP_CACHE[key] = ops.conv2d(ones, kernel)
    return _OVERLAP_CACHE[key]


class PConv(MaskConvBase):
    """Partial convolution: conv the masked feature, renormalize by the ratio of
    window capacity to the window sum of the (single-channel, binary-ish) mask,
    and binarize the updated mask to "any valid pixel seen"."""

    kind = "pconv"

    def __init__(self, c_in, c_out, k, rng, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.dtype = dtype
        self.w = self._add_param("w", glorot_uniform(rng, (c_out, c_in, k, k), dtype))
        self.b = self._add_param("b", np.zeros(c_out, dtype=dtype))
        self._ones_kernel = np.ones((1, 1, k, k), dtype=dtype)

    def forward(self, feat, mask, cache=False):
        if mask.shape[1] != 1:
            raise ValueError(f"PConv expects a single-channel mask, got {mask.shape[1]}")
        n, _, h, w = feat.shape
        winsum = ops.conv2d(mask, self._ones_kernel)
        valid = winsum > 0
        capacity = window_overlap_counts(h, w, self.k, feat.dtype)
        ratio = np.where(valid, capacity / np.where(valid, winsum, 1), 0).astype(feat.dtype)
        xm = feat * mask
        raw, cols = ops.conv2d(xm, self.w.val, return_cols=True)
        y = (raw * ratio + self.b.val[None, :, None, None]) * valid
        new_mask = valid.astype(feat.dtype)
        if cache:
            self._cache = (xm, mask, ratio, valid, cols)
        return y, new_mask

    def backward(self, g_feat, g_mask=None, need_input_grad=True):
        # The mask path (window sums, binarization) is a hard rule, not a
        # differentiable function; no gradient flows into the incoming mask.
        xm, mask, ratio, valid, cols = self._take_cache()
        g_v = g_feat * valid
        self.b.grad += g_v.sum(axis=(0, 2, 3))
        g_raw = g_v * ratio
        gxm, gw, _ = ops.conv2d_backward(g_raw, xm, self.w.val, cols=cols,
                                         need_input_grad=need_input_grad)
        self.w.grad += gw
        gx = gxm * mask if gxm is not None else None
        return gx, None


class MGRConv(MaskConvBase):
    """Mask-guided residual convolution.

    Mc = conv(w_mask, M) + b_mask; Ic = conv(w_image, I) + b_image;
    feature out = Ic + leaky_relu(Ic) * sigmoid(Mc);
    mask out    = relu(Mc) ** 0.8 (not clamped above).
    """

    kind = "mgr"

    def __init__(self, c_in, c_out, k, rng, dtype=np.float32, mask_in=None):
        super().__init__()
        mask_in = c_in if mask_in is None else mask_in
        self.c_in, self.c_out, self.k, self.mask_in = c_in, c_out, k, mask_in
        self.w_image = self._add_param("w_image", glorot_uniform(rng, (c_out, c_in, k, k), dtype))
        self.b_image = self._add_param("b_image", np.zeros(c_out, dtype=dtype))
        self.w_mask = self._add_param("w_mask", glorot_uniform(rng, (c_out, mask_in, k, k), dtype))
        self.b_mask = self._add_param("b_mask", np.zeros(c_out, dtype=dtype))

    def forward(self, feat, mask, cache=False):
        ic, cols_i = ops.conv2d(feat, self.w_image.val, self.b_image.val, return_cols=True)
        mc, cols_m = ops.conv2d(mask, self.w_mask.val, self.b_mask.val, return_cols=True)
        phi = ops.leaky_relu(ic, LEAKY_SLOPE)
        gate = ops.sigmoid(mc)
        out = ic + phi * gate
        new_mask = ops.pow_alpha(ops.relu(mc), MASK_UPDATE_ALPHA)
        if cache:
            self._cache = (feat, mask, ic, mc, phi, gate, cols_i, cols_m)
        return out, new_mask

    def backward(self, g_feat, g_mask=None, need_input_grad=True):
        feat, mask, ic, mc, phi, gate, cols_i, cols_m = self._take_cache()
        g_ic = g_feat + ops.leaky_relu_backward(g_feat * gate, ic, LEAKY_SLOPE)
        g_mc = ops.sigmoid_backward(g_feat * phi, gate)
        if g_mask is not None:
            g_mc += ops.pow_alpha_backward(g_mask, np.maximum(mc, 0), MASK_UPDATE_ALPHA)
        gx, gw_i, gb_i = ops.conv2d_backward(g_ic, feat, self.w_image.val, cols=cols_i,
                                             need_input_grad=need_input_grad)
        gm, gw_m, gb_m = ops.conv2d_backward(g_mc, mask, self.w_mask.val, cols=cols_m,
                                             need_input_grad=need_input_grad)
        self.w_image.grad += gw_i
        self.b_image.grad += gb_i
        self.w_mask.grad += gw_m
        self.b_mask.grad += gb_m
        return gx, gm


def asym_gauss(mc, a, mu, gl, gr):
    """Asymmetric Gaussian activation with per-channel scalars (broadcast over n,h,w):
    a*exp(-gl*(mc-mu)^2) left of mu, 1+(a-1)*exp(-gr*(mc-mu)^2) right of it."""
    bc = lambda v: v[None, :, None, None]
    d = mc - bc(mu)
    neg = d < 0
    gam = np.where(neg, bc(gl), bc(gr))
    e = np.exp(-gam * d * d)
    g = np.where(neg, bc(a) * e, 1 + (bc(a) - 1) * e)
    return g.astype(mc.dtype, copy=False), (d, e, neg, gam)


def asym_gauss_backward(upstream, cache, a):
    """Returns (g_mc, g_a, g_mu, g_gl, g_gr); scalar grads reduced over (n, h, w)."""
    d, e, neg, gam = cache
    bc_a = a[None, :, None, None]
    coef = np.where(neg, bc_a, bc_a - 1)
    dg_dmc = coef * e * (-2.0 * gam * d)
    g_mc = upstream * dg_dmc
    g_a = (upstream * e).sum(axis=(0, 2, 3))
    g_mu = (-g_mc).sum(axis=(0, 2, 3))
    d2e = upstream * coef * (-(d * d) * e)
    g_gl = np.where(neg, d2e, 0).sum(axis=(0, 2, 3))
    g_gr = np.where(neg, 0, d2e).sum(axis=(0, 2, 3))
    return g_mc, g_a, g_mu, g_gl, g_gr


class LBAMConv(MaskConvBase):
    """Forward layer of learnable bidirectional attention maps.

    The mask attention g = gauss(Mc; gate scalars) multiplies the convolved
    image feature, which then passes through an output conv. The mask update
    uses a second, independent scalar set on the same Mc.
    """

    kind = "lbam"

    def __init__(self, c_in, c_out, k, rng, dtype=np.float32, mask_in=None):
        super().__init__()
        mask_in = c_in if mask_in is None else mask_in
        self.c_in, self.c_out, self.k, self.mask_in = c_in, c_out, k, mask_in
        self.w_mask = self._add_param("w_mask", glorot_uniform(rng, (c_out, mask_in, k, k), dtype))
        self.b_mask = self._add_param("b_mask", np.zeros(c_out, dtype=dtype))
        self.w_image = self._add_param("w_image", glorot_uniform(rng, (c_out, c_in, k, k), dtype))
        self.b_image = self._add_param("b_image", np.zeros(c_out, dtype=dtype))
        self.w_out = self._add_param("w_out", glorot_uniform(rng, (c_out, c_out, k, k), dtype))
        self.b_out = self._add_param("b_out", np.zeros(c_out, dtype=dtype))
        for prefix in ("gate", "update"):
            self._add_param(f"{prefix}_a", np.full(c_out, 1.1, dtype=dtype))
            self._add_param(f"{prefix}_mu", np.full(c_out, 2.0, dtype=dtype))
            self._add_param(f"{prefix}_gl", np.ones(c_out, dtype=dtype))
            self._add_param(f"{prefix}_gr", np.ones(c_out, dtype=dtype))

    def _scalars(self, prefix):
        p = self._params
        return p[f"{prefix}_a"], p[f"{prefix}_mu"], p[f"{prefix}_gl"], p[f"{prefix}_gr"]

    def forward(self, feat, mask, cache=False):
        mc, cols_m = ops.conv2d(mask, self.w_mask.val, self.b_mask.val, return_cols=True)
        ic, cols_i = ops.conv2d(feat, self.w_image.val, self.b_image.val, return_cols=True)
        a1, mu1, gl1, gr1 = self._scalars("gate")
        g, gate_cache = asym_gauss(mc, a1.val, mu1.val, gl1.val, gr1.val)
        gated = ic * g
        out, cols_o = ops.conv2d(gated, self.w_out.val, self.b_out.val, return_cols=True)
        a2, mu2, gl2, gr2 = self._scalars("update")
        new_mask, update_cache = asym_gauss(mc, a2.val, mu2.val, gl2.val, gr2.val)
        if cache:
            self._cache = (feat, mask, ic, g, gated, gate_cache, update_cache,
                           cols_m, cols_i, cols_o)
        return out, new_mask

    def backward(self, g_feat, g_mask=None, need_input_grad=True):
        (feat, mask, ic, g, gated, gate_cache, update_cache,
         cols_m, cols_i, cols_o) = self._take_cache()
        p = self._params

        g_gated, gw_o, gb_o = ops.conv2d_backward(g_feat, gated, self.w_out.val, cols=cols_o)
        p["w_out"].grad += gw_o
        p["b_out"].grad += gb_o

        g_ic = g_gated * g
        g_g = g_gated * ic
        g_mc, ga, gmu, ggl, ggr = asym_gauss_backward(g_g, gate_cache, p["gate_a"].val)
        p["gate_a"].grad += ga
        p["gate_mu"].grad += gmu
        p["gate_gl"].grad += ggl
        p["gate_gr"].grad += ggr
        if g_mask is not None:
            g_mc2, ga, gmu, ggl, ggr = asym_gauss_backward(g_mask, update_cache,
                                                           p["update_a"].val)
            g_mc = g_mc + g_mc2
            p["update_a"].grad += ga
            p["update_mu"].grad += gmu
            p["update_gl"].grad += ggl
            p["update_gr"].grad += ggr

        gx, gw_i, gb_i = ops.conv2d_backward(g_ic, feat, self.w_image.val, cols=cols_i,
                                             need_input_grad=need_input_grad)
        p["w_image"].grad += gw_i
        p["b_image"].grad += gb_i
        gm, gw_m, gb_m = ops.conv2d_backward(g_mc, mask, self.w_mask.val, cols=cols_m,
                                             need_input_grad=need_input_grad)
        p["w_mask"].grad += gw_m
        p["b_mask"].grad += gb_m
        return gx, gm

    def post_update(self):
        for name in ("gate_gl", "gate_gr", "update_gl", "update_gr"):
            np.maximum(self._params[name].val, LBAM_GAMMA_FLOOR,
                       out=self._params[name].val)


class GatedConv(MaskConvBase):
    """Gated convolution: leaky_relu(conv_f(x)) * sigmoid(conv_g(x)).

    With concat_mask=True (first layer of a network) the mask is appended to
    the input channels; afterwards the layer is mask-free and emits a
    single-channel all-ones placeholder mask.
    """

    kind = "gated"

    def __init__(self, c_in, c_out, k, rng, dtype=np.float32, concat_mask=False):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.concat_mask = concat_mask
        c_eff = c_in + 1 if concat_mask else c_in
        self.w_feat = self._add_param("w_feat", glorot_uniform(rng, (c_out, c_eff, k, k), dtype))
        self.b_feat = self._add_param("b_feat", np.zeros(c_out, dtype=dtype))
        self.w_gate = self._add_param("w_gate", glorot_uniform(rng, (c_out, c_eff, k, k), dtype))
        self.b_gate = self._add_param("b_gate", np.zeros(c_out, dtype=dtype))

    def forward(self, feat, mask=None, cache=False):
        if self.concat_mask:
            if mask is None or mask.shape[1] != 1:
                raise ValueError("GatedConv with concat_mask expects a single-channel mask")
            inp = np.concatenate([feat, mask], axis=1)
        else:
            inp = feat
        f, cols_f = ops.conv2d(inp, self.w_feat.val, self.b_feat.val, return_cols=True)
        glogit, cols_g = ops.conv2d(inp, self.w_gate.val, self.b_gate.val, return_cols=True)
        act = ops.leaky_relu(f, LEAKY_SLOPE)
        gate = ops.sigmoid(glogit)
        out = act * gate
        n, _, h, w = out.shape
        new_mask = np.ones((n, 1, h, w), dtype=feat.dtype)
        if cache:
            self._cache = (inp, f, act, gate, cols_f, cols_g)
        return out, new_mask

    def backward(self, g_feat, g_mask=None, need_input_grad=True):
        inp, f, act, gate, cols_f, cols_g = self._take_cache()
        g_f = ops.leaky_relu_backward(g_feat * gate, f, LEAKY_SLOPE)
        g_logit = ops.sigmoid_backward(g_feat * act, gate)
        gx_f, gw_f, gb_f = ops.conv2d_backward(g_f, inp, self.w_feat.val, cols=cols_f,
                                               need_input_grad=need_input_grad)
        gx_g, gw_g, gb_g = ops.conv2d_backward(g_logit, inp, self.w_gate.val, cols=cols_g,
                                               need_input_grad=need_input_grad)
        self.w_feat.grad += gw_f
        self.b_feat.grad += gb_f
        self.w_gate.grad += gw_g
        self.b_gate.grad += gb_g
        if not need_input_grad:
            return None, None
        gx = gx_f + gx_g
        if self.concat_mask:
            gx = gx[:, :-1]  # the guide mask is data, its gradient is dropped
        return gx, None


LAYER_KINDS = ("vanilla", "pconv", "lbam", "gated", "mgr")


def make_mask_conv(kind, c_in, c_out, k, rng, dtype=np.float32,
                   mask_in=None, first_layer=False):
    """Factory used by the network builder."""
    if kind == "vanilla":
        return VanillaConv(c_in, c_out, k, rng, dtype)
    if kind == "pconv":
        return PConv(c_in, c_out, k, rng, dtype)
    if kind == "mgr":
        return MGRConv(c_in, c_out, k, rng, dtype, mask_in=mask_in)
    if kind == "lbam":
        return LBAMConv(c_in, c_out, k, rng, dtype, mask_in=mask_in)
    if kind == "gated":
        return GatedConv(c_in, c_out, k, rng, dtype, concat_mask=first_layer)
    raise ValueError(f"unknown layer kind {kind!r}")


# ---------------------------------------------------------------------------
# FLOP accounting
# ---------------------------------------------------------------------------

@dataclass
class FlopCount:
    """Forward-pass multiply-accumulate counts, split by component."""

    image_conv: int
    mask_conv: int
    elementwise: int

    @property
    def total(self) -> int:
        return self.image_conv + self.mask_conv + self.elementwise


def layer_flops(kind, c_in, c_out, k, h, w) -> FlopCount:
    """MAC count of one forward pass at stride 1, counting each layer's formula
    as written.

    Conventions: mask window sums are dense convs over all input channels (the
    convention of the reference implementations); the partial-conv
    renormalization multiplies every tap inside the double sum, costing one
    extra MAC per tap; sigmoid counts 3 ops, the asymmetric Gaussian 7, plain
    multiplies/adds/selects 1 each. Mask channels follow the inter-layer
    convention (mask width == c_in).
    """
    hw = h * w
    conv = c_in * c_out * k * k * hw
    if kind == "vanilla":
        return FlopCount(conv, 0, 0)
    if kind == "pconv":
        # feature-mask multiply (c_in) + per-position divide/threshold (2)
        # + renorm multiply, bias restore and zero-select (3*c_out)
        elem = conv + hw * (c_in + 3 * c_out + 2)
        return FlopCount(conv, conv, elem)
    if kind == "gated":
        # phi (1) + sigmoid (3) + gating multiply (1), per output element
        return FlopCount(conv, conv, hw * 5 * c_out)
    if kind == "mgr":
        # phi + sigmoid + gate multiply + residual add (6) and relu + pow on
        # the mask update (4), per output element
        return FlopCount(conv, conv, hw * 10 * c_out)
    if kind == "lbam":
        out_conv = c_out * c_out * k * k * hw
        # two asymmetric-Gaussian evaluations (7 each) + gating multiply
        return FlopCount(conv + out_conv, conv, hw * 15 * c_out)
    raise ValueError(f"unknown layer kind {kind!r}")
