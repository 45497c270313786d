"""U-Net with a mask-aware encoder and a vanilla, optionally-dropout decoder.

Encoder: `depth` blocks of [mask-conv, mask-conv, maxpool2]; features and
masks are pooled side by side. Bottleneck: one mask-conv. Decoder: `depth`
blocks of [nearest-2x upsample, concat skip, conv, conv] with optional dropout
after each decoder conv. Head: 3x3 convs to 64 and 32 channels, then a linear
1x1 conv back to the input channel count. Skip connections carry features
only; masks are consumed by the encoder and discarded afterwards.

Layers whose formula is linear in the feature (vanilla, pconv, lbam) get a
leaky-ReLU post-activation in the encoder; mgr and gated layers gate
internally and get none.
"""

from dataclasses import dataclass, field

import numpy as np

from .engine import ops
from .layers import LAYER_KINDS, LEAKY_SLOPE, VanillaConv, make_mask_conv

HEAD_CHANNELS = (64, 32)
_POST_ACTIVATED = ("vanilla", "pconv", "lbam")


@dataclass
class NetConfig:
    """Architecture hyperparameters; the parameter count is a pure function of these."""

    in_channels: int = 3
    depth: int = 4
    enc_channels: int = 48
    dec_channels: int = 96
    conv_kind: str = "mgr"
    decoder_dropout: float = 0.0
    kernel: int = 3

    def validate(self):
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.conv_kind not in LAYER_KINDS:
            raise ValueError(f"conv_kind must be one of {LAYER_KINDS}, got {self.conv_kind!r}")
        if not 0.0 <= self.decoder_dropout < 1.0:
            raise ValueError("decoder_dropout must be in [0, 1)")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.enc_channels < 1 or self.dec_channels < 1:
            raise ValueError("channel counts must be positive")


def _mask_width(kind, enc_channels):
    """Mask channel count flowing between encoder layers of a given kind."""
    return enc_channels if kind in ("mgr", "lbam") else 1


class Network:
    """The denoising network F(feature, mask) with hand-wired backprop."""

    def __init__(self, config: NetConfig, rng: np.random.Generator, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        c = config
        k = c.kernel
        self._post_act = c.conv_kind in _POST_ACTIVATED

        self.enc_blocks = []
        feat_c, mask_c = c.in_channels, 1
        for level in range(c.depth):
            first = level == 0
            a = make_mask_conv(c.conv_kind, feat_c, c.enc_channels, k, rng, dtype,
                               mask_in=mask_c, first_layer=first)
            mask_c = _mask_width(c.conv_kind, c.enc_channels)
            b = make_mask_conv(c.conv_kind, c.enc_channels, c.enc_channels, k, rng, dtype,
                               mask_in=mask_c)
            self.enc_blocks.append((a, b))
            feat_c = c.enc_channels
        self.bottleneck = make_mask_conv(c.conv_kind, c.enc_channels, c.enc_channels, k,
                                         rng, dtype, mask_in=mask_c)

        self.dec_blocks = []
        below_c = c.enc_channels
        for _ in range(c.depth):
            conv1 = VanillaConv(below_c + c.enc_channels, c.dec_channels, k, rng, dtype)
            conv2 = VanillaConv(c.dec_channels, c.dec_channels, k, rng, dtype)
            self.dec_blocks.append((conv1, conv2))
            below_c = c.dec_channels
        h1, h2 = HEAD_CHANNELS
        self.head = (
            VanillaConv(c.dec_channels, h1, k, rng, dtype),
            VanillaConv(h1, h2, k, rng, dtype),
            VanillaConv(h2, c.in_channels, 1, rng, dtype),
        )
        self._cache = None

    # -- parameter plumbing ---------------------------------------------

    def named_layers(self):
        for i, (a, b) in enumerate(self.enc_blocks):
            yield f"enc{i}a", a
            yield f"enc{i}b", b
        yield "bottleneck", self.bottleneck
        for i, (c1, c2) in enumerate(self.dec_blocks):
            yield f"dec{i}a", c1
            yield f"dec{i}b", c2
        for i, layer in enumerate(self.head):
            yield f"head{i}", layer

    def params(self):
        out = {}
        for lname, layer in self.named_layers():
            for pname, p in layer.params().items():
                out[f"{lname}.{pname}"] = p
        return out

    def num_params(self) -> int:
        return sum(p.val.size for p in self.params().values())

    def zero_grads(self):
        for _, layer in self.named_layers():
            layer.zero_grads()

    def post_update(self):
        for _, layer in self.named_layers():
            layer.post_update()

    # -- forward / backward ----------------------------------------------

    def _check_spatial(self, h, w):
        div = 1 << self.config.depth
        if h % div or w % div:
            raise ValueError(
                f"input {h}x{w} not divisible by 2^depth={div}; pad to "
                f"{-(-h // div) * div}x{-(-w // div) * div} first")

    def forward(self, feat, mask=None, *, training=False, stochastic=None, rng=None):
        """Run the network. `training` retains caches for backward; `stochastic`
        (defaults to `training`) controls decoder dropout, so dropout-averaged
        inference can sample without paying for caches."""
        n, cch, h, w = feat.shape
        if cch != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {cch}")
        self._check_spatial(h, w)
        if mask is None:
            mask = np.ones((n, 1, h, w), dtype=feat.dtype)
        stochastic = training if stochastic is None else stochastic
        drop = self.config.decoder_dropout
        if stochastic and drop > 0 and rng is None:
            raise ValueError("stochastic forward with decoder dropout needs an rng")

        cache = {"enc": [], "dec": [], "head": []} if training else None
        cur_f, cur_m = feat, mask
        skips = []
        for a, b in self.enc_blocks:
            cur_f, cur_m = a.forward(cur_f, cur_m, cache=training)
            pre_a = cur_f
            if self._post_act:
                cur_f = ops.leaky_relu(cur_f, LEAKY_SLOPE)
            cur_f, cur_m = b.forward(cur_f, cur_m, cache=training)
            pre_b = cur_f
            if self._post_act:
                cur_f = ops.leaky_relu(cur_f, LEAKY_SLOPE)
            skips.append(cur_f)
            cur_f, idx_f = ops.maxpool2(cur_f)
            cur_m, idx_m = ops.maxpool2(cur_m)
            if training:
                cache["enc"].append((pre_a, pre_b, idx_f, idx_m, cur_m.shape))
        cur_f, cur_m = self.bottleneck.forward(cur_f, cur_m, cache=training)
        pre_bot = cur_f
        if self._post_act:
            cur_f = ops.leaky_relu(cur_f, LEAKY_SLOPE)
        if training:
            cache["bottleneck"] = pre_bot

        for i, (c1, c2) in enumerate(self.dec_blocks):
            skip = skips[len(skips) - 1 - i]
            up = ops.upsample_nearest2(cur_f)
            cat = np.concatenate([up, skip], axis=1)
            z1, _ = c1.forward(cat, cache=training)
            a1 = ops.leaky_relu(z1, LEAKY_SLOPE)
            d1, dm1 = ops.dropout(a1, drop, rng, training=stochastic)
            z2, _ = c2.forward(d1, cache=training)
            a2 = ops.leaky_relu(z2, LEAKY_SLOPE)
            d2, dm2 = ops.dropout(a2, drop, rng, training=stochastic)
            if training:
                cache["dec"].append((up.shape[1], z1, dm1, z2, dm2))
            cur_f = d2

        h1, h2, h3 = self.head
        z1, _ = h1.forward(cur_f, cache=training)
        a1 = ops.leaky_relu(z1, LEAKY_SLOPE)
        z2, _ = h2.forward(a1, cache=training)
        a2 = ops.leaky_relu(z2, LEAKY_SLOPE)
        out, _ = h3.forward(a2, cache=training)
        if training:
            cache["head"] = (z1, z2)
            self._cache = cache
        return out

    def backward(self, grad_out):
        """Populate every parameter gradient buffer from the cached forward.

        Gradients are zeroed first, then accumulated (a batched call equals the
        sum of per-sample calls). Caches are consumed.
        """
        if self._cache is None:
            raise RuntimeError("Network.backward called without a cached training forward")
        cache, self._cache = self._cache, None
        self.zero_grads()

        h1, h2, h3 = self.head
        z1, z2 = cache["head"]
        g, _ = h3.backward(grad_out)
        g = ops.leaky_relu_backward(g, z2, LEAKY_SLOPE)
        g, _ = h2.backward(g)
        g = ops.leaky_relu_backward(g, z1, LEAKY_SLOPE)
        g, _ = h1.backward(g)

        # decoder block i consumed skips[depth-1-i], so walking blocks from the
        # shallowest down fills skip_grads already indexed by encoder level
        skip_grads = []
        for i in range(len(self.dec_blocks) - 1, -1, -1):
            c1, c2 = self.dec_blocks[i]
            up_c, z1, dm1, z2, dm2 = cache["dec"][i]
            g = ops.dropout_backward(g, dm2)
            g = ops.leaky_relu_backward(g, z2, LEAKY_SLOPE)
            g, _ = c2.backward(g)
            g = ops.dropout_backward(g, dm1)
            g = ops.leaky_relu_backward(g, z1, LEAKY_SLOPE)
            g, _ = c1.backward(g)
            skip_grads.append(g[:, up_c:])
            g = ops.upsample_nearest2_backward(np.ascontiguousarray(g[:, :up_c]))

        if self._post_act:
            g = ops.leaky_relu_backward(g, cache["bottleneck"], LEAKY_SLOPE)
        g_f, g_m = self.bottleneck.backward(g, None)

        for level in range(len(self.enc_blocks) - 1, -1, -1):
            a, b = self.enc_blocks[level]
            pre_a, pre_b, idx_f, idx_m, pooled_mshape = cache["enc"][level]
            ph, pw = pre_b.shape[2], pre_b.shape[3]
            g_f = ops.maxpool2_backward(g_f, idx_f, ph, pw)
            g_f += skip_grads[level]
            if g_m is not None:
                g_m = ops.maxpool2_backward(g_m, idx_m, 2 * pooled_mshape[2],
                                            2 * pooled_mshape[3])
            if self._post_act:
                g_f = ops.leaky_relu_backward(g_f, pre_b, LEAKY_SLOPE)
            g_f, g_m = b.backward(g_f, g_m)
            if self._post_act:
                g_f = ops.leaky_relu_backward(g_f, pre_a, LEAKY_SLOPE)
            g_f, g_m = a.backward(g_f, g_m, need_input_grad=level > 0)


def build(config: NetConfig, rng: np.random.Generator, dtype=np.float32) -> Network:
    """Construct an initialized network (same seed -> identical parameters)."""
    return Network(config, rng, dtype=dtype)
