"""Adam, the training loops, and dropout-averaged inference.

Two training regimes: single-image (one noisy image, fresh blind-spot samples
every step) and dataset-based (batched random crops with neighbour-replacement
masking and a per-iteration cosine learning-rate decay). Both are fully
deterministic given (seed, config, data): every step draws its randomness from
a child generator derived from (seed, step), which also makes save/resume
bifurcation exact.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .blindspot import (BlindSpotSample, MaskScheme, make_sample, masked_mse,
                        sample_bernoulli)
from .checkpoint import SCHEMES, load_checkpoint, save_checkpoint
from .engine import ops
from .engine.rng import EVAL_STREAM, INIT_STREAM, SAMPLE_STREAM, STEP_STREAM, child_rng
from .noise import NoiseSpec, corrupt
from .unet import NetConfig, Network

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training loss went non-finite; a checkpoint of the last finite state was saved."""


# per-step bernoulli rate hiding observed pixels during inpainting training
# (the Self2Self-setting sampling rate, matching the dropout rate default)
INPAINT_BERNOULLI_RATE = 0.7


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8 (added
    outside the square root)."""

    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.val) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.val) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float | None = None):
        """One update from the gradients currently in the parameter buffers."""
        for name, p in self.params.items():
            if not np.isfinite(p.grad).all():
                log.error("non-finite gradient in %s; aborting step", name)
                raise FloatingPointError(f"non-finite gradient in {name}")
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            mhat = m / bc1
            vhat = v / bc2
            p.val -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    """Fully resolved training hyperparameters (see desk_config / paper_config)."""

    scheme: str = "s2s_single"
    steps: int = 2000
    lr: float = 1e-4
    batch: int = 1
    crop: int = 0  # 0 = full image (single-image schemes)
    seed: int = 0
    mask_scheme: MaskScheme = field(default_factory=MaskScheme)
    net: NetConfig = field(default_factory=NetConfig)
    eval_passes: int = 100
    checkpoint_every: int = 0  # 0 = no periodic checkpoints
    log_every: int = 1

    def validate(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.eval_passes < 1:
            raise ValueError("eval_passes must be >= 1")
        if self.crop:
            div = 1 << self.net.depth
            if self.crop % div:
                raise ValueError(f"crop {self.crop} must be divisible by 2^depth = {div}")
        self.mask_scheme.validate()
        self.net.validate()


_SCHEME_MASK_KIND = {"s2s_single": "bernoulli_s2s",
                     "n2v_dataset": "neighbor_n2v",
                     "inpaint_single": "drop_inpaint"}


def desk_config(scheme: str, in_channels: int = 1, seed: int = 0, **overrides) -> TrainConfig:
    """Small-budget defaults that train in minutes on a laptop CPU."""
    dataset = scheme == "n2v_dataset"
    net = NetConfig(in_channels=in_channels, depth=3, enc_channels=24, dec_channels=48,
                    conv_kind="mgr",
                    decoder_dropout=0.0 if dataset else 0.7)
    cfg = TrainConfig(
        scheme=scheme,
        steps=2000,
        lr=3e-4 if dataset else 1e-4,
        batch=4 if dataset else 1,
        crop=64 if dataset else 0,
        seed=seed,
        mask_scheme=MaskScheme(kind=_SCHEME_MASK_KIND[scheme], rate=0.7 if scheme != "inpaint_single" else 0.5),
        net=net,
        eval_passes=1 if dataset else 20,
    )
    return replace(cfg, **overrides) if overrides else cfg


def paper_config(scheme: str, in_channels: int = 3, seed: int = 0, **overrides) -> TrainConfig:
    """Full-scale defaults: 150k steps at lr 1e-4 single-image with 100-pass
    averaging, 500k iterations at lr 3e-4 / batch 4 / 256-crops dataset-based."""
    dataset = scheme == "n2v_dataset"
    net = NetConfig(in_channels=in_channels, depth=4, enc_channels=48, dec_channels=96,
                    conv_kind="mgr",
                    decoder_dropout=0.0 if dataset else 0.7)
    cfg = TrainConfig(
        scheme=scheme,
        steps=500_000 if dataset else 150_000,
        lr=3e-4 if dataset else 1e-4,
        batch=4 if dataset else 1,
        crop=256 if dataset else 0,
        seed=seed,
        mask_scheme=MaskScheme(kind=_SCHEME_MASK_KIND[scheme], rate=0.7 if scheme != "inpaint_single" else 0.5),
        net=net,
        eval_passes=100 if not dataset else 1,
        checkpoint_every=10_000,
    )
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class TrainResult:
    net: Network
    adam: Adam
    log_rows: list  # (step, loss, lr, wall_ms)
    pad: tuple = (0, 0)

    @property
    def losses(self):
        return [row[1] for row in self.log_rows]


def pad_to_multiple(x: np.ndarray, multiple: int):
    """Reflection-pad the bottom/right spatial edges up to a multiple. Returns
    (padded, (pad_h, pad_w))."""
    h, w = x.shape[2], x.shape[3]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (0, 0)
    return np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect"), (ph, pw)


def crop_padding(x: np.ndarray, pad):
    ph, pw = pad
    return x[:, :, :x.shape[2] - ph or None, :x.shape[3] - pw or None]


def cosine_lr(lr0: float, step: int, total: int) -> float:
    """Per-iteration decay from lr0 to 0 over the run."""
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / max(1, total)))


def _write_log(path, rows):
    if path is None:
        return
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "lr", "wall_ms"])
        writer.writerows(rows)


def _check_step_health(loss, net, step, emergency_path, adam, cfg):
    if math.isfinite(loss):
        return
    if emergency_path is not None:
        save_checkpoint(emergency_path, net, adam, step, cfg)
        log.error("loss non-finite at step %d, checkpoint of last finite state: %s",
                  step, emergency_path)
    raise DivergenceError(f"training loss non-finite at step {step}")


def _run_loop(cfg: TrainConfig, draw_sample, *, start_step=0, net=None, adam=None,
              log_path=None, checkpoint_path=None) -> TrainResult:
    """Shared training loop: per-step child RNG, masked loss, Adam, logging."""
    if net is None:
        net = Network(cfg.net, child_rng(cfg.seed, INIT_STREAM))
    if adam is None:
        adam = Adam(net.params(), lr=cfg.lr)
    rows = []
    t_last = time.perf_counter()
    emergency = None if checkpoint_path is None else str(checkpoint_path) + ".diverged"
    for step in range(start_step, cfg.steps):
        rng = child_rng(cfg.seed, STEP_STREAM, step)
        sample, loss_mask = draw_sample(step, rng)
        pred = net.forward(sample.manipulated, sample.guide_mask, training=True, rng=rng)
        loss, grad = masked_mse(pred, sample.target, loss_mask)
        _check_step_health(loss, net, step, emergency, adam, cfg)
        net.backward(grad)
        lr_t = cosine_lr(cfg.lr, step, cfg.steps) if cfg.scheme == "n2v_dataset" else cfg.lr
        adam.step(lr_t)
        net.post_update()
        for name, p in net.params().items():
            ops.assert_finite(p.val, f"parameter {name} after step {step}")
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            now = time.perf_counter()
            rows.append((step, loss, lr_t, (now - t_last) * 1000.0))
            t_last = now
        if (checkpoint_path and cfg.checkpoint_every
                and (step + 1) % cfg.checkpoint_every == 0):
            save_checkpoint(checkpoint_path, net, adam, step + 1, cfg)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, net, adam, cfg.steps, cfg)
    _write_log(log_path, rows)
    return TrainResult(net=net, adam=adam, log_rows=rows)


def _resume(cfg: TrainConfig, resume_from):
    state = load_checkpoint(resume_from)
    if state.seed != cfg.seed:
        raise ValueError(f"checkpoint seed {state.seed} != config seed {cfg.seed}")
    return state.net, state.adam, state.step


def train_single(y: np.ndarray, cfg: TrainConfig, *, resume_from=None,
                 log_path=None, checkpoint_path=None) -> TrainResult:
    """Single-image training (Self2Self-style bernoulli masking or fixed-corruption
    inpainting, per cfg.scheme/mask_scheme). `y` is one (1,c,h,w) image; inputs
    whose spatial dims are not divisible by 2^depth are reflection-padded."""
    cfg.validate()
    if cfg.scheme == "n2v_dataset":
        raise ValueError("use train_dataset for the n2v_dataset scheme")
    y4, pad = pad_to_multiple(np.asarray(y, dtype=np.float32), 1 << cfg.net.depth)
    if pad != (0, 0):
        log.info("input padded by %s to %sx%s", pad, y4.shape[2], y4.shape[3])

    if cfg.scheme == "inpaint_single":
        # The corruption is drawn once and treated as given. Each step then
        # bernoulli-hides a fraction of the surviving pixels and the loss
        # supervises exactly those hidden-but-known kept pixels, so training
        # stays blind-spot shaped while never touching unknown values.
        corruption = make_sample(y4, cfg.mask_scheme, child_rng(cfg.seed, SAMPLE_STREAM))
        keep = corruption.guide_mask
        corrupted = corruption.manipulated

        def draw(step, rng):
            second = sample_bernoulli(corrupted, INPAINT_BERNOULLI_RATE, rng)
            visible = keep * second.guide_mask
            sample = BlindSpotSample(manipulated=corrupted * second.guide_mask,
                                     guide_mask=visible, target=corrupted)
            loss_support = keep * (1.0 - second.guide_mask)
            return sample, 1.0 - loss_support
    else:
        def draw(step, rng):
            sample = make_sample(y4, cfg.mask_scheme, rng)
            return sample, sample.guide_mask

    net = adam = None
    start = 0
    if resume_from is not None:
        net, adam, start = _resume(cfg, resume_from)
    result = _run_loop(cfg, draw, start_step=start, net=net, adam=adam,
                       log_path=log_path, checkpoint_path=checkpoint_path)
    result.pad = pad
    return result


def train_dataset(images: list, cfg: TrainConfig, noise: NoiseSpec | None = None, *,
                  resume_from=None, log_path=None, checkpoint_path=None) -> TrainResult:
    """Dataset-based training: per iteration sample a batch of random crops,
    optionally corrupt them on the fly, neighbour-replace mask, masked loss,
    Adam with cosine decay. `images` are (c,h,w) or (1,c,h,w) arrays in [0,1]
    (already noisy unless `noise` is given)."""
    cfg.validate()
    if not images:
        raise ValueError("need at least one training image")
    imgs = [np.asarray(im, dtype=np.float32) for im in images]
    imgs = [im[0] if im.ndim == 4 else im for im in imgs]
    div = 1 << cfg.net.depth

    def draw(step, rng):
        idxs = rng.integers(len(imgs), size=cfg.batch)
        crops = []
        for i in idxs:
            im = imgs[int(i)]
            ch, cw = (cfg.crop, cfg.crop) if cfg.crop else (im.shape[1] // div * div,
                                                            im.shape[2] // div * div)
            if im.shape[1] < ch or im.shape[2] < cw:
                raise ValueError(f"image {im.shape[1]}x{im.shape[2]} smaller than crop {ch}x{cw}")
            top = int(rng.integers(im.shape[1] - ch + 1))
            left = int(rng.integers(im.shape[2] - cw + 1))
            crops.append(im[:, top:top + ch, left:left + cw])
        batch = np.stack(crops)
        if noise is not None:
            batch = corrupt(batch, noise, rng)
        sample = make_sample(batch, cfg.mask_scheme, rng)
        return sample, sample.guide_mask

    net = adam = None
    start = 0
    if resume_from is not None:
        net, adam, start = _resume(cfg, resume_from)
    return _run_loop(cfg, draw, start_step=start, net=net, adam=adam,
                     log_path=log_path, checkpoint_path=checkpoint_path)


def infer_averaged(net: Network, y: np.ndarray, passes: int,
                   rng: np.random.Generator, *, sampler=None,
                   mask: np.ndarray | None = None) -> np.ndarray:
    """Average `passes` stochastic forward evaluations (decoder dropout active)
    and clamp the result to [0, 1].

    By default every pass sees the full input with an all-ones guide mask.
    `sampler(y, pass_rng) -> (input, mask)` re-manipulates the input per pass
    (the Self2Self scheme averages Bernoulli-masked instances: a net trained
    only on masked inputs needs matching inputs at test time); a fixed `mask`
    marks known-invalid pixels (inpainting).
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if sampler is not None and mask is not None:
        raise ValueError("pass either a sampler or a fixed mask, not both")
    y4, pad = pad_to_multiple(np.asarray(y, dtype=np.float32), 1 << net.config.depth)
    mask4 = None
    if mask is not None:
        mask4, _ = pad_to_multiple(np.asarray(mask, dtype=np.float32), 1 << net.config.depth)
    pass_seeds = rng.integers(0, 2 ** 63, size=passes, dtype=np.uint64)
    acc = np.zeros_like(y4, dtype=np.float64)
    for s in pass_seeds:
        pass_rng = np.random.Generator(np.random.PCG64(int(s)))
        if sampler is not None:
            feat, m = sampler(y4, pass_rng)
        else:
            feat, m = y4, mask4
        acc += net.forward(feat, m, stochastic=True, rng=pass_rng)
    out = (acc / passes).astype(np.float32)
    return np.clip(crop_padding(out, pad), 0.0, 1.0)


def scheme_sampler(scheme: str, mask_scheme: MaskScheme):
    """Per-pass input sampler matching how a network was trained (None when the
    full image with an all-ones mask is the right test-time input)."""
    if scheme == "s2s_single" and mask_scheme.kind == "bernoulli_s2s":
        rate = mask_scheme.rate

        def sampler(y, rng):
            s = sample_bernoulli(y, rate, rng)
            return s.manipulated, s.guide_mask

        return sampler
    return None


def denoise_image(net: Network, y: np.ndarray, passes: int, seed: int, *,
                  scheme: str | None = None,
                  mask_scheme: MaskScheme | None = None) -> np.ndarray:
    """Convenience wrapper deriving the inference stream from a run seed and
    the input sampler from the training scheme."""
    sampler = scheme_sampler(scheme, mask_scheme) if scheme and mask_scheme else None
    return infer_averaged(net, y, passes, child_rng(seed, EVAL_STREAM), sampler=sampler)
