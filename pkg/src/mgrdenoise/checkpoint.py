"""Binary checkpoint format.

Layout: magic "MGRD" | format version u32 | entry count u32 | entries of
(name length u16, UTF-8 name, rank u8, dims u32 x rank, float32 little-endian
values). Everything is stored as f32 arrays; training state is f32 throughout,
so round-trips are bit-exact. Non-array state is encoded as arrays: the step
counter as a rank-0 entry, the u64 seed as three 24-bit chunks (each exactly
representable in f32), the architecture as a small numeric vector.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .blindspot import MaskScheme
from .engine.rng import make_rng
from .layers import LAYER_KINDS
from .unet import NetConfig, Network

MAGIC = b"MGRD"
VERSION = 1

SCHEMES = ("s2s_single", "n2v_dataset", "inpaint_single")
MASK_KINDS = ("bernoulli_s2s", "neighbor_n2v", "drop_inpaint")


class CheckpointError(ValueError):
    """Malformed, truncated, or incompatible checkpoint file."""


def write_entries(path, entries: dict[str, np.ndarray]):
    """Write named f32 arrays in declaration order."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            arr = np.asarray(arr, dtype="<f4")  # preserves rank-0 scalars
            if arr.ndim and not arr.flags.c_contiguous:
                arr = np.ascontiguousarray(arr)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def read_entries(path) -> dict[str, np.ndarray]:
    """Strict reader: bad magic/version, truncation, or trailing bytes all raise."""
    with open(path, "rb") as f:
        data = f.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise CheckpointError(f"truncated checkpoint: ran out of bytes reading {what}")
        chunk = data[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise CheckpointError(f"bad magic; not a {MAGIC.decode()} checkpoint")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (count,) = struct.unpack("<I", take(4, "entry count"))
    entries = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = tuple(struct.unpack("<I", take(4, "dim"))[0] for _ in range(rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(4 * size, f"values of {name}"), dtype="<f4").reshape(dims)
        entries[name] = arr.copy()
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes after the last entry")
    return entries


def _seed_to_chunks(seed: int) -> np.ndarray:
    s = int(seed)
    if not 0 <= s < 2 ** 64:
        raise ValueError("seed must fit in u64")
    return np.array([s & 0xFFFFFF, (s >> 24) & 0xFFFFFF, s >> 48], dtype=np.float32)


def _seed_from_chunks(chunks) -> int:
    c = [int(v) for v in chunks]
    return c[0] | (c[1] << 24) | (c[2] << 48)


def _net_vector(cfg: NetConfig) -> np.ndarray:
    return np.array([cfg.in_channels, cfg.depth, cfg.enc_channels, cfg.dec_channels,
                     LAYER_KINDS.index(cfg.conv_kind), cfg.decoder_dropout, cfg.kernel],
                    dtype=np.float32)


def _scalar(v) -> float:
    return float(np.asarray(v).reshape(-1)[0])


def _round_rate(v) -> float:
    # rates/probabilities are short decimals; undo the f32 storage quantization
    return round(_scalar(v), 6)


def _net_from_vector(v) -> NetConfig:
    return NetConfig(in_channels=int(v[0]), depth=int(v[1]), enc_channels=int(v[2]),
                     dec_channels=int(v[3]), conv_kind=LAYER_KINDS[int(v[4])],
                     decoder_dropout=_round_rate(v[5]), kernel=int(v[6]))


@dataclass
class RestoredState:
    net: "Network"
    adam: "object"  # trainer.Adam; avoided import cycle
    step: int
    seed: int
    net_config: NetConfig
    scheme: str
    mask_scheme: MaskScheme
    eval_passes: int


def save_checkpoint(path, net: Network, adam, step: int, train_cfg):
    """Bit-exact snapshot of parameters, Adam moments, step counter, seed, and
    the scheme metadata inference needs."""
    ms = train_cfg.mask_scheme
    entries = {
        "meta/net": _net_vector(net.config),
        "meta/step": np.float32(step),
        "meta/seed": _seed_to_chunks(train_cfg.seed),
        "meta/scheme": np.array([SCHEMES.index(train_cfg.scheme),
                                 MASK_KINDS.index(ms.kind), ms.rate,
                                 ms.n2v_fraction, ms.n2v_window,
                                 train_cfg.eval_passes], dtype=np.float32),
    }
    for name, p in net.params().items():
        entries[f"param/{name}"] = p.val
    for name, m in adam.m.items():
        entries[f"adam/m/{name}"] = m
    for name, v in adam.v.items():
        entries[f"adam/v/{name}"] = v
    entries["adam/t"] = np.float32(adam.t)
    entries["adam/lr"] = np.float32(adam.lr)
    write_entries(path, entries)


def load_checkpoint(path) -> RestoredState:
    from .training import Adam  # local import; trainer depends on this module

    entries = read_entries(path)
    try:
        cfg = _net_from_vector(entries["meta/net"])
        step = int(_scalar(entries["meta/step"]))
        seed = _seed_from_chunks(entries["meta/seed"])
        sv = entries["meta/scheme"]
        scheme = SCHEMES[int(sv[0])]
        mask_scheme = MaskScheme(kind=MASK_KINDS[int(sv[1])], rate=_round_rate(sv[2]),
                                 n2v_fraction=_round_rate(sv[3]), n2v_window=int(sv[4]))
        eval_passes = int(sv[5])
    except KeyError as e:
        raise CheckpointError(f"missing checkpoint entry {e}") from e
    net = Network(cfg, make_rng(0))
    params = net.params()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in entries:
            raise CheckpointError(f"missing checkpoint entry {key}")
        if entries[key].shape != p.val.shape:
            raise CheckpointError(f"shape mismatch for {key}: {entries[key].shape} "
                                  f"vs {p.val.shape}")
        p.val[...] = entries[key]
    adam = Adam(params, lr=_scalar(entries["adam/lr"]))
    adam.t = int(_scalar(entries["adam/t"]))
    for name in params:
        adam.m[name][...] = entries[f"adam/m/{name}"]
        adam.v[name][...] = entries[f"adam/v/{name}"]
    return RestoredState(net=net, adam=adam, step=step, seed=seed, net_config=cfg,
                         scheme=scheme, mask_scheme=mask_scheme, eval_passes=eval_passes)
