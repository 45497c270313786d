"""Run directories, manifests, and strict JSON config loading.

Every CLI run owns one fresh directory and writes exactly one manifest.json
there: the resolved config, seed, content hashes of the inputs, output paths,
and any metric results. A run is reproducible from its manifest alone.
"""

import dataclasses
import hashlib
import json
import time
from pathlib import Path

from .blindspot import MaskScheme
from .noise import NoiseSpec
from .training import TrainConfig
from .unet import NetConfig


class ConfigError(ValueError):
    """Unknown or ill-typed keys in a JSON config."""


def resolve_run_dir(base, on_exists: str = "fail") -> Path:
    """Create the run directory. If it already exists: 'fail' raises,
    'suffix' appends -1, -2, ... so reruns never silently overwrite."""
    base = Path(base)
    if not base.exists():
        base.mkdir(parents=True)
        return base
    if on_exists == "fail":
        raise FileExistsError(
            f"output directory {base} exists; pass --suffix to create a numbered sibling")
    if on_exists != "suffix":
        raise ValueError(f"on_exists must be 'fail' or 'suffix', got {on_exists!r}")
    for i in range(1, 10_000):
        cand = base.with_name(f"{base.name}-{i}")
        if not cand.exists():
            cand.mkdir(parents=True)
            return cand
    raise FileExistsError(f"could not find a free suffix for {base}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir, command: str, config: dict, seed: int,
                   inputs: list, outputs: list, metrics: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "seed": seed,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "metrics": metrics or {},
    }
    path = Path(run_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# strict dataclass <-> JSON
# ---------------------------------------------------------------------------

_NESTED = {"mask_scheme": MaskScheme, "net": NetConfig, "noise": NoiseSpec}


def _from_dict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED and isinstance(value, dict):
            kwargs[key] = _from_dict(_NESTED[key], value, f"{where}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from e


def train_config_from_json(text: str) -> TrainConfig:
    """Parse a strict TrainConfig JSON (unknown keys are rejected)."""
    data = json.loads(text)
    cfg = _from_dict(TrainConfig, data, "config")
    cfg.validate()
    return cfg


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
