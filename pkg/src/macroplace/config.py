"""Run configuration shared by every CLI command.

One flat config serves all commands; each command reads the fields it needs.
Values resolve as defaults < config file < command-line flags, flags mirror
field names one-to-one, and unknown keys in a config file are rejected. Every
output artifact carries a provenance header (config hash, seed, package
version) so runs are attributable and byte-reproducible.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .errors import ValidationError

VERSION = "0.1.0"


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "out"

    # generate
    count: int = 4
    n_min: int = 40
    n_max: int = 120
    aspect_min: float = 0.5
    aspect_max: float = 2.0
    f_target: float = 1.0e9
    variants: int = 8
    write_bundles: bool = True

    # train
    dataset_dir: str = ""
    steps: int = 1500
    batch_size: int = 16
    lr: float = 3e-4
    lr_min: float = 1e-6
    grad_clip: float = 1.0
    ema_decay: float = 0.9999
    p_uncond: float = 0.1
    t_steps: int = 200
    schedule: str = "cosine"
    width: int = 64
    gnn_layers: int = 3
    attn_layers: int = 2
    heads: int = 4
    resume: str = ""

    # place / eval / render
    checkpoint: str = ""
    netlist: str = ""
    placement: str = ""
    canvas_w: float = 0.0
    canvas_h: float = 0.0
    n_place: int = 5
    sampler: str = "ddim"
    sample_steps: int = 50
    guidance_scale: float = 2.0
    e_rel_target: float = 0.95
    w_leg: float = 50.0
    w_cong: float = 1.0
    c_th: float = 0.0  # 0 resolves to 0.9x reference-peak congestion
    grid: int = 32
    max_shift: float = 0.25
    use_ema: bool = False
    snapshot_interval: int = 0
    flylines: bool = False

    # finetune
    ft_steps: int = 2000
    ft_samples: int = 16
    ft_inner: int = 64
    ft_lr: float = 1e-4
    buffer_capacity: int = 256
    omega_kappa: float = 4.0
    lambda_div: float = 0.1
    entropy_samples: int = 4
    data_fraction: float = 1.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            doc = json.load(fh)
        known = set(cls.field_names())
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        return cls(**doc)

    def apply_overrides(self, overrides: dict) -> "RunConfig":
        return dataclasses.replace(self, **overrides)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)

    def config_hash(self) -> str:
        """Hash of the run parameters. The output directory is excluded so
        identical runs into different directories produce identical bytes."""
        doc = dataclasses.asdict(self)
        doc.pop("out_dir")
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode()
        ).hexdigest()[:12]

    def provenance(self) -> dict:
        return {
            "config_hash": self.config_hash(),
            "seed": self.seed,
            "version": VERSION,
        }
