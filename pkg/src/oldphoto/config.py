"""Pipeline configuration and its plain-text ``key=value`` file format."""
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError


@dataclass
class PipelineConfig:
    # paths
    clean_dir: str = "data/clean"
    real_dir: str = "data/real"
    synth_dir: str = "data/synth"
    face_dir: str = "data/faces"
    asset_dir: str = ""
    checkpoint_dir: str = "checkpoints"
    perceptual_weights: str = ""

    # optimisation
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 200
    batch_size: int = 4
    max_steps: int = 0  # 0: run all epochs
    log_every: int = 1
    checkpoint_every: int = 500
    crop: int = 256
    seed: int = 0

    # loss weights
    alpha: float = 10.0
    kl_weight: float = 1.0
    lambda1: float = 60.0
    lambda2: float = 10.0
    gamma: float = 0.2
    beta_fl: float = 10.0
    face_gan_weight: float = 1.0

    # restoration networks
    ngf: int = 64
    latent_channels: int = 64
    n_res: int = 4
    mapping_width: int = 512
    n_shared_res: int = 6
    norm: str = "instance"
    ndf: int = 64
    d_layers: int = 4
    latent_d_layers: int = 4
    perceptual_width: int = 32
    perceptual_layers: int = 5

    # detector
    unet_base: int = 32
    unet_depth: int = 4
    threshold: float = 0.5

    # face enhancement
    face_size: int = 256
    face_width: int = 512
    face_hidden: int = 128
    injection_scales: str = "hierarchical"
    feather: int = 16

    # flags
    invert_alpha: bool = False
    residual_nonlocal: bool = True
    joint_face: bool = True

    # synthesis
    structured: bool = True
    unstructured: bool = True
    drop_prob: float = 0.3
    hole_prob: float = 0.5
    n_scratch_min: int = 1
    n_scratch_max: int = 6

    # inference / diagnostics
    tile: int = 256
    tile_overlap: int = 32
    n_projections: int = 128

    def restore_arch(self):
        from .restore.networks import RestoreArch

        return RestoreArch(
            ngf=self.ngf, latent_channels=self.latent_channels, n_res=self.n_res,
            mapping_width=self.mapping_width, n_shared_res=self.n_shared_res, norm=self.norm,
            residual_nonlocal=self.residual_nonlocal, ndf=self.ndf, d_layers=self.d_layers,
            latent_d_layers=self.latent_d_layers, perceptual_layers=self.perceptual_layers,
            perceptual_width=self.perceptual_width,
        )

    def scales(self):
        """Face injection scales as a tuple of ints."""
        if self.injection_scales == "hierarchical":
            out, s = [], 16
            while s <= self.face_size:
                out.append(s)
                s *= 2
            return tuple(out)
        return tuple(int(s) for s in str(self.injection_scales).split(",") if s.strip())

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _coerce(field, raw):
    typ = field.type if isinstance(field.type, type) else type(field.default)
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{field.name}: not a boolean: {raw!r}")
    try:
        return typ(raw.strip())
    except ValueError as exc:
        raise ConfigurationError(f"{field.name}: cannot parse {raw!r} as {typ.__name__}") from exc


def parse_config(text, base=None):
    known = {f.name: f for f in fields(PipelineConfig)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in known:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        changes[key] = _coerce(known[key], value)
    return dataclasses.replace(base or PipelineConfig(), **changes)


def load_config(path, base=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config(path.read_text(), base)


def dump_config(cfg):
    return "".join(f"{k}={v}\n" for k, v in cfg.to_dict().items())


def from_dict(d):
    known = {f.name for f in fields(PipelineConfig)}
    return PipelineConfig(**{k: v for k, v in d.items() if k in known})
