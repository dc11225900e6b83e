"""Run configuration, model profiles and YAML loading."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..channel import BsConfig, SceneSpec
from ..encoder import EncoderConfig

COMMANDS = ("generate", "pretrain", "finetune", "evaluate", "omp", "iblab")
TASKS = ("toa", "aoa", "sbloc", "mbloc")
PROFILES = ("desk", "paper")
SCHEMA_VERSION = 1


def paper_encoder() -> EncoderConfig:
    return EncoderConfig()


def desk_encoder() -> EncoderConfig:
    return EncoderConfig(
        n_ant=8, n_subc=32, n_enc=2, n_heads=4, n_embed=64, n_latent=32, d_ff=128,
        partition=(12, 12, 8), dropout=0.0,
    )


def desk_scene(seed: int = 0) -> SceneSpec:
    """Small open-area scene: two BSs below a 40 m x 30 m UE region."""
    return SceneSpec(
        ue_region=(-20.0, 20.0, 10.0, 40.0),
        bs_list=[BsConfig((-20.0, 0.0), 20e6), BsConfig((20.0, 0.0), 50e6)],
        scatterers=[(-30.0, 25.0), (30.0, 30.0), (0.0, 50.0), (-10.0, 45.0)],
        n_paths_max=3,
        seed=seed,
        n_ant=8,
        n_subc=32,
    )


def paper_scene(seed: int = 0) -> SceneSpec:
    return SceneSpec(
        ue_region=(-40.0, 40.0, 20.0, 100.0),
        bs_list=[BsConfig(p, bw) for p in ((-40.0, 0.0), (40.0, 0.0)) for bw in (10e6, 20e6, 50e6)],
        scatterers=[(-60.0, 50.0), (60.0, 70.0), (0.0, 120.0), (-20.0, 110.0)],
        seed=seed,
    )


@dataclass
class RunConfig:
    """Everything one CLI invocation needs.  Defaults are the full-scale profile values.

    ``scene`` is a SceneSpec dict; ``None`` selects the profile's scene.
    ``dataset`` defaults to ``<out>/dataset``.
    """

    command: str = "generate"
    profile: str = "paper"
    seed: int = 0
    out: str = "runs/default"
    dataset: str | None = None
    scene: dict | None = None
    n_locations: int = 512

    model: EncoderConfig = field(default_factory=paper_encoder)
    n_dec: int = 2
    n_picl_out: int = 32

    # pretraining
    batch_size: int = 32
    lr: float = 1e-4
    pretrain_steps: int = 1000
    alpha: tuple[float, float, float] = (10.0, 20.0, 1.0)
    tau: float = 0.1
    n_hat_ant: int = 16
    n_hat_subc: int = 64
    target_region: str = "masked"
    grad_clip: float | None = None
    log_every: int = 1

    # fine-tuning
    task: str = "sbloc"
    pretrained: str | None = None
    label_budget: int | None = None
    n_val: int | None = None
    n_test: int | None = None
    finetune_steps: int = 1000
    finetune_lr: float = 1e-4
    finetune_batch: int = 32
    eval_every: int = 50
    hidden: int = 256
    attn_hidden: int = 64
    mbloc_schedule: str = "joint"  # joint | frozen_heads
    bs_index: int | None = 0
    n_pilot: int = 1
    checkpoint: str | None = None  # evaluate: checkpoint to load

    # model-based baseline
    omp_k_paths: int = 3
    omp_g_theta: int = 181

    # information-bound lab
    iblab_worlds: int = 100
    iblab_trials: int = 1000

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = EncoderConfig.from_dict(self.model)
        self.alpha = tuple(float(a) for a in self.alpha)
        self.validate()

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; expected one of {PROFILES}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.target_region not in ("masked", "unmasked", "full"):
            raise ValueError(f"unknown target_region {self.target_region!r}")
        if self.mbloc_schedule not in ("joint", "frozen_heads"):
            raise ValueError(f"unknown mbloc_schedule {self.mbloc_schedule!r}")
        if len(self.alpha) != 3 or min(self.alpha) < 0:
            raise ValueError("alpha must be three nonnegative weights")
        for name in ("batch_size", "finetune_batch", "n_locations", "n_pilot", "eval_every", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("pretrain_steps", "finetune_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.lr > 0 and self.finetune_lr > 0 and self.tau > 0):
            raise ValueError("learning rates and temperature must be positive")

    @property
    def dataset_dir(self) -> Path:
        return Path(self.dataset) if self.dataset else Path(self.out) / "dataset"

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def scene_spec(self) -> SceneSpec:
        if self.scene is not None:
            d = dict(self.scene)
            d.setdefault("seed", self.seed)
            return SceneSpec.from_dict(d)
        return (desk_scene if self.profile == "desk" else paper_scene)(self.seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        d["alpha"] = list(self.alpha)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d.pop("schema_version", None)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update(kw)
        return RunConfig.from_dict(d)


def profile_defaults(profile: str) -> dict:
    """Config values that differ between the desk and paper profiles."""
    if profile == "paper":
        return {"profile": "paper", "model": paper_encoder().to_dict()}
    if profile == "desk":
        return {
            "profile": "desk",
            "model": desk_encoder().to_dict(),
            "n_hat_ant": 4,
            "n_hat_subc": 16,
            "n_picl_out": 16,
            "hidden": 64,
            "attn_hidden": 32,
            "lr": 2e-3,
            "grad_clip": 1.0,
            "finetune_lr": 1e-3,
            "pretrain_steps": 200,
            "finetune_steps": 600,
            "omp_g_theta": 61,
        }
    raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if k == "model" and isinstance(v, dict) and isinstance(out.get("model"), dict):
            out["model"] = {**out["model"], **v}
        else:
            out[k] = v
    return out


def build_config(file_values: dict | None = None, profile: str | None = None, **overrides) -> RunConfig:
    """Profile defaults < config file < explicit overrides (``None`` overrides are ignored)."""
    file_values = dict(file_values or {})
    overrides = {k: v for k, v in overrides.items() if v is not None}
    prof = profile or overrides.get("profile") or file_values.get("profile") or "desk"
    merged = _merge(profile_defaults(prof), file_values)
    merged = _merge(merged, overrides)
    merged["profile"] = prof
    return RunConfig.from_dict(merged)


def load_config_file(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must contain a mapping")
    return data
