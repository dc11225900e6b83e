"""Geometric uplink MIMO-OFDM channel synthesis.

A single-antenna UE transmits to a BS equipped with a uniform linear array
(ULA) laid along the global x-axis with broadside towards +y.  The channel
frequency response on subcarrier k (k = 1..n_subc) is

    h_k = sum_l alpha_l a(theta_l) exp(-j 2 pi k df tau_l) + n_k

with a(theta)_n = exp(-j 2 pi (d / lambda) n sin(theta)).  Multipath comes
from the line-of-sight path plus single-bounce reflections off point
scatterers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

SPEED_OF_LIGHT = 299_792_458.0
REFLECTION_AMPLITUDE = 0.3

# substream tags for per-location RNG derivation
_POSITION_STREAM = 0
_SAMPLE_STREAM = 1


@dataclass(frozen=True)
class ArrayGeometry:
    n_ant: int
    wavelength: float
    spacing: float | None = None
    bs_position: tuple[float, float] = (0.0, 0.0)
    orientation: str = "x-axis"

    def __post_init__(self):
        if self.n_ant < 1:
            raise ValueError(f"n_ant must be >= 1, got {self.n_ant}")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.spacing is None:
            object.__setattr__(self, "spacing", self.wavelength / 2)
        if self.spacing <= 0:
            raise ValueError("antenna spacing must be positive")
        if self.orientation != "x-axis":
            raise ValueError("only the x-axis ULA (broadside +y) is supported")


@dataclass(frozen=True)
class MultipathComponent:
    gain: complex
    delay: float
    aoa: float
    is_los: bool = False

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("path delay must be nonnegative")
        if abs(self.gain) == 0:
            raise ValueError("path gain must be nonzero")


@dataclass(frozen=True)
class BsConfig:
    bs_position: tuple[float, float]
    bandwidth_hz: float

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "bs_position", tuple(float(v) for v in self.bs_position))

    def subcarrier_spacing(self, n_subc: int) -> float:
        return self.bandwidth_hz / n_subc

    def as_vector(self) -> np.ndarray:
        """The raw conditioning vector [bs_x, bs_y, bandwidth_hz]."""
        return np.array([*self.bs_position, self.bandwidth_hz], dtype=np.float64)


@dataclass
class ChannelSample:
    cfr: np.ndarray
    ue_position: np.ndarray
    config: BsConfig
    toa_s: float
    aoa_rad: float
    los_flag: bool
    location_id: int

    @property
    def n_ant(self) -> int:
        return self.cfr.shape[0]

    @property
    def n_subc(self) -> int:
        return self.cfr.shape[1]


@dataclass
class SceneSpec:
    """Synthetic scene replacing a ray-traced environment.

    ``ue_region`` is ``(x_min, x_max, y_min, y_max)`` in meters.  A
    ``noise_sigma`` of ``None`` selects :func:`default_noise_sigma`.
    """

    ue_region: tuple[float, float, float, float]
    bs_list: list[BsConfig]
    scatterers: list[tuple[float, float]] = field(default_factory=list)
    n_paths_max: int = 4
    noise_sigma: float | None = None
    seed: int = 0
    n_ant: int = 32
    n_subc: int = 128
    carrier_hz: float = 3.5e9
    reflection_amplitude: float = REFLECTION_AMPLITUDE

    def __post_init__(self):
        x0, x1, y0, y1 = (float(v) for v in self.ue_region)
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"ue_region must have positive area, got {self.ue_region}")
        self.ue_region = (x0, x1, y0, y1)
        if self.n_paths_max < 1:
            raise ValueError("n_paths_max must be >= 1")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.bs_list:
            raise ValueError("scene needs at least one BS")
        for cfg in self.bs_list:
            if cfg.bs_position[1] >= y0:
                raise ValueError(
                    f"BS at {cfg.bs_position} does not see the whole UE region in its front half-plane"
                )

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def geometry(self, config: BsConfig) -> ArrayGeometry:
        return ArrayGeometry(self.n_ant, self.wavelength, bs_position=config.bs_position)

    def effective_noise_sigma(self) -> float:
        return default_noise_sigma(self) if self.noise_sigma is None else self.noise_sigma

    def to_dict(self) -> dict:
        return {
            "ue_region": list(self.ue_region),
            "bs_list": [
                {"position": list(c.bs_position), "bandwidth_hz": c.bandwidth_hz} for c in self.bs_list
            ],
            "scatterers": [list(map(float, s)) for s in self.scatterers],
            "n_paths_max": self.n_paths_max,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "n_ant": self.n_ant,
            "n_subc": self.n_subc,
            "carrier_hz": self.carrier_hz,
            "reflection_amplitude": self.reflection_amplitude,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {
            "ue_region", "bs_list", "scatterers", "n_paths_max", "noise_sigma",
            "seed", "n_ant", "n_subc", "carrier_hz", "reflection_amplitude",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        kw = dict(d)
        kw["bs_list"] = [
            BsConfig(tuple(b["position"]), float(b["bandwidth_hz"])) for b in d["bs_list"]
        ]
        kw["ue_region"] = tuple(d["ue_region"])
        kw["scatterers"] = [tuple(map(float, s)) for s in d.get("scatterers", [])]
        if kw.get("noise_sigma") == "auto":
            kw["noise_sigma"] = None
        return cls(**kw)


def load_scene(path: str | Path) -> SceneSpec:
    """Read a SceneSpec from a UTF-8 YAML file (keys as in :meth:`SceneSpec.to_dict`)."""
    with open(path, encoding="utf-8") as f:
        return SceneSpec.from_dict(yaml.safe_load(f))


def default_noise_sigma(scene: SceneSpec, snr_db: float = 20.0) -> float:
    """Noise std giving the requested per-entry LoS SNR at the region center.

    The distance is averaged over the scene's BSs.
    """
    x0, x1, y0, y1 = scene.ue_region
    center = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    dists = [np.linalg.norm(center - np.asarray(c.bs_position)) for c in scene.bs_list]
    amp = scene.wavelength / (4 * math.pi * float(np.mean(dists)))
    return amp / 10 ** (snr_db / 20)


def steering_vector(theta: float, geom: ArrayGeometry) -> np.ndarray:
    if not abs(theta) < math.pi / 2:
        raise ValueError(f"AoA must lie in (-pi/2, pi/2), got {theta}")
    n = np.arange(geom.n_ant)
    return np.exp(-2j * math.pi * (geom.spacing / geom.wavelength) * n * math.sin(theta))


def synthesize_cfr(
    paths: Sequence[MultipathComponent],
    config: BsConfig,
    geom: ArrayGeometry,
    n_subc: int,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Sum of path contributions over an ``n_ant x n_subc`` grid, plus AWGN."""
    if len(paths) == 0:
        raise ValueError("at least one multipath component is required")
    df = config.subcarrier_spacing(n_subc)
    k = np.arange(1, n_subc + 1)
    steer = np.stack([steering_vector(p.aoa, geom) for p in paths], axis=1)  # (A, L)
    gains = np.array([p.gain for p in paths], dtype=np.complex128)
    delays = np.array([p.delay for p in paths])
    freq = np.exp(-2j * math.pi * df * np.outer(delays, k))  # (L, K)
    cfr = (steer * gains) @ freq
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_sigma > 0")
        noise = rng.standard_normal(cfr.shape) + 1j * rng.standard_normal(cfr.shape)
        cfr = cfr + noise * (noise_sigma / math.sqrt(2))
    return cfr


def los_angle(ue_position, bs_position) -> float:
    """Geometric AoA: atan2(dx, dy), valid for UEs in front of the array."""
    dx = ue_position[0] - bs_position[0]
    dy = ue_position[1] - bs_position[1]
    return math.atan2(dx, dy)


def _scatter_paths(scene: SceneSpec, ue, bs, rng: np.random.Generator) -> list[MultipathComponent]:
    candidates = []
    for q in scene.scatterers:
        q = np.asarray(q, dtype=np.float64)
        if q[1] <= bs[1]:
            continue
        d1 = float(np.linalg.norm(q - bs))
        d2 = float(np.linalg.norm(ue - q))
        candidates.append((d1 + d2, los_angle(q, bs)))
    candidates.sort(key=lambda c: c[0])
    paths = []
    for length, theta in candidates[: scene.n_paths_max - 1]:
        amp = scene.reflection_amplitude * scene.wavelength / (4 * math.pi * length)
        phase = rng.uniform(0, 2 * math.pi)
        paths.append(MultipathComponent(amp * np.exp(1j * phase), length / SPEED_OF_LIGHT, theta))
    return paths


def generate_sample(
    scene: SceneSpec,
    ue_position,
    config: BsConfig,
    rng: np.random.Generator,
    location_id: int = 0,
) -> ChannelSample:
    ue = np.asarray(ue_position, dtype=np.float64)
    bs = np.asarray(config.bs_position, dtype=np.float64)
    x0, x1, y0, y1 = scene.ue_region
    if not (x0 <= ue[0] <= x1 and y0 <= ue[1] <= y1):
        raise ValueError(f"UE position {ue.tolist()} lies outside the scene region")
    if ue[1] - bs[1] <= 0:
        raise ValueError(f"UE position {ue.tolist()} is behind the array broadside of BS {bs.tolist()}")

    geom = scene.geometry(config)
    dist = float(np.linalg.norm(ue - bs))
    theta = los_angle(ue, bs)
    toa = dist / SPEED_OF_LIGHT
    los_amp = scene.wavelength / (4 * math.pi * dist)
    los_phase = rng.uniform(0, 2 * math.pi)
    paths = [MultipathComponent(los_amp * np.exp(1j * los_phase), toa, theta, is_los=True)]
    paths += _scatter_paths(scene, ue, bs, rng)

    cfr = synthesize_cfr(paths, config, geom, scene.n_subc, scene.effective_noise_sigma(), rng)
    return ChannelSample(
        cfr=cfr,
        ue_position=ue,
        config=config,
        toa_s=toa,
        aoa_rad=theta,
        los_flag=True,
        location_id=int(location_id),
    )


def location_position(scene: SceneSpec, location_id: int) -> np.ndarray:
    """UE position for a location, drawn uniformly in the region from its own stream."""
    rng = np.random.default_rng([scene.seed, _POSITION_STREAM, location_id])
    x0, x1, y0, y1 = scene.ue_region
    return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])


def generate_location(scene: SceneSpec, location_id: int) -> list[ChannelSample]:
    """All samples (one per BS configuration) for one UE location.

    Each (location, config) pair owns an RNG stream derived from the scene
    seed, so serial and parallel generation agree bit for bit.
    """
    ue = location_position(scene, location_id)
    out = []
    for ci, cfg in enumerate(scene.bs_list):
        rng = np.random.default_rng([scene.seed, _SAMPLE_STREAM, location_id, ci])
        out.append(generate_sample(scene, ue, cfg, rng, location_id))
    return out


def generate_scene(scene: SceneSpec, n_locations: int) -> list[ChannelSample]:
    samples = []
    for loc in range(n_locations):
        samples.extend(generate_location(scene, loc))
    return samples


def apply_pilot_comb(cfr: np.ndarray, n_pilot: int) -> np.ndarray:
    """Keep entries on every ``n_pilot``-th antenna AND subcarrier; zero the rest.

    Works on any array whose last two axes are (antenna, subcarrier).
    """
    if n_pilot < 1:
        raise ValueError("n_pilot must be >= 1")
    if n_pilot == 1:
        return cfr.copy()
    n_ant, n_subc = cfr.shape[-2:]
    keep = (np.arange(n_ant)[:, None] % n_pilot == 0) & (np.arange(n_subc)[None, :] % n_pilot == 0)
    return np.where(keep, cfr, 0)
