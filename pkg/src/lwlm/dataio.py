"""On-disk dataset container and batch samplers.

Layout of a dataset directory::

    meta.json    UTF-8 JSON header (version, n_samples, n_ant, n_subc, fields, extra)
    cfr.bin      [sample][ant][subc][re, im], little-endian float32, row-major
    labels.bin   per sample 9 little-endian float64 values, in LABEL_FIELDS order
    pairs.json   {location_id: [sample indices]}
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import BsConfig, ChannelSample

FORMAT_VERSION = 1
LABEL_FIELDS = (
    "ue_x", "ue_y", "bs_x", "bs_y", "bandwidth_hz", "toa_s", "aoa_rad", "los_flag", "location_id",
)
_L = {name: i for i, name in enumerate(LABEL_FIELDS)}
_CFR_DTYPE = np.dtype("<c8")
_LABEL_DTYPE = np.dtype("<f8")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


@dataclass
class Batch:
    """A vectorized view on a set of samples (CFRs plus label rows)."""

    indices: np.ndarray
    cfr: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def column(self, name: str) -> np.ndarray:
        return self.labels[:, _L[name]]

    @property
    def location_id(self) -> np.ndarray:
        return self.column("location_id").astype(np.int64)

    @property
    def ue_position(self) -> np.ndarray:
        return self.labels[:, [_L["ue_x"], _L["ue_y"]]]

    @property
    def bs_position(self) -> np.ndarray:
        return self.labels[:, [_L["bs_x"], _L["bs_y"]]]

    @property
    def config(self) -> np.ndarray:
        """Raw conditioning vectors [bs_x, bs_y, bandwidth_hz], shape (N, 3)."""
        return self.labels[:, [_L["bs_x"], _L["bs_y"], _L["bandwidth_hz"]]]

    @property
    def toa(self) -> np.ndarray:
        return self.column("toa_s")

    @property
    def aoa(self) -> np.ndarray:
        return self.column("aoa_rad")

    def samples(self) -> list[ChannelSample]:
        return [_row_to_sample(c, r) for c, r in zip(self.cfr, self.labels)]


def _row_to_sample(cfr: np.ndarray, row: np.ndarray) -> ChannelSample:
    return ChannelSample(
        cfr=np.array(cfr),
        ue_position=row[[_L["ue_x"], _L["ue_y"]]].copy(),
        config=BsConfig((row[_L["bs_x"]], row[_L["bs_y"]]), row[_L["bandwidth_hz"]]),
        toa_s=float(row[_L["toa_s"]]),
        aoa_rad=float(row[_L["aoa_rad"]]),
        los_flag=bool(row[_L["los_flag"]]),
        location_id=int(row[_L["location_id"]]),
    )


@dataclass
class DatasetContainer:
    meta: dict
    cfr: np.ndarray
    labels: np.ndarray
    pair_index: dict[int, list[int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.cfr.shape[0]

    @property
    def n_ant(self) -> int:
        return int(self.meta["n_ant"])

    @property
    def n_subc(self) -> int:
        return int(self.meta["n_subc"])

    def select(self, indices) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(idx, self.cfr[idx], self.labels[idx])

    def sample(self, i: int) -> ChannelSample:
        return _row_to_sample(self.cfr[i], self.labels[i])

    def all(self) -> Batch:
        return self.select(np.arange(len(self)))

    @property
    def location_ids(self) -> np.ndarray:
        return np.array(sorted(self.pair_index), dtype=np.int64)

    def bs_positions(self) -> list[tuple[float, float]]:
        """Distinct BS positions in order of first appearance."""
        seen: dict[tuple[float, float], None] = {}
        for x, y in self.labels[:, [_L["bs_x"], _L["bs_y"]]]:
            seen.setdefault((float(x), float(y)), None)
        return list(seen)

    def bs_index(self) -> np.ndarray:
        """Per-sample index into :meth:`bs_positions`."""
        lookup = {p: i for i, p in enumerate(self.bs_positions())}
        return np.array(
            [lookup[(float(x), float(y))] for x, y in self.labels[:, [_L["bs_x"], _L["bs_y"]]]],
            dtype=np.int64,
        )


def _pair_index(labels: np.ndarray) -> dict[int, list[int]]:
    index: dict[int, list[int]] = {}
    for i, loc in enumerate(labels[:, _L["location_id"]].astype(np.int64)):
        index.setdefault(int(loc), []).append(i)
    return index


def samples_to_arrays(samples: Sequence[ChannelSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, 0, 0), _CFR_DTYPE), np.zeros((0, len(LABEL_FIELDS)), _LABEL_DTYPE)
    shape = samples[0].cfr.shape
    for s in samples:
        if s.cfr.shape != shape:
            raise ValueError(f"mixed CFR shapes in dataset: {shape} vs {s.cfr.shape}")
    cfr = np.stack([s.cfr for s in samples]).astype(_CFR_DTYPE)
    labels = np.array(
        [
            [
                s.ue_position[0], s.ue_position[1], s.config.bs_position[0], s.config.bs_position[1],
                s.config.bandwidth_hz, s.toa_s, s.aoa_rad, float(s.los_flag), float(s.location_id),
            ]
            for s in samples
        ],
        dtype=_LABEL_DTYPE,
    )
    return cfr, labels


def write_dataset(
    samples: Sequence[ChannelSample],
    path: str | Path,
    extra: dict | None = None,
    n_ant: int | None = None,
    n_subc: int | None = None,
) -> DatasetContainer:
    """Serialize samples.  ``extra`` (JSON-able) is embedded in meta.json."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cfr, labels = samples_to_arrays(samples)
    if len(samples):
        n_ant, n_subc = cfr.shape[1:]
    meta = {
        "version": FORMAT_VERSION,
        "n_samples": len(samples),
        "n_ant": int(n_ant or 0),
        "n_subc": int(n_subc or 0),
        "fields": list(LABEL_FIELDS),
        "cfr_dtype": "complex64-le (float32 re, float32 im)",
        "label_dtype": "float64-le",
        "extra": extra or {},
    }
    pairs = _pair_index(labels)
    atomic_write_bytes(path / "cfr.bin", np.ascontiguousarray(cfr).tobytes())
    atomic_write_bytes(path / "labels.bin", np.ascontiguousarray(labels).tobytes())
    atomic_write_text(path / "pairs.json", json.dumps({str(k): v for k, v in pairs.items()}))
    atomic_write_text(path / "meta.json", json.dumps(meta, indent=2, sort_keys=True))
    return DatasetContainer(meta, cfr, labels, pairs)


def read_dataset(path: str | Path) -> DatasetContainer:
    path = Path(path)
    with open(path / "meta.json", encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {meta.get('version')}")
    n, a, k = meta["n_samples"], meta["n_ant"], meta["n_subc"]
    cfr = np.fromfile(path / "cfr.bin", dtype=_CFR_DTYPE)
    labels = np.fromfile(path / "labels.bin", dtype=_LABEL_DTYPE)
    if cfr.size != n * a * k or labels.size != n * len(LABEL_FIELDS):
        raise ValueError(f"dataset at {path} is truncated or inconsistent with meta.json")
    cfr = cfr.reshape(n, a, k)
    labels = labels.reshape(n, len(LABEL_FIELDS))
    with open(path / "pairs.json", encoding="utf-8") as f:
        pairs = {int(k): list(v) for k, v in json.load(f).items()}
    return DatasetContainer(meta, cfr, labels, pairs)


def sample_batch(ds: DatasetContainer, n_bat: int, rng: np.random.Generator, pool=None) -> Batch:
    """Uniform draw without replacement, optionally restricted to ``pool`` indices."""
    pool = np.arange(len(ds)) if pool is None else np.asarray(pool)
    if n_bat > len(pool):
        raise ValueError(f"batch of {n_bat} requested from {len(pool)} samples")
    return ds.select(pool[rng.choice(len(pool), size=n_bat, replace=False)])


def sample_positive_batch(ds: DatasetContainer, anchor: Batch, rng: np.random.Generator) -> Batch:
    """For each anchor, another sample of the same location (different config)."""
    picks = []
    for idx, loc in zip(anchor.indices, anchor.location_id):
        others = [j for j in ds.pair_index[int(loc)] if j != idx]
        if not others:
            raise ValueError(f"location_id {int(loc)} has a single sample; no positive available")
        picks.append(others[rng.integers(len(others))])
    return ds.select(picks)


@dataclass
class Normalizer:
    """Maps raw physical quantities to the network's working units.

    CFRs are divided by a dataset RMS amplitude, positions are moved to
    scene-local coordinates scaled to roughly unit range, bandwidth is
    expressed in units of 10 MHz and ToA in units of 1 / bandwidth.
    """

    cfr_scale: float = 1.0
    pos_center: tuple[float, float] = (0.0, 0.0)
    pos_scale: float = 1.0
    bw_unit: float = 10e6

    @classmethod
    def fit(cls, ds: DatasetContainer, indices=None) -> "Normalizer":
        b = ds.all() if indices is None else ds.select(indices)
        rms = float(np.sqrt(np.mean(np.abs(b.cfr.astype(np.complex128)) ** 2)))
        pts = np.concatenate([b.ue_position, b.bs_position])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        center = (lo + hi) / 2
        scale = float(max(np.max(hi - lo) / 2, 1e-9))
        return cls(rms if rms > 0 else 1.0, (float(center[0]), float(center[1])), scale)

    def cfr(self, cfr: np.ndarray) -> np.ndarray:
        return cfr / self.cfr_scale

    def config(self, cfg: np.ndarray) -> np.ndarray:
        cfg = np.asarray(cfg, dtype=np.float64)
        out = np.empty_like(cfg)
        out[..., :2] = (cfg[..., :2] - np.asarray(self.pos_center)) / self.pos_scale
        out[..., 2] = cfg[..., 2] / self.bw_unit
        return out

    def position(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p) - np.asarray(self.pos_center)) / self.pos_scale

    def position_inv(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p) * self.pos_scale + np.asarray(self.pos_center)

    def to_dict(self) -> dict:
        return {
            "cfr_scale": self.cfr_scale,
            "pos_center": list(self.pos_center),
            "pos_scale": self.pos_scale,
            "bw_unit": self.bw_unit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["cfr_scale"], tuple(d["pos_center"]), d["pos_scale"], d["bw_unit"])
