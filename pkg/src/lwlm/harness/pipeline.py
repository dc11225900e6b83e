"""Command pipelines: generate, pretrain, finetune, evaluate, omp, iblab.

Every artifact written here carries the run configuration and root seed.
All randomness is drawn from named substreams of the root seed.

Artifacts under ``cfg.out``:

    dataset/                      see lwlm.dataio
    pretrain_loss.csv             step,sfmcm,dti,picl,total
    pretrain.pt                   encoder + pretraining decoders, optimizer, normalizer
    finetune_<task>.pt            encoder + task decoder, normalizer, split
    finetune_<task>_log.csv       step,train_loss,val_metric
    predictions_<task>.csv        scalar: sample_id,prediction,label,error
                                  position: sample_id,pred_x,pred_y,label_x,label_y,error
    report_<task>.json            ErrorReport summary plus baselines
    cdf_<task>.csv                error,cdf
    omp_report.json, iblab.json
"""

from __future__ import annotations

import copy
import io
import json
import math
import time
import zlib
from pathlib import Path

import numpy as np
import torch

from .. import iblab
from ..baseline_omp import build_dictionary, first_arrival, localize_from_toa_aoa, omp_estimate
from ..channel import SceneSpec, apply_pilot_comb, generate_scene
from ..dataio import (
    Batch, DatasetContainer, Normalizer, atomic_write_bytes, atomic_write_text, read_dataset,
    sample_positive_batch, write_dataset,
)
from ..downstream import MultiBsDecoder, MultiBsModel, SingleTaskModel, TaskDecoder, euclid_loss, mae_loss
from ..encoder import EncoderConfig, LWLMEncoder
from ..ssl import PretrainModel, PretrainWeights, make_mask, pretrain_step, stack_masks
from .config import SCHEMA_VERSION, RunConfig
from .metrics import ErrorReport, cdf_csv
from .splits import Split, label_budget_split

# ---------------------------------------------------------------------------
# randomness and persistence
# ---------------------------------------------------------------------------


def rng_for(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named substream of the root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def torch_seed(seed: int, name: str) -> int:
    return int(rng_for(seed, name).integers(2**62))


def save_checkpoint(path: str | Path, payload: dict) -> None:
    buf = io.BytesIO()
    torch.save(payload, buf)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    return torch.load(path, map_location="cpu", weights_only=True)


def _stamp(cfg: RunConfig) -> dict:
    return {"schema_version": SCHEMA_VERSION, "seed": cfg.seed, "config": cfg.to_dict()}


def write_json(path: str | Path, obj: dict) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: str | Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(repr(v) if isinstance(v, float) else str(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def run_generate(cfg: RunConfig) -> dict:
    scene = cfg.scene_spec()
    _check_shapes(cfg.model, scene.n_ant, scene.n_subc)
    samples = generate_scene(scene, cfg.n_locations)
    extra = {**_stamp(cfg), "scene": scene.to_dict(), "noise_sigma": scene.effective_noise_sigma()}
    write_dataset(samples, cfg.dataset_dir, extra=extra, n_ant=scene.n_ant, n_subc=scene.n_subc)
    return {"dataset": str(cfg.dataset_dir), "n_samples": len(samples), "n_locations": cfg.n_locations}


def _check_shapes(model: EncoderConfig, n_ant: int, n_subc: int) -> None:
    if (model.n_ant, model.n_subc) != (n_ant, n_subc):
        raise ValueError(
            f"model expects {model.n_ant}x{model.n_subc} CFRs but the data is {n_ant}x{n_subc}"
        )


def load_data(cfg: RunConfig) -> DatasetContainer:
    if not (cfg.dataset_dir / "meta.json").exists():
        raise FileNotFoundError(f"no dataset at {cfg.dataset_dir}; run `lwlm generate` first")
    ds = read_dataset(cfg.dataset_dir)
    _check_shapes(cfg.model, ds.n_ant, ds.n_subc)
    if cfg.n_pilot > 1:
        ds.cfr = apply_pilot_comb(ds.cfr, cfg.n_pilot)
    return ds


def scene_of(ds: DatasetContainer) -> SceneSpec:
    return SceneSpec.from_dict(ds.meta["extra"]["scene"])


def data_split(cfg: RunConfig, ds: DatasetContainer) -> Split:
    return label_budget_split(ds, cfg.label_budget, rng_for(cfg.seed, "split"), cfg.n_val, cfg.n_test)


def location_samples(ds: DatasetContainer, locations, bs_index: int | None = None) -> np.ndarray:
    """Sample indices of the given locations, optionally restricted to one BS."""
    idx = np.concatenate([ds.pair_index[int(l)] for l in locations]) if len(locations) else np.zeros(0)
    idx = np.sort(idx.astype(np.int64))
    if bs_index is not None:
        idx = idx[ds.bs_index()[idx] == bs_index]
    return idx


def to_tensors(batch: Batch, norm: Normalizer) -> tuple[torch.Tensor, torch.Tensor]:
    cfr = torch.from_numpy(np.ascontiguousarray(norm.cfr(batch.cfr)).astype(np.complex64))
    cfg = torch.from_numpy(norm.config(batch.config).astype(np.float32))
    return cfr, cfg


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


def sample_anchor_batch(ds: DatasetContainer, locations: np.ndarray, n_bat: int,
                        rng: np.random.Generator) -> Batch:
    """One anchor sample from each of ``n_bat`` distinct locations.

    Distinct locations keep every off-diagonal pair a true negative.
    """
    if n_bat > len(locations):
        raise ValueError(f"batch of {n_bat} needs at least that many locations, have {len(locations)}")
    locs = locations[rng.choice(len(locations), size=n_bat, replace=False)]
    idx = [ds.pair_index[int(l)][rng.integers(len(ds.pair_index[int(l)]))] for l in locs]
    return ds.select(idx)


def build_pretrain_model(cfg: RunConfig) -> PretrainModel:
    torch.manual_seed(torch_seed(cfg.seed, "init"))
    return PretrainModel(cfg.model, cfg.n_dec, cfg.n_picl_out)


def run_pretrain(cfg: RunConfig, ds: DatasetContainer | None = None) -> dict:
    ds = ds if ds is not None else load_data(cfg)
    split = data_split(cfg, ds)
    # unlabeled pretraining never sees test locations
    locations = np.array(
        [l for l in np.concatenate([split.train, split.val]) if len(ds.pair_index[int(l)]) > 1],
        dtype=np.int64,
    )
    norm = Normalizer.fit(ds, location_samples(ds, locations))
    model = build_pretrain_model(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    hp = PretrainWeights(*cfg.alpha, tau=cfg.tau)
    rng_batch, rng_mask = rng_for(cfg.seed, "batch"), rng_for(cfg.seed, "mask")
    torch.manual_seed(torch_seed(cfg.seed, "dropout"))
    c = cfg.model
    rows = []
    t0 = time.perf_counter()
    for step in range(1, cfg.pretrain_steps + 1):
        b1 = sample_anchor_batch(ds, locations, cfg.batch_size, rng_batch)
        b2 = sample_positive_batch(ds, b1, rng_batch)
        h1, c1 = to_tensors(b1, norm)
        h2, c2 = to_tensors(b2, norm)
        masks = [make_mask(c.n_ant, c.n_subc, cfg.n_hat_ant, cfg.n_hat_subc, rng_mask) for _ in range(len(b1))]
        log = pretrain_step(model, opt, h1, h2, c1, c2, stack_masks(masks), hp, cfg.target_region,
                            cfg.grad_clip)
        if step % cfg.log_every == 0 or step == 1 or step == cfg.pretrain_steps:
            rows.append([step, log["sfmcm"], log["dti"], log["picl"], log["total"]])
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "pretrain_loss.csv", ["step", "sfmcm", "dti", "picl", "total"], rows)
    save_checkpoint(out / "pretrain.pt", {
        **_stamp(cfg),
        "kind": "pretrain",
        "step": cfg.pretrain_steps,
        "encoder_config": c.to_dict(),
        "state_dict": model.state_dict(),
        "optimizer": opt.state_dict(),
        "normalizer": norm.to_dict(),
    })
    return {
        "steps": cfg.pretrain_steps,
        "first_total": rows[0][4] if rows else None,
        "last_total": rows[-1][4] if rows else None,
        "seconds": time.perf_counter() - t0,
        "checkpoint": str(out / "pretrain.pt"),
    }


# ---------------------------------------------------------------------------
# fine-tuning and evaluation
# ---------------------------------------------------------------------------


class TaskData:
    """Inputs and normalized targets of one split for one task."""

    def __init__(self, ds: DatasetContainer, locations, task: str, norm: Normalizer, bs_index: int | None):
        self.task = task
        if task == "mbloc":
            n_bs = len(ds.bs_positions())
            bs_of = ds.bs_index()
            rows, ids = [], []
            for l in locations:
                idx = ds.pair_index[int(l)]
                by_bs = {int(bs_of[i]): i for i in idx}
                if len(by_bs) == n_bs:
                    rows.append([by_bs[b] for b in range(n_bs)])
                    ids.append(int(l))
            self.index = np.array(rows, dtype=np.int64).reshape(-1, n_bs)
            self.ids = np.array(ids, dtype=np.int64)
            flat = ds.select(self.index.ravel())
            cfr, cfg = to_tensors(flat, norm)
            self.cfr = cfr.reshape(len(ids), n_bs, *cfr.shape[1:])
            self.config = cfg.reshape(len(ids), n_bs, 3)
            self.raw = flat.ue_position[::n_bs]
        else:
            self.index = location_samples(ds, locations, bs_index)
            self.ids = self.index
            b = ds.select(self.index)
            self.cfr, self.config = to_tensors(b, norm)
            if task == "toa":
                self.raw = b.toa
                target = b.toa * b.config[:, 2]
            elif task == "aoa":
                self.raw = b.aoa
                target = b.aoa
            else:
                self.raw = b.ue_position
            if task in ("toa", "aoa"):
                self.target = torch.from_numpy(target.astype(np.float32)).unsqueeze(-1)
                self.bandwidth = b.config[:, 2]
        if task in ("sbloc", "mbloc"):
            self.target = torch.from_numpy(norm.position(self.raw).astype(np.float32))
        if len(self.ids) == 0:
            raise ValueError(f"no usable samples for task {task!r} in this split")

    def __len__(self) -> int:
        return len(self.ids)


def build_task_model(cfg: RunConfig, n_bs: int):
    torch.manual_seed(torch_seed(cfg.seed, "finetune-init"))
    encoder = LWLMEncoder(cfg.model)
    n_latent = cfg.model.n_latent
    if cfg.task == "mbloc":
        return MultiBsModel(encoder, MultiBsDecoder(n_bs, n_latent, cfg.hidden, cfg.attn_hidden))
    return SingleTaskModel(encoder, TaskDecoder(n_latent, cfg.hidden, 2 if cfg.task == "sbloc" else 1))


def _forward(model, task: str, cfr, config):
    if task == "mbloc":
        return model(cfr, config)[0]
    return model(cfr, config)


def _loss(task: str, pred, target):
    return euclid_loss(pred, target) if task in ("sbloc", "mbloc") else mae_loss(pred, target)


def predict(model, data: TaskData, batch: int = 256) -> torch.Tensor:
    was = model.training
    model.eval()
    outs = []
    with torch.no_grad():
        for s in range(0, len(data), batch):
            outs.append(_forward(model, data.task, data.cfr[s:s + batch], data.config[s:s + batch]))
    model.train(was)
    return torch.cat(outs)


def physical_errors(pred: torch.Tensor, data: TaskData, norm: Normalizer):
    """Predictions, labels and absolute errors in physical units (s, rad, m)."""
    p = pred.double().numpy()
    if data.task == "toa":
        est = p[:, 0] / data.bandwidth
        return est, data.raw, np.abs(est - data.raw)
    if data.task == "aoa":
        return p[:, 0], data.raw, np.abs(p[:, 0] - data.raw)
    est = norm.position_inv(p)
    return est, data.raw, np.linalg.norm(est - data.raw, axis=1)


def load_pretrained_encoder(encoder: LWLMEncoder, path: str | Path) -> Normalizer:
    ckpt = load_checkpoint(path)
    if EncoderConfig.from_dict(ckpt["encoder_config"]) != encoder.config:
        raise ValueError("pretrained checkpoint was trained with a different encoder configuration")
    prefix = "encoder."
    state = {k[len(prefix):]: v for k, v in ckpt["state_dict"].items() if k.startswith(prefix)}
    encoder.load_state_dict(state)
    return Normalizer.from_dict(ckpt["normalizer"])


def _units(task: str) -> str:
    return {"toa": "s", "aoa": "rad"}.get(task, "m")


def run_finetune(cfg: RunConfig, ds: DatasetContainer | None = None) -> dict:
    ds = ds if ds is not None else load_data(cfg)
    split = data_split(cfg, ds)
    n_bs = len(ds.bs_positions())
    model = build_task_model(cfg, n_bs)
    if cfg.pretrained:
        norm = load_pretrained_encoder(model.encoder, cfg.pretrained)
    else:
        norm = Normalizer.fit(ds, location_samples(ds, split.train))
    bs_index = None if cfg.task == "mbloc" else cfg.bs_index
    train = TaskData(ds, split.train, cfg.task, norm, bs_index)
    val = TaskData(ds, split.val, cfg.task, norm, bs_index) if len(split.val) else None

    params = list(model.parameters())
    opt = torch.optim.Adam(params, lr=cfg.finetune_lr)
    rng = rng_for(cfg.seed, "finetune-batch")
    torch.manual_seed(torch_seed(cfg.seed, "finetune-dropout"))
    n_bat = min(cfg.finetune_batch, len(train))
    best, best_state, log = math.inf, None, []
    frozen_from = cfg.finetune_steps // 2 if cfg.task == "mbloc" and cfg.mbloc_schedule == "frozen_heads" else None
    t0 = time.perf_counter()
    for step in range(1, cfg.finetune_steps + 1):
        if frozen_from is not None and step == frozen_from + 1:
            # stage two: only the attention map keeps learning
            for p in params:
                p.requires_grad_(False)
            for p in model.decoder.attn_mlp.parameters():
                p.requires_grad_(True)
            opt = torch.optim.Adam(model.decoder.attn_mlp.parameters(), lr=cfg.finetune_lr)
        model.train()
        sel = rng.choice(len(train), size=n_bat, replace=False)
        if frozen_from is not None and step <= frozen_from:
            _, _, per_bs = model(train.cfr[sel], train.config[sel])
            loss = euclid_loss(per_bs.flatten(0, 1), train.target[sel].repeat_interleave(per_bs.shape[1], 0))
        else:
            loss = _loss(cfg.task, _forward(model, cfg.task, train.cfr[sel], train.config[sel]), train.target[sel])
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite fine-tuning loss at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if val is not None and (step % cfg.eval_every == 0 or step == cfg.finetune_steps):
            metric = float(physical_errors(predict(model, val), val, norm)[2].mean())
            log.append([step, float(loss.detach()), metric])
            if metric < best:
                best, best_state = metric, copy.deepcopy(model.state_dict())
    if best_state is not None:
        model.load_state_dict(best_state)
    for p in params:
        p.requires_grad_(True)

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"finetune_{cfg.task}_log.csv", ["step", "train_loss", "val_metric"], log)
    ckpt_path = out / f"finetune_{cfg.task}.pt"
    save_checkpoint(ckpt_path, {
        **_stamp(cfg),
        "kind": "finetune",
        "task": cfg.task,
        "n_bs": n_bs,
        "encoder_config": cfg.model.to_dict(),
        "state_dict": model.state_dict(),
        "normalizer": norm.to_dict(),
        "split": {k: v.tolist() for k, v in split._asdict().items()},
        "best_val": best if math.isfinite(best) else None,
    })
    result = evaluate_model(cfg, model, ds, split, norm)
    result.update(checkpoint=str(ckpt_path), seconds=time.perf_counter() - t0,
                  best_val=best if math.isfinite(best) else None)
    return result


def centroid_errors(ds: DatasetContainer, data: TaskData) -> np.ndarray:
    x0, x1, y0, y1 = scene_of(ds).ue_region
    return np.linalg.norm(data.raw - np.array([(x0 + x1) / 2, (y0 + y1) / 2]), axis=1)


def evaluate_model(cfg: RunConfig, model, ds: DatasetContainer, split: Split, norm: Normalizer) -> dict:
    bs_index = None if cfg.task == "mbloc" else cfg.bs_index
    test = TaskData(ds, split.test, cfg.task, norm, bs_index)
    est, label, err = physical_errors(predict(model, test), test, norm)
    report = ErrorReport.from_errors(err, _units(cfg.task))
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if cfg.task in ("sbloc", "mbloc"):
        rows = [[int(i), *map(float, e), *map(float, l), float(x)] for i, e, l, x in zip(test.ids, est, label, err)]
        header = ["sample_id", "pred_x", "pred_y", "label_x", "label_y", "error"]
    else:
        rows = [[int(i), float(e), float(l), float(x)] for i, e, l, x in zip(test.ids, est, label, err)]
        header = ["sample_id", "prediction", "label", "error"]
    write_csv(out / f"predictions_{cfg.task}.csv", header, rows)
    atomic_write_text(out / f"cdf_{cfg.task}.csv", cdf_csv(err))
    summary = {**_stamp(cfg), "task": cfg.task, "test": report.summary()}
    if cfg.task in ("sbloc", "mbloc"):
        summary["centroid"] = ErrorReport.from_errors(centroid_errors(ds, test), "m").summary()
    write_json(out / f"report_{cfg.task}.json", summary)
    return {"report": report, "summary": summary, "predictions": est}


def run_evaluate(cfg: RunConfig) -> dict:
    path = Path(cfg.checkpoint) if cfg.checkpoint else cfg.out_dir / f"finetune_{cfg.task}.pt"
    ckpt = load_checkpoint(path)
    if ckpt.get("kind") != "finetune":
        raise ValueError(f"{path} is not a fine-tuning checkpoint")
    run_cfg = RunConfig.from_dict({**ckpt["config"], "command": "evaluate", "out": cfg.out,
                                   "dataset": cfg.dataset or ckpt["config"].get("dataset"),
                                   "n_pilot": cfg.n_pilot})
    if run_cfg.dataset is None:
        run_cfg = run_cfg.replace(dataset=str(Path(ckpt["config"]["out"]) / "dataset"))
    ds = load_data(run_cfg)
    model = build_task_model(run_cfg, ckpt["n_bs"])
    model.load_state_dict(ckpt["state_dict"])
    split = Split(*(np.asarray(ckpt["split"][k], dtype=np.int64) for k in ("train", "val", "test")))
    return evaluate_model(run_cfg, model, ds, split, Normalizer.from_dict(ckpt["normalizer"]))


# ---------------------------------------------------------------------------
# baselines and the information-bound lab
# ---------------------------------------------------------------------------


def run_omp(cfg: RunConfig, ds: DatasetContainer | None = None) -> dict:
    """OMP + geometric inversion on the test split for every task."""
    ds = ds if ds is not None else load_data(cfg)
    scene = scene_of(ds)
    split = data_split(cfg, ds)
    idx = location_samples(ds, split.test)
    bs_of = ds.bs_index()
    dicts, pos = {}, {}
    toa_err, aoa_err, sb_err = [], [], []
    for i in idx:
        s = ds.sample(int(i))
        key = (s.config.bs_position, s.config.bandwidth_hz)
        geom = scene.geometry(s.config)
        if key not in dicts:
            dicts[key] = build_dictionary(geom, s.config, ds.n_subc, g_theta=cfg.omp_g_theta)
        los = first_arrival(omp_estimate(s.cfr, dicts[key], cfg.omp_k_paths))
        d = dicts[key]
        tau = los.tau if los.tau > 0 else float(d.delay_grid[1]) / 2
        p = localize_from_toa_aoa(los.theta, tau, geom)
        pos.setdefault(s.location_id, []).append(p)
        toa_err.append(abs(los.tau - s.toa_s))
        aoa_err.append(abs(los.theta - s.aoa_rad))
        if cfg.bs_index is None or bs_of[i] == cfg.bs_index:
            sb_err.append(float(np.linalg.norm(p - s.ue_position)))
    truth = {int(l): ds.sample(ds.pair_index[int(l)][0]).ue_position for l in split.test}
    mb_err = [float(np.linalg.norm(np.mean(v, axis=0) - truth[l])) for l, v in pos.items()]
    summary = {
        **_stamp(cfg),
        "toa": ErrorReport.from_errors(toa_err, "s").summary(),
        "aoa": ErrorReport.from_errors(aoa_err, "rad").summary(),
        "sbloc": ErrorReport.from_errors(sb_err, "m").summary(),
        "mbloc": ErrorReport.from_errors(mb_err, "m").summary(),
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out_dir / "omp_report.json", summary)
    return summary


def run_iblab(cfg: RunConfig) -> dict:
    rng = rng_for(cfg.seed, "iblab")
    worlds = []
    for w in range(cfg.iblab_worlds):
        world = iblab.random_world(rng)
        n_bat = int(rng.choice([2, 4, 8, 16]))
        tau = float(rng.choice([0.05, 0.1, 0.5, 1.0]))
        rep = iblab.verify_bound(world, n_bat, tau, cfg.iblab_trials, rng)
        worlds.append({"world": w, "n_labels": world.n_labels, "n_obs": world.n_obs, **rep})
    summary = {**_stamp(cfg), "n_worlds": len(worlds), "all_hold": all(r["holds"] for r in worlds),
               "worlds": worlds}
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out_dir / "iblab.json", summary)
    return summary


def run(cfg: RunConfig) -> dict:
    handlers = {
        "generate": run_generate,
        "pretrain": run_pretrain,
        "finetune": run_finetune,
        "evaluate": run_evaluate,
        "omp": run_omp,
        "iblab": run_iblab,
    }
    return handlers[cfg.command](cfg)
