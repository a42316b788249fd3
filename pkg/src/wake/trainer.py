"""Single-stage joint training of the backbone and experts.

One backbone forward per sample feeds every enabled head; each head draws
its own flow time per sample, evaluates its denoiser, and contributes a
velocity-regression loss. The total is the lambda-weighted sum, optimized
with a decoupled-weight-decay adaptive-moment update. All randomness is
derived from (seed, step), so resuming from a checkpoint reproduces an
uninterrupted run bitwise.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, build_model_config, parse_config_text, to_text
from .episodes import EpisodeRecord
from .experts import DepthNormParams, normalize_depth
from .experts.action import scale_states
from .experts.depth import aggregate_norm_params
from .flowmatch import fm_loss
from .metrics import evaluate_split, future_ground_truth
from .model import WorldActionModel
from .tensor import NumericError, ParamStore, Tensor, backward, rng_for

CHECKPOINT_MAGIC = b"WACK"
CHECKPOINT_VERSION = 1


@dataclass
class LossReport:
    step: int
    loss_depth: float
    loss_video: float
    loss_action: float
    loss_total: float

    def line(self) -> str:
        return (f"step={self.step} Ld={self.loss_depth:.6f} Lv={self.loss_video:.6f} "
                f"La={self.loss_action:.6f} Ltotal={self.loss_total:.6f}")


class AdamW:
    """Decoupled weight-decay adaptive-moment optimizer."""

    def __init__(self, params: ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, weight_decay: float = 0.0, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        bias1 = np.float32(1.0 - self.beta1 ** self.t)
        bias2 = np.float32(1.0 - self.beta2 ** self.t)
        lr = np.float32(self.lr)
        wd = np.float32(self.weight_decay)
        eps = np.float32(self.eps)
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            if not (g.any() or v.any()):
                continue  # disabled-head parameters stay frozen, decay included
            m *= b1
            m += (np.float32(1.0) - b1) * g
            v *= b2
            v += (np.float32(1.0) - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * p.data)


@dataclass
class BatchArrays:
    """Stacked episode fields plus cached per-head targets."""

    instruction_ids: np.ndarray
    frames: np.ndarray
    action_ctx: np.ndarray
    front_frames: np.ndarray
    depth_normalized: np.ndarray
    expert_states: np.ndarray
    future_frames: np.ndarray | None


class Trainer:
    """Owns the model, optimizer, target caches, and the step loop."""

    def __init__(self, cfg: RunConfig, records: list[EpisodeRecord],
                 model: WorldActionModel | None = None):
        if not records:
            raise ValueError("training dataset is empty")
        self.cfg = cfg
        self.records = records
        self.heads = cfg.train.head_set()
        self.model = model or WorldActionModel(build_model_config(cfg), seed=cfg.train.seed)
        self.optimizer = AdamW(self.model.store, lr=cfg.train.lr, beta1=cfg.train.beta1,
                               beta2=cfg.train.beta2, weight_decay=cfg.train.weight_decay)
        self._norm_cache: list[np.ndarray] = []
        self._future_cache: dict[int, np.ndarray] = {}
        self._prepare_depth_targets()

    # -- target preparation ------------------------------------------------

    def _prepare_depth_targets(self) -> None:
        per_map: list[DepthNormParams] = []
        for rec in self.records:
            normalized, params = normalize_depth(rec.depth)
            self._norm_cache.append(normalized)
            per_map.append(params)
        if self.model.depth_norm is None:
            self.model.depth_norm = aggregate_norm_params(per_map)

    def _future_frames(self, idx: int) -> np.ndarray:
        cached = self._future_cache.get(idx)
        if cached is None:
            cached = future_ground_truth(self.records[idx],
                                         self.cfg.model.video_horizon, self.cfg.world)
            self._future_cache[idx] = cached
        return cached

    def _front(self, rec: EpisodeRecord) -> np.ndarray:
        v = rec.frames.shape[0]
        return rec.frames[v // 2 if v > 1 else 0]

    def _gather(self, indices: np.ndarray) -> BatchArrays:
        recs = [self.records[i] for i in indices]
        future = None
        if "video" in self.heads:
            future = np.stack([self._future_frames(int(i)) for i in indices], axis=0)
        return BatchArrays(
            instruction_ids=np.array([r.instruction_id for r in recs], dtype=np.int64),
            frames=np.stack([r.frames for r in recs], axis=0),
            action_ctx=np.stack([r.action_context for r in recs], axis=0),
            front_frames=np.stack([self._front(r) for r in recs], axis=0),
            depth_normalized=np.stack([self._norm_cache[int(i)] for i in indices], axis=0),
            expert_states=np.stack([r.expert_traj.states for r in recs], axis=0),
            future_frames=future,
        )

    # -- batch order -----------------------------------------------------------

    def batch_indices(self, step: int) -> np.ndarray:
        """Seeded shuffle per epoch; a batch may wrap into the next epoch."""
        n = len(self.records)
        b = self.cfg.train.batch_size
        start = step * b
        out = []
        while len(out) < b:
            epoch, offset = divmod(start + len(out), n)
            perm = rng_for(self.cfg.train.seed, "batch-order", epoch).permutation(n)
            take = min(b - len(out), n - offset)
            out.extend(perm[offset: offset + take])
        return np.asarray(out[:b])

    # -- one optimization step ----------------------------------------------------

    def training_step(self, indices: np.ndarray, step: int) -> LossReport:
        cfg = self.cfg
        batch = self._gather(indices)
        b = len(indices)
        seed = cfg.train.seed

        emb = self.model.world_embeddings(batch.instruction_ids, batch.frames,
                                          batch.action_ctx)
        if cfg.train.stop_gradient_queries:
            emb_d, emb_v, emb_a = (emb.depth_emb.detach(), emb.video_emb.detach(),
                                   emb.action_emb.detach())
        else:
            emb_d, emb_v, emb_a = emb.depth_emb, emb.video_emb, emb.action_emb

        zero = Tensor(np.float32(0.0))
        loss_d = loss_v = loss_a = zero
        if "depth" in self.heads:
            loss_d = self._depth_loss(batch, emb_d, seed, step)
        if "video" in self.heads:
            loss_v = self._video_loss(batch, emb_v, seed, step)
        if "action" in self.heads:
            loss_a = self._action_loss(batch, emb_a, seed, step)

        for name, value in (("depth", loss_d), ("video", loss_v), ("action", loss_a)):
            if not np.isfinite(value.data).all():
                raise NumericError(f"non-finite {name} loss at step {step}")

        total = (loss_d * cfg.train.lambda_d + loss_v * cfg.train.lambda_v
                 + loss_a * cfg.train.lambda_a)
        self.model.store.zero_grad()
        backward(total, self.model.store)
        self.optimizer.step()
        return LossReport(step=step,
                          loss_depth=loss_d.item(), loss_video=loss_v.item(),
                          loss_action=loss_a.item(), loss_total=total.item())

    def _flow_pair(self, x0: np.ndarray, head: str, seed: int, step: int):
        b = x0.shape[0]
        t = rng_for(seed, "flow-t", head, step).uniform(0.0, 1.0, size=b).astype(np.float32)
        x1 = rng_for(seed, "flow-noise", head, step).standard_normal(x0.shape).astype(np.float32)
        t_full = t.reshape((b,) + (1,) * (x0.ndim - 1))
        xt = (1.0 - t_full) * x0 + t_full * x1
        return xt.astype(np.float32), (x1 - x0).astype(np.float32), t

    def _depth_loss(self, batch: BatchArrays, cond, seed: int, step: int) -> Tensor:
        xt, v_target, t = self._flow_pair(batch.depth_normalized, "depth", seed, step)
        v_pred = self.model.depth_expert.denoise(xt, batch.front_frames, t, cond)
        return fm_loss(v_pred, v_target)

    def _video_loss(self, batch: BatchArrays, cond_emb, seed: int, step: int) -> Tensor:
        video = self.model.video_expert
        b, horizon = batch.future_frames.shape[:2]
        flat = batch.future_frames.reshape((-1,) + batch.future_frames.shape[2:])
        latents = video.ae.encode(flat).data.reshape(
            b, horizon, video.cfg.lat_h, video.cfg.lat_w, video.cfg.c_lat)
        current_latent = video.ae.encode(batch.front_frames).data
        residuals = latents - current_latent[:, None]
        xt, v_target, t = self._flow_pair(residuals, "video", seed, step)
        cond = video.condition_rows(cond_emb, batch.front_frames)
        v_pred = video.denoise(xt, current_latent, t, cond)
        recon = video.ae.reconstruction_loss(batch.front_frames)
        return fm_loss(v_pred, v_target) + recon

    def _action_loss(self, batch: BatchArrays, cond, seed: int, step: int) -> Tensor:
        x0 = scale_states(batch.expert_states)
        xt, v_target, t = self._flow_pair(x0, "action", seed, step)
        v_pred = self.model.action_expert.denoise(xt, t, cond)
        return fm_loss(v_pred, v_target)


def train(cfg: RunConfig, records: list[EpisodeRecord], out_dir: str | None = None,
          resume: str | None = None,
          log_hook=None) -> tuple[WorldActionModel, list[LossReport]]:
    """Run the optimization loop; optionally checkpoint periodically.

    Returns the trained model and the per-step loss log. ``resume`` picks up
    parameters, optimizer moments, and the step counter from a checkpoint.
    """
    trainer = Trainer(cfg, records)
    start_step = 0
    if resume:
        model, _, opt_state, start_step = load_checkpoint(resume)
        trainer.model = model
        trainer.optimizer = AdamW(model.store, lr=cfg.train.lr, beta1=cfg.train.beta1,
                                  beta2=cfg.train.beta2,
                                  weight_decay=cfg.train.weight_decay)
        trainer.optimizer.t = start_step
        for name in trainer.optimizer.m:
            if f"opt.m.{name}" in opt_state:
                trainer.optimizer.m[name] = opt_state[f"opt.m.{name}"]
                trainer.optimizer.v[name] = opt_state[f"opt.v.{name}"]

    reports: list[LossReport] = []
    for step in range(start_step, cfg.train.steps):
        report = trainer.training_step(trainer.batch_indices(step), step)
        reports.append(report)
        if log_hook:
            log_hook(report)
        if out_dir and cfg.train.checkpoint_every > 0 and (step + 1) % cfg.train.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_{step + 1:06d}.wack"),
                            trainer.model, cfg, trainer.optimizer, step + 1)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "checkpoint_final.wack"),
                        trainer.model, cfg, trainer.optimizer, cfg.train.steps)
        write_loss_log(os.path.join(out_dir, "train_log.txt"), reports)
    return trainer.model, reports


def write_loss_log(path: str, reports: list[LossReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(report.line() + "\n")


# -- checkpoint format ---------------------------------------------------------------


def _write_section(buf, name: str, arr: np.ndarray) -> None:
    encoded = name.encode()
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_section(buf) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", buf.read(2))
    name = buf.read(name_len).decode()
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(buf.read(4 * count), dtype="<f4").reshape(shape).copy()
    return name, data


def save_checkpoint(path: str, model: WorldActionModel, cfg: RunConfig,
                    optimizer: AdamW | None, step: int) -> None:
    """Magic, version, resolved config text, depth-norm params, step/seed,
    then named float32 sections for parameters and optimizer moments."""
    norm = model.depth_norm
    blob = to_text(cfg).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        has_norm = norm is not None
        if has_norm:
            fh.write(struct.pack("<Bffff B", 1, norm.log_lo, norm.log_hi,
                                 norm.p_low, norm.p_high, int(norm.degenerate)))
        else:
            fh.write(struct.pack("<Bffff B", 0, 0.0, 0.0, 0.0, 0.0, 0))
        fh.write(struct.pack("<QQ", step, cfg.train.seed & 0xFFFFFFFFFFFFFFFF))
        sections = io.BytesIO()
        count = 0
        for name, p in model.store.items():
            _write_section(sections, name, p.data)
            count += 1
        if optimizer is not None:
            for name in optimizer.m:
                _write_section(sections, f"opt.m.{name}", optimizer.m[name])
                _write_section(sections, f"opt.v.{name}", optimizer.v[name])
                count += 2
        fh.write(struct.pack("<I", count))
        fh.write(sections.getvalue())


def load_checkpoint(path: str) -> tuple[WorldActionModel, RunConfig, dict, int]:
    """Rebuild the model from the stored config and overwrite its parameters."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise IOError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise IOError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        cfg = parse_config_text(fh.read(blob_len).decode())
        has_norm, log_lo, log_hi, p_low, p_high, degenerate = struct.unpack(
            "<Bffff B", fh.read(18))
        step, seed = struct.unpack("<QQ", fh.read(16))
        (count,) = struct.unpack("<I", fh.read(4))
        sections = {}
        for _ in range(count):
            name, data = _read_section(fh)
            sections[name] = data
    model = WorldActionModel(build_model_config(cfg), seed=int(seed))
    if has_norm:
        model.depth_norm = DepthNormParams(log_lo=log_lo, log_hi=log_hi, p_low=p_low,
                                           p_high=p_high, degenerate=bool(degenerate))
    opt_state = {}
    for name, data in sections.items():
        if name.startswith("opt."):
            opt_state[name] = data
        else:
            if name not in model.store.params:
                raise IOError(f"checkpoint parameter {name} not in model")
            if model.store[name].shape != data.shape:
                raise IOError(f"checkpoint parameter {name} has shape {data.shape}, "
                              f"model expects {model.store[name].shape}")
            model.store[name].data = data
    return model, cfg, opt_state, int(step)


# -- ablation matrix -------------------------------------------------------------------


ABLATION_VARIANTS: dict[str, dict[str, str]] = {
    "action-only": {"train.heads": "action"},
    "depth+action": {"train.heads": "depth,action"},
    "video+action": {"train.heads": "video,action"},
    "depth+video+action": {"train.heads": "depth,video,action"},
}

QUERY_VARIANTS: dict[str, dict[str, str]] = {
    "queries-32/32/4": {"model.n_depth_queries": "32", "model.n_video_queries": "32",
                        "model.n_action_queries": "4"},
    "queries-64/64/8": {"model.n_depth_queries": "64", "model.n_video_queries": "64",
                        "model.n_action_queries": "8"},
}


def run_ablation_matrix(base_cfg: RunConfig, variants: dict[str, dict[str, str]],
                        seeds: list[int], train_records: list[EpisodeRecord],
                        eval_records: list[EpisodeRecord],
                        progress=None) -> list[dict]:
    """Train every (variant, seed) under identical budgets and evaluate it.

    Returns one row per run with the planning subscores plus whichever
    depth/video metrics that variant's heads produce.
    """
    from .config import apply_overrides

    rows = []
    for label, overrides in variants.items():
        for seed in seeds:
            cfg = parse_config_text(to_text(base_cfg))
            apply_overrides(cfg, [f"{k}={v}" for k, v in overrides.items()])
            cfg.train.seed = seed
            model, reports = train(cfg, train_records)
            heads = cfg.train.head_set()
            which = ["plan"]
            if "depth" in heads:
                which.append("depth")
            if "video" in heads:
                which.append("video")
            row = {"variant": label, "seed": seed,
                   "final_loss": reports[-1].loss_total if reports else float("nan")}
            for mode in which:
                row.update(evaluate_split(model, eval_records, mode, cfg, seed=seed))
            rows.append(row)
            if progress:
                progress(row)
    return rows


def summarize_ablation(rows: list[dict]) -> list[dict]:
    """Mean metrics per variant, preserving first-seen variant order."""
    order = []
    grouped: dict[str, list[dict]] = {}
    for row in rows:
        grouped.setdefault(row["variant"], []).append(row)
        if row["variant"] not in order:
            order.append(row["variant"])
    out = []
    for label in order:
        bucket = grouped[label]
        keys = sorted({k for row in bucket for k in row
                       if isinstance(row[k], (int, float)) and k != "seed"})
        summary = {"variant": label, "seeds": len(bucket)}
        for key in keys:
            values = [row[key] for row in bucket if key in row]
            summary[key] = float(np.mean(values))
        out.append(summary)
    return out
