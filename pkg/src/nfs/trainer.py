"""Training loop, evaluation reports, and checkpoint management."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .data import PairedRecord, poses_for_frames, sample_batch
from .errors import CheckFailure, ContractViolation, NonFiniteGradientError
from .gradcore import RAdam, Tape, clip_global_norm, recording, save_checkpoint
from .losses import LossWeights, StftConfig
from .model import NfsModel

log = logging.getLogger(__name__)

EVAL_COLUMNS = ("l2x1e3", "amp", "l_phs", "l_stft")
EVAL_HEADERS = ("l2*1e3", "Amp.", "L_phs", "L_STFT")


@dataclass
class TrainConfig:
    epochs: int = 16
    batch: int = 6
    lr0: float = 1e-3
    lr_decay: float = 0.9
    crop_ms: float = 800.0
    weights: LossWeights = field(default_factory=LossWeights)
    stft: StftConfig = field(default_factory=StftConfig)
    seed: int = 0
    grad_clip: float = 10.0
    checkpoint_every: int = 500
    steps_per_epoch: int | None = None
    val_fraction: float = 0.1
    out_dir: str | None = None

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay**epoch


@dataclass
class TrainResult:
    model: NfsModel
    log_rows: list[dict]
    best_loss: float
    best_checkpoint: str | None
    steps: int


def _split_records(records: list[PairedRecord], cfg: TrainConfig):
    if len(records) < 2 or cfg.val_fraction <= 0.0:
        return list(records), []
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(records))
    n_val = max(1, int(round(cfg.val_fraction * len(records))))
    val_idx = set(order[:n_val].tolist())
    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    return train, val


def batch_loss(model: NfsModel, batch, weights: LossWeights, stft_cfg: StftConfig,
               noise_rng: np.random.Generator | None):
    """Mean composite loss over the batch items; frames of all items run in one
    conditioning pass since each frame is an independent batch element."""
    total = None
    agg = {"l2": 0.0, "phase": 0.0, "iid": 0.0, "stft": 0.0}
    b = batch.mono.shape[0]
    for i in range(b):
        est = model.render_crop(batch.mono[i], batch.positions[i], batch.quats[i],
                                geo=batch.geo[i], rng=noise_rng)
        item_total, breakdown = losses.composite(est, batch.target[i], weights, stft_cfg)
        total = item_total if total is None else total + item_total
        for key in agg:
            agg[key] += getattr(breakdown, key) / b
    return total * (1.0 / b), agg


def train(records: list[PairedRecord], model: NfsModel, cfg: TrainConfig) -> TrainResult:
    """Run the full recipe: per step sample, render, composite loss, backward,
    rectified-Adam update; learning rate decays per epoch; checkpoints at the
    configured cadence. Deterministic under the config seed."""
    if not records:
        raise ContractViolation("train: no records")
    train_recs, val_recs = _split_records(records, cfg)
    plan = model.config.plan()
    params = model.parameters()
    opt = RAdam(params, lr=cfg.lr0)
    data_rng = np.random.default_rng(cfg.seed + 1)
    noise_rng = np.random.default_rng(cfg.seed + 2) if model.config.ni else None

    crop_s = cfg.crop_ms / 1000.0
    total_seconds = sum(r.duration for r in train_recs)
    steps_per_epoch = cfg.steps_per_epoch or max(1, math.ceil(total_seconds / (cfg.batch * crop_s)))
    half_epoch = max(1, steps_per_epoch // 2)
    geo_fn = lambda p: model.geo_delays(p)

    rows: list[dict] = []
    best_loss = math.inf
    best_path = None
    step = 0
    bad_streak = 0
    lr_halved = False
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)

    def maybe_checkpoint(tag: str) -> str | None:
        if not cfg.out_dir:
            return None
        path = os.path.join(cfg.out_dir, f"ckpt_{tag}.nfsckpt")
        save_checkpoint(path, model.parameters(), model.config.to_dict(), cfg.seed)
        return path

    def validate() -> float:
        if not val_recs:
            return math.nan
        vb = sample_batch(val_recs, np.random.default_rng(cfg.seed + 3),
                          cfg.batch, cfg.crop_ms, plan, geo_fn)
        loss_t, _ = batch_loss(model, vb, cfg.weights, cfg.stft, None)
        return float(loss_t.data)

    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at_epoch(epoch)
        for _ in range(steps_per_epoch):
            batch = sample_batch(train_recs, data_rng, cfg.batch, cfg.crop_ms, plan, geo_fn)
            tape = Tape()
            with recording(tape):
                loss_t, agg = batch_loss(model, batch, cfg.weights, cfg.stft, noise_rng)
            loss_val = float(loss_t.data)
            if not math.isfinite(loss_val):
                bad_streak += 1
                log.warning("step %d: non-finite loss, skipping (streak %d)", step, bad_streak)
                if not lr_halved:
                    opt.lr = opt.lr / 2.0
                    lr_halved = True
                if bad_streak >= 3:
                    raise CheckFailure("3 consecutive non-finite losses; aborting training")
                step += 1
                continue
            bad_streak = 0
            opt.zero_grad()
            grads = {name: g for name, g in
                     zip(params, tape.backward(loss_t, list(params.values())))}
            clip_global_norm(grads, cfg.grad_clip)
            try:
                opt.step(grads)
            except NonFiniteGradientError as exc:
                log.warning("step %d: %s", step, exc)
                step += 1
                continue
            rows.append({"step": step, "epoch": epoch, "lr": opt.lr, "loss": loss_val, **agg})
            step += 1
            if step % half_epoch == 0:
                val = validate()
                if not math.isnan(val) and val < best_loss:
                    best_loss = val
                    best_path = maybe_checkpoint("best") or best_path
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                maybe_checkpoint(f"step{step:06d}")
    if math.isinf(best_loss) and rows:
        best_loss = rows[-1]["loss"]
        best_path = maybe_checkpoint("best") or best_path
    maybe_checkpoint("final")
    if cfg.out_dir:
        write_train_log(os.path.join(cfg.out_dir, "train_log.csv"), rows)
    return TrainResult(model, rows, best_loss, best_path, step)


def write_train_log(path, rows: list[dict]) -> None:
    cols = ("step", "epoch", "lr", "loss", "l2", "phase", "iid", "stft")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in cols) + "\n")


# ---------------------------------------------------------------- evaluate

@dataclass
class EvalReport:
    rows: list[dict]
    aggregate: dict[str, float]

    def table(self) -> str:
        head = f"{'record':<18s}" + "".join(f"{h:>12s}" for h in EVAL_HEADERS)
        lines = [head]
        for row in self.rows:
            lines.append(f"{row['record']:<18s}"
                         + "".join(f"{row[c]:>12.4f}" for c in EVAL_COLUMNS))
        lines.append(f"{'mean':<18s}"
                     + "".join(f"{self.aggregate[c]:>12.4f}" for c in EVAL_COLUMNS))
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("record," + ",".join(EVAL_COLUMNS) + "\n")
            for row in self.rows:
                fh.write(row["record"] + "," + ",".join(repr(row[c]) for c in EVAL_COLUMNS) + "\n")
            fh.write("mean," + ",".join(repr(self.aggregate[c]) for c in EVAL_COLUMNS) + "\n")


def evaluate(records: list[PairedRecord], model: NfsModel,
             stft_cfg: StftConfig | None = None, ni: bool = False,
             seed: int = 0, chunk_s: float = 8.0) -> EvalReport:
    """Render every record and report the metric columns.

    Long records are scored in chunks to bound memory: the waveform norm
    accumulates exactly, spectral metrics average over chunks weighted by
    length. Noise injection is off by default for reproducible numbers.
    """
    stft_cfg = stft_cfg or StftConfig()
    plan = model.config.plan()
    fs = model.config.sample_rate
    rows = []
    for ri, rec in enumerate(records):
        mono = rec.mono.mono()
        fitted = plan.fit_length(mono.size)
        positions, quats = poses_for_frames(rec.track, plan, fitted, fs)
        rng = np.random.default_rng(seed) if ni else None
        rendered = model.render(mono, positions, quats, rng=rng, ni=ni)
        est = rendered.data
        ref = rec.binaural.data
        chunk = max(int(chunk_s * fs), stft_cfg.metric_fft)
        sq_sum = 0.0
        amp_w = phs_w = stft_w = 0.0
        weight = 0.0
        for a in range(0, mono.size, chunk):
            b = min(a + chunk, mono.size)
            if b - a < stft_cfg.metric_fft:
                a = max(0, b - stft_cfg.metric_fft)
            e, r = est[:, a:b], ref[:, a:b]
            w = b - a
            sq_sum += float(np.sum((e - r) ** 2))
            amp_w += w * float(losses.amplitude_error(e, r, stft_cfg).data)
            phs_w += w * float(losses.phase_loss(e, r, stft_cfg).data)
            stft_w += w * float(losses.mrstft(e, r, stft_cfg).data)
            weight += w
            if b == mono.size:
                break
        rows.append({
            "record": rec.session or rec.subject or f"record{ri}",
            "l2x1e3": 1e3 * math.sqrt(sq_sum),
            "amp": amp_w / weight,
            "l_phs": phs_w / weight,
            "l_stft": stft_w / weight,
        })
    aggregate = {c: float(np.mean([row[c] for row in rows])) for c in EVAL_COLUMNS}
    return EvalReport(rows, aggregate)
