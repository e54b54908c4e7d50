"""Training pipeline: dual-loss optimization, threshold sweep, export.

Each epoch draws a weighted sample of windows, optimizes the summed
per-sample and per-window BCE terms with AdamW under gradient clipping,
sweeps the validation threshold grid, checkpoints on strict F1
improvement and steps a reduce-on-plateau schedule keyed to validation
F1.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from footfall.features import ScalerStats, scaler_from_dict, scaler_to_dict
from footfall.neuralnet.models import (
    CONVLSTM,
    apply_bn_updates,
    init_params,
    model_backward,
    model_forward,
    trainable_names,
)
from footfall.neuralnet.ops import sigmoid
from footfall.neuralnet.weights_io import save_weights
from footfall.windowing import Window, WindowingConfig, sampler_weights, weighted_sample_epoch

logger = logging.getLogger(__name__)

THRESHOLD_GRID = np.round(np.arange(1, 91) / 100.0, 2)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient goes non-finite."""


class MetadataFormatError(ValueError):
    """Raised when a metadata payload fails validation."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    epochs: int = 50
    weight_decay: float = 1e-2
    clip_norm: float = 5.0
    oversample: float = 10.0
    sched_factor: float = 0.5
    sched_patience: int = 5
    min_lr: float = 1e-6
    seed: int = 0
    val_fraction: float = 0.2
    hidden: int = 128

    def __post_init__(self) -> None:
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in (0, 1)")
        for name in ("batch_size", "lr", "weight_decay", "clip_norm", "oversample",
                     "sched_factor", "min_lr", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.sched_patience < 0:
            raise ValueError("epochs and sched_patience must be non-negative")


@dataclass
class Metadata:
    window_size: int
    stride: int
    threshold: float
    scaler: ScalerStats

    def __post_init__(self) -> None:
        if not (0.01 <= self.threshold <= 0.90):
            raise MetadataFormatError(f"threshold {self.threshold} outside [0.01, 0.90]")

    def to_dict(self) -> dict:
        return {
            "window_size": int(self.window_size),
            "stride": int(self.stride),
            "threshold": float(self.threshold),
            "scaler": scaler_to_dict(self.scaler),
        }


def metadata_from_dict(payload: dict) -> Metadata:
    for key in ("window_size", "stride", "threshold", "scaler"):
        if key not in payload:
            raise MetadataFormatError(f"metadata missing key: {key}")
    try:
        scaler = scaler_from_dict(payload["scaler"])
    except ValueError as exc:
        raise MetadataFormatError(str(exc)) from exc
    return Metadata(int(payload["window_size"]), int(payload["stride"]),
                    float(payload["threshold"]), scaler)


def load_metadata(path: str | Path) -> Metadata:
    try:
        payload = json.loads(Path(path).read_bytes())
    except json.JSONDecodeError as exc:
        raise MetadataFormatError(f"invalid metadata JSON: {exc}") from exc
    return metadata_from_dict(payload)


@dataclass
class EpochReport:
    epoch: int
    seq_loss: float
    glob_loss: float
    total_loss: float
    lr: float
    val_f1: float
    threshold: float

    def as_csv_row(self) -> str:
        return (f"{self.epoch},{self.seq_loss!r},{self.glob_loss!r},{self.total_loss!r},"
                f"{self.lr!r},{self.val_f1!r},{self.threshold!r}")


EPOCH_CSV_HEADER = "epoch,seq_loss,glob_loss,total_loss,lr,val_f1,threshold"


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) without overflow
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def bce_with_logits(logits, targets, pos_weight: float = 1.0) -> float:
    """Mean of pw*t*softplus(-z) + (1-t)*softplus(z); pw weights positives only."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if z.shape != t.shape:
        raise ValueError("logits and targets must have equal shape")
    per = pos_weight * t * _softplus(-z) + (1.0 - t) * _softplus(z)
    return float(per.mean())


def bce_with_logits_grad(logits, targets, pos_weight: float = 1.0) -> np.ndarray:
    """d(mean loss)/d(logits)."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    g = (1.0 - t) * sigmoid(z) - pos_weight * t * sigmoid(-z)
    return g / z.size


def compute_pos_weight(targets) -> float:
    """neg/pos count ratio, clamped to 1 when a class is missing."""
    t = np.asarray(targets)
    if t.size == 0:
        raise ValueError("cannot compute pos_weight of empty targets")
    pos = int(np.count_nonzero(t))
    neg = t.size - pos
    if pos == 0:
        logger.warning("no positive targets; pos_weight defaults to 1")
        return 1.0
    if neg == 0:
        return 1.0
    return neg / pos


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params, grads: dict[str, np.ndarray], state: AdamWState, cfg: TrainConfig) -> None:
    """Decoupled weight decay before the bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, g in grads.items():
        theta = params.tensors[name]
        theta *= 1.0 - cfg.lr * cfg.weight_decay
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        theta -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float = 5.0) -> float:
    """Scale all tensors by max_norm/norm when the global L2 norm exceeds it."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class PlateauState:
    lr: float
    factor: float = 0.5
    patience: int = 5
    min_lr: float = 1e-6
    best: float = -np.inf
    bad_epochs: int = 0


def scheduler_step(state: PlateauState, val_metric: float) -> float:
    """Reduce-on-plateau for a maximized metric; returns the current lr."""
    if val_metric > state.best:
        state.best = val_metric
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs > state.patience:
            state.lr = max(state.lr * state.factor, state.min_lr)
            state.bad_epochs = 0
    return state.lr


def split_train_val(windows: list[Window], val_fraction: float, seed: int):
    """Stratified-by-glob_label random split, deterministic per seed."""
    if len(windows) < 2:
        raise ValueError("need at least 2 windows to split")
    rng = np.random.default_rng(seed)
    labels = np.array([w.glob_label for w in windows])
    val_idx: list[int] = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        n = len(members)
        n_val = max(1, round(n * val_fraction))
        if n >= 2:
            n_val = min(n_val, n - 1)
        picked = rng.permutation(members)[:n_val]
        val_idx.extend(int(i) for i in picked)
    val_set = set(val_idx)
    train = [w for i, w in enumerate(windows) if i not in val_set]
    val = [w for i, w in enumerate(windows) if i in val_set]
    if not train or not val:
        raise ValueError("split produced an empty train or val set")
    return train, val


def threshold_sweep(probs, targets) -> tuple[float, float]:
    """Best F1 over tau in {0.01..0.90}; ties break toward the largest tau."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets).astype(bool)
    best_tau, best_f1 = float(THRESHOLD_GRID[-1]), -1.0
    n_pos = int(t.sum())
    for tau in THRESHOLD_GRID:
        pred = p > tau
        tp = int(np.count_nonzero(pred & t))
        fp = int(np.count_nonzero(pred & ~t))
        fn = n_pos - tp
        denom = 2 * tp + fp + fn
        f1 = (2 * tp / denom) if denom else 0.0
        if f1 >= best_f1:
            best_f1, best_tau = f1, float(tau)
    return best_tau, max(best_f1, 0.0)


@dataclass
class TrainResult:
    tensors: dict[str, np.ndarray]
    metadata: Metadata
    reports: list[EpochReport]
    best_f1: float
    model_kind: str
    hidden: int


def _stack_batch(windows: list[Window], idx: np.ndarray, seq_supervision: bool):
    feats = np.stack([windows[i].feats for i in idx]).astype(np.float64)
    glob = np.array([windows[i].glob_label for i in idx], dtype=np.float64)
    if not seq_supervision:
        return feats, None, glob
    seq = np.stack([windows[i].seq_labels for i in idx]).astype(np.float64)
    return feats, seq, glob


def _validation_probs(params, val: list[Window], seq_supervision: bool, chunk: int = 64):
    """Per-sample (or per-window) probabilities and targets over the val split."""
    probs, targets = [], []
    for lo in range(0, len(val), chunk):
        idx = np.arange(lo, min(lo + chunk, len(val)))
        feats, seq, glob = _stack_batch(val, idx, seq_supervision)
        if seq_supervision:
            seq_logits, _ = model_forward(params, feats, training=False)
            probs.append(sigmoid(seq_logits).ravel())
            targets.append(seq.ravel())
        else:
            logits = model_forward(params, feats, training=False)
            probs.append(sigmoid(np.asarray(logits)))
            targets.append(glob)
    return np.concatenate(probs), np.concatenate(targets)


def train(windows: list[Window], cfg: TrainConfig, wcfg: WindowingConfig,
          scaler: ScalerStats, model_kind: str = CONVLSTM,
          checkpoint_path: str | Path | None = None,
          epoch_log_path: str | Path | None = None,
          log_fn=None) -> TrainResult:
    """Run the epoch loop and return the best checkpoint with metadata."""
    seq_supervision = model_kind == CONVLSTM
    seeds = np.random.SeedSequence(cfg.seed).generate_state(4)
    init_seed, split_seed, sampler_seed, dropout_seed = (int(s) for s in seeds)

    params = init_params(model_kind, init_seed, hidden=cfg.hidden)
    best_tensors = copy.deepcopy(params.tensors)
    best_f1 = -1.0
    best_tau = 0.5
    reports: list[EpochReport] = []

    if cfg.epochs > 0:
        train_set, val_set = split_train_val(windows, cfg.val_fraction, split_seed)
        glob_targets = [w.glob_label for w in train_set]
        pw_glob = compute_pos_weight(glob_targets)
        if seq_supervision:
            pw_seq = compute_pos_weight(np.concatenate([w.seq_labels for w in train_set]))
        else:
            pw_seq = 1.0
        logger.info("train=%d val=%d pos_weight seq=%.2f glob=%.2f",
                    len(train_set), len(val_set), pw_seq, pw_glob)

        weights = sampler_weights(train_set, cfg.oversample)
        sampler_rng = np.random.default_rng(sampler_seed)
        dropout_rng = np.random.default_rng(dropout_seed)
        opt_state = AdamWState()
        sched = PlateauState(lr=cfg.lr, factor=cfg.sched_factor,
                             patience=cfg.sched_patience, min_lr=cfg.min_lr)
        step_cfg = cfg

        log_file = None
        if epoch_log_path is not None:
            log_file = open(epoch_log_path, "a")
            if log_file.tell() == 0:
                log_file.write(EPOCH_CSV_HEADER + "\n")

        try:
            for epoch in range(1, cfg.epochs + 1):
                order = weighted_sample_epoch(weights, len(train_set), sampler_rng)
                seq_sum = glob_sum = 0.0
                n_batches = 0
                for lo in range(0, len(order), cfg.batch_size):
                    idx = order[lo:lo + cfg.batch_size]
                    feats, seq_t, glob_t = _stack_batch(train_set, idx, seq_supervision)
                    if seq_supervision:
                        (seq_z, glob_z), cache = model_forward(
                            params, feats, training=True, rng=dropout_rng, want_cache=True)
                        seq_loss = bce_with_logits(seq_z, seq_t, pw_seq)
                        glob_loss = bce_with_logits(glob_z, glob_t, pw_glob)
                        d_seq = bce_with_logits_grad(seq_z, seq_t, pw_seq)
                        d_glob = bce_with_logits_grad(glob_z, glob_t, pw_glob)
                        grads = model_backward(params, cache, d_seq, d_glob)
                    else:
                        logit, cache = model_forward(params, feats, training=True, want_cache=True)
                        seq_loss = 0.0
                        glob_loss = bce_with_logits(logit, glob_t, pw_glob)
                        d_logit = bce_with_logits_grad(logit, glob_t, pw_glob)
                        grads = model_backward(params, cache, d_logit)
                    total = seq_loss + glob_loss
                    if not np.isfinite(total):
                        raise TrainingDivergedError(
                            f"non-finite loss at epoch {epoch} (seq={seq_loss}, glob={glob_loss})")
                    clip_grad_norm(grads, cfg.clip_norm)
                    if step_cfg.lr != sched.lr:
                        step_cfg = dataclasses.replace(cfg, lr=sched.lr)
                    adamw_step(params, grads, opt_state, step_cfg)
                    if hasattr(cache, "bn_updates"):
                        apply_bn_updates(params, cache)
                    seq_sum += seq_loss
                    glob_sum += glob_loss
                    n_batches += 1

                probs, targets = _validation_probs(params, val_set, seq_supervision)
                tau, f1 = threshold_sweep(probs, targets)
                if f1 > best_f1:
                    best_f1, best_tau = f1, tau
                    best_tensors = copy.deepcopy(params.tensors)
                    if checkpoint_path is not None:
                        save_weights(best_tensors, checkpoint_path)
                lr_now = scheduler_step(sched, f1)
                report = EpochReport(epoch, seq_sum / n_batches, glob_sum / n_batches,
                                     (seq_sum + glob_sum) / n_batches, lr_now, f1, tau)
                reports.append(report)
                if log_file is not None:
                    log_file.write(report.as_csv_row() + "\n")
                    log_file.flush()
                if log_fn is not None:
                    log_fn(report)
        finally:
            if log_file is not None:
                log_file.close()

    metadata = Metadata(wcfg.window_size, wcfg.stride, _clamp_tau(best_tau), scaler)
    return TrainResult(best_tensors, metadata, reports, max(best_f1, 0.0),
                       model_kind, cfg.hidden)


def _clamp_tau(tau: float) -> float:
    return min(max(tau, 0.01), 0.90)


def export(result: TrainResult, weights_path: str | Path, metadata_path: str | Path) -> None:
    """Write the weights file and metadata JSON for the best checkpoint."""
    if result.tensors is None:
        raise ValueError("no checkpoint to export")
    save_weights(result.tensors, weights_path)
    Path(metadata_path).write_text(json.dumps(result.metadata.to_dict()))
