"""BLSTM phoneme duration model, multi-scale rhythm loss and post-processing."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .exceptions import ScoreValidationError, ShapeError
from .metrics import dur_acc, dur_corr
from .nn import BiLSTM, Embedding, LayerNorm, Linear, Module
from .sequence import PhonemeRow, row_arrays, syllable_groups
from .validation import check_utterances, utterance_rows
from .vocab import N_PITCH_IDS, PHONEME_TYPES, PHONEMES, SLURS, check_ids

logger = logging.getLogger(__name__)

CONSONANT_CAP_FRAMES = 10
_BT_CENTER = math.log(50.0)


@dataclass(frozen=True)
class DurationModelConfig:
    ph_dim: int = 32
    pt_dim: int = 32
    pi_dim: int = 32
    sr_dim: int = 32
    bt_dim: int = 32
    layers: int = 2
    hidden: int = 64

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (isinstance(value, (int, np.integer)) and value > 0):
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


class DurationNet(Module):
    """Embeds Ph/Pt/Pi/Sr, projects log Bt, layer-normalizes the concatenation,
    runs a stacked BiLSTM and regresses one log-duration per row."""

    def __init__(self, cfg: DurationModelConfig, rng):
        self.ph = Embedding(len(PHONEMES), cfg.ph_dim, rng)
        self.pt = Embedding(len(PHONEME_TYPES), cfg.pt_dim, rng)
        self.pi = Embedding(N_PITCH_IDS, cfg.pi_dim, rng)
        self.sr = Embedding(len(SLURS), cfg.sr_dim, rng)
        self.bt = Linear(1, cfg.bt_dim, rng)
        width = cfg.ph_dim + cfg.pt_dim + cfg.pi_dim + cfg.sr_dim + cfg.bt_dim
        self.norm = LayerNorm(width)
        self.blstm = BiLSTM(width, cfg.hidden, cfg.layers, rng)
        self.proj = Linear(2 * cfg.hidden, 1, rng)

    def __call__(self, arrays) -> nn.Tensor:
        bt = (np.log(np.maximum(arrays["bt"], 1.0)) - _BT_CENTER)[:, None]
        x = nn.concat([self.ph(arrays["ph"]), self.pt(arrays["pt"]), self.pi(arrays["pi"]),
                       self.sr(arrays["sr"]), self.bt(bt)], axis=-1)
        h = self.blstm(self.norm(x))
        return nn.reshape(self.proj(h), (-1,))


def _as_groups(syllable_map, n):
    if len(syllable_map) == n and all(np.ndim(g) == 0 for g in syllable_map):
        ids = np.asarray(syllable_map)
        starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
        return np.split(np.arange(n), starts[1:])
    groups = [np.asarray(g, dtype=np.intp) for g in syllable_map]
    for g in groups:
        if g.size == 0:
            raise ValueError("empty syllable group")
    return groups


def multiscale_loss(pred_dur, gt_dur, syllable_map, use_syllable_term: bool = True) -> float:
    """Syllable-sum squared error averaged over syllables plus the per-phoneme MSE.

    Durations are linear-domain frame counts. ``syllable_map`` is either a
    list of row-index groups or a per-row syllable id sequence.
    """
    pred = np.asarray(pred_dur, dtype=np.float64)
    gt = np.asarray(gt_dur, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ShapeError(f"multiscale_loss: shapes {pred.shape} and {gt.shape}")
    diff = gt - pred
    phoneme_term = float(np.mean(diff * diff))
    if not use_syllable_term:
        return phoneme_term
    groups = _as_groups(syllable_map, pred.size)
    sums = np.array([diff[g].sum() for g in groups])
    return float(np.mean(sums * sums)) + phoneme_term


def _membership(groups, n) -> np.ndarray:
    m = np.zeros((len(groups), n))
    for i, g in enumerate(groups):
        m[i, g] = 1.0
    return m


def multiscale_loss_tensor(pred: nn.Tensor, gt, groups, use_syllable_term=True) -> nn.Tensor:
    """Tape version of :func:`multiscale_loss` for training."""
    gt = np.asarray(gt, dtype=np.float64)
    diff = nn.sub(gt, pred)
    loss = nn.mean(nn.mul(diff, diff))
    if use_syllable_term:
        sums = nn.matmul(_membership(groups, gt.size), nn.reshape(diff, (-1, 1)))
        loss = loss + nn.mean(nn.mul(sums, sums))
    return loss


def _largest_remainder(values: np.ndarray, total: int) -> np.ndarray:
    floors = np.floor(values).astype(np.int64)
    short = int(total - floors.sum())
    if short > 0:
        order = np.argsort(-(values - floors), kind="stable")
        floors[order[:short]] += 1
    return floors


def postprocess(pred_frames, rows: Sequence[PhonemeRow]) -> np.ndarray:
    """Fit predicted durations to the score.

    Per syllable, durations are scaled so they sum exactly to the notes'
    frame total (largest-remainder rounding), then any initial longer than
    10 frames is cut to 10 with the excess given to the syllable's final
    rows in proportion to their length. Silence rows pass through (rounded).
    """
    pred = np.asarray(pred_frames, dtype=np.float64)
    if pred.shape != (len(rows),):
        raise ShapeError(f"postprocess: {pred.shape} predictions for {len(rows)} rows")
    out = np.zeros(len(rows), dtype=np.int64)
    for g in syllable_groups(rows):
        syl = [rows[i] for i in g]
        if all(r.is_silence for r in syl):
            out[g] = np.maximum(np.floor(pred[g] + 0.5), 1).astype(np.int64)
            continue
        total = sum(r.nominal_dur for r in syl)
        p = pred[g]
        if p.sum() <= 0:
            raise ValueError(f"syllable {syl[0].syllable_index}: predicted durations sum to 0")
        d = _largest_remainder(p * total / p.sum(), total)
        if total >= len(g):
            while d.min() < 1:
                d[np.argmin(d)] += 1
                d[np.argmax(d)] -= 1
        initial = np.array([r.ptype == "initial" for r in syl])
        excess = int(np.clip(d[initial] - CONSONANT_CAP_FRAMES, 0, None).sum())
        if excess:
            d[initial] = np.minimum(d[initial], CONSONANT_CAP_FRAMES)
            finals = ~initial
            share = d[finals].astype(np.float64)
            share = share / share.sum() if share.sum() > 0 else np.full(share.size, 1.0 / share.size)
            d[finals] += _largest_remainder(share * excess, excess)
        out[g] = d
    return out


@dataclass
class TrainingReport:
    history: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def final(self) -> dict:
        return self.history[-1] if self.history else {}

    def to_json(self) -> str:
        return json.dumps({"history": self.history, "config": self.config}, indent=2, sort_keys=True)


class DurationModel(BaseEstimator):
    """Phoneme duration regressor trained on log-frame targets.

    ``fit`` takes a sequence of utterances (row lists or :class:`Utterance`
    objects) whose rows carry ``gt_dur``; ``predict`` returns linear-domain
    frame counts per row.
    """

    def __init__(self, ph_dim=32, pt_dim=32, pi_dim=32, sr_dim=32, bt_dim=32, layers=2,
                 hidden=64, epochs=20, lr=3e-3, batch_size=4, seed=0,
                 use_syllable_term=True, holdout=0.1, dur_tolerance=5, clip_norm=5.0,
                 final_lr_ratio=0.05):
        self.ph_dim = ph_dim
        self.pt_dim = pt_dim
        self.pi_dim = pi_dim
        self.sr_dim = sr_dim
        self.bt_dim = bt_dim
        self.layers = layers
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.use_syllable_term = use_syllable_term
        self.holdout = holdout
        self.dur_tolerance = dur_tolerance
        self.clip_norm = clip_norm
        self.final_lr_ratio = final_lr_ratio

    @property
    def config(self) -> DurationModelConfig:
        return DurationModelConfig(self.ph_dim, self.pt_dim, self.pi_dim, self.sr_dim,
                                   self.bt_dim, self.layers, self.hidden)

    def build(self) -> "DurationModel":
        """(Re)initialize the network from ``seed`` without training."""
        self.net_ = DurationNet(self.config, np.random.default_rng(self.seed))
        return self

    def fit(self, X, y=None):
        train_duration(self, X, self.epochs, self.lr, self.seed, self.use_syllable_term)
        return self

    def predict_log(self, rows) -> np.ndarray:
        return predict_log_durations(self, rows)

    def predict(self, X, postprocess_output: bool = False):
        """Frames per row for one utterance, or a list of arrays for several."""
        if isinstance(X, (list, tuple)) and X and not isinstance(X[0], PhonemeRow):
            return [self.predict(utterance_rows(u), postprocess_output) for u in X]
        rows = utterance_rows(X)
        frames = np.exp(predict_log_durations(self, rows))
        return postprocess(frames, rows) if postprocess_output else frames

    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        nn.save_checkpoint(path, self.net_.state_dict(),
                           {"kind": "duration", "params": self.get_params()})

    @classmethod
    def load(cls, path) -> "DurationModel":
        meta, state = nn.load_checkpoint(path)
        if meta.get("kind") != "duration":
            raise ShapeError(f"{path}: not a duration checkpoint")
        model = cls(**meta["params"]).build()
        model.net_.load_state_dict(state)
        return model


def predict_log_durations(model: DurationModel, rows: Sequence[PhonemeRow]) -> np.ndarray:
    check_is_fitted(model, "net_")
    rows = utterance_rows(rows)
    if not rows:
        return np.zeros(0)
    arrays = row_arrays(rows)
    check_ids(arrays["ph"], arrays["pt"], arrays["pi"], arrays["sr"])
    return model.net_(arrays).data.copy()


def utterance_loss(net: DurationNet, rows, use_syllable_term=True) -> nn.Tensor:
    arrays = row_arrays(rows)
    gt = np.array([r.gt_dur for r in rows], dtype=np.float64)
    pred = nn.exp(net(arrays))
    return multiscale_loss_tensor(pred, gt, syllable_groups(rows), use_syllable_term)


def _split(n, holdout, rng):
    order = rng.permutation(n)
    n_val = int(round(n * holdout)) if n >= 2 else 0
    n_val = min(max(n_val, 1 if holdout > 0 and n >= 2 else 0), n - 1) if n >= 2 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def evaluate_durations(model: DurationModel, corpus, tolerance=5) -> dict:
    """Dur Acc / Dur CORR and mean absolute syllable-sum error over a corpus."""
    preds, gts, syl_err = [], [], []
    for rows in corpus:
        p = np.exp(predict_log_durations(model, rows))
        g = np.array([r.gt_dur for r in rows], dtype=np.float64)
        preds.append(p)
        gts.append(g)
        syl_err.extend(abs(g[s].sum() - p[s].sum()) for s in syllable_groups(rows))
    p, g = np.concatenate(preds), np.concatenate(gts)
    return {"dur_acc": dur_acc(p, g, tolerance), "dur_corr": dur_corr(p, g),
            "syllable_abs_error": float(np.mean(syl_err))}


def cosine_lr(lr: float, epoch: int, epochs: int, final_ratio: float) -> float:
    """Cosine decay from ``lr`` at epoch 1 to ``final_ratio * lr`` at the last epoch."""
    if epochs <= 1:
        return lr
    t = (epoch - 1) / (epochs - 1)
    return lr * (final_ratio + (1 - final_ratio) * 0.5 * (1 + math.cos(math.pi * t)))


def train_duration(model: DurationModel, corpus, epochs: int, lr: float, seed: int,
                   use_syllable_term: bool = True) -> TrainingReport:
    """Optimize the rhythm loss with Adam; returns per-epoch loss and held-out metrics."""
    utts = [utterance_rows(u) for u in check_utterances(corpus, require_gt=True)]
    rng = np.random.default_rng(seed)
    model.seed = seed
    model.build()
    train_idx, val_idx = _split(len(utts), model.holdout, rng)
    train = [utts[i] for i in train_idx]
    val = [utts[i] for i in val_idx] or train
    # start predictions near the corpus mean duration
    mean_log = float(np.mean(np.log([r.gt_dur for u in train for r in u])))
    model.net_.proj.bias.data[:] = mean_log
    params = model.net_.parameters()
    report = TrainingReport(config={"epochs": epochs, "lr": lr, "seed": seed,
                                    "use_syllable_term": use_syllable_term,
                                    "n_train": len(train), "n_val": len(val_idx)})
    for epoch in range(1, epochs + 1):
        losses = []
        order = rng.permutation(len(train))
        step_lr = cosine_lr(lr, epoch, epochs, model.final_lr_ratio)
        for start in range(0, len(order), model.batch_size):
            batch = order[start:start + model.batch_size]
            model.net_.zero_grad()
            total = None
            for i in batch:
                loss = utterance_loss(model.net_, train[i], use_syllable_term)
                losses.append(loss.item())
                total = loss if total is None else total + loss
            nn.mul(total, 1.0 / len(batch)).backward()
            if model.clip_norm:
                nn.clip_grad_norm(params, model.clip_norm * len(batch))
            nn.adam_step(params, step_lr)
        metrics = evaluate_durations(model, val, model.dur_tolerance)
        entry = {"epoch": epoch, "loss": math.fsum(losses) / len(losses),
                 "dur_acc": metrics["dur_acc"], "dur_corr": metrics["dur_corr"]}
        report.history.append(entry)
        logger.info("duration epoch %d loss %.4f acc %.3f corr %s", epoch, entry["loss"],
                    entry["dur_acc"], entry["dur_corr"])
    model.report_ = report
    return report
