"""Non-autoregressive acoustic model: FFT-block encoder, length regulator,
decoder with per-block projections, progressive pitch-weighted L1 loss and
an adversarial speaker classifier behind a gradient reversal."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .dsp import FEATURE_DIM, LOG_F0_DIM
from .exceptions import ConfigError, ShapeError
from .nn import Conv1d, Embedding, FFTBlock, LayerNorm, Linear, Module
from .sequence import PhonemeRow, row_arrays
from .validation import check_durations, check_frames, utterance_rows
from .vocab import N_PITCH_IDS, PHONEME_TYPES, PHONEMES, SLURS, check_ids

logger = logging.getLogger(__name__)

RECIPES = ("pretrain_multi_singer", "finetune_single")


@dataclass(frozen=True)
class AcousticModelConfig:
    dim: int = 32
    heads: int = 2
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    kernel_size: int = 3
    filter_size: int = 64
    postnet_kernel: int = 5
    n_speakers: int = 1
    grl_lambda: float = 0.02
    w_f0: float = 1.2
    out_dim: int = FEATURE_DIM

    def __post_init__(self):
        for name in ("dim", "heads", "encoder_blocks", "decoder_blocks", "kernel_size",
                     "filter_size", "postnet_kernel", "n_speakers", "out_dim"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v > 0):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.grl_lambda < 0:
            raise ConfigError("grl_lambda must be non-negative")
        if self.out_dim <= LOG_F0_DIM:
            raise ConfigError(f"out_dim must exceed the log-F0 index {LOG_F0_DIM}")

    @property
    def weights(self) -> np.ndarray:
        w = np.ones(self.out_dim)
        w[LOG_F0_DIM] = self.w_f0
        return w


def length_regulate(states, durations) -> nn.Tensor:
    """Repeat row ``i`` of ``states`` ``durations[i]`` times."""
    states = nn.as_tensor(states)
    d = check_durations(durations, states.shape[0])
    if d.sum() == 0:
        raise ValueError("length_regulate: all durations are zero")
    return nn.take(states, np.repeat(np.arange(d.size), d))


def progressive_loss(projections: Sequence, target, w) -> nn.Tensor:
    """Weighted L1 averaged over dims, frames and every projected output."""
    target = np.asarray(target, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (target.shape[-1],):
        raise ShapeError(f"progressive_loss: weights {w.shape} vs target {target.shape}")
    terms = []
    for p in projections:
        p = nn.as_tensor(p)
        if p.shape != target.shape:
            raise ShapeError(f"progressive_loss: projection {p.shape} vs target {target.shape}")
        terms.append(nn.mean(nn.mul(nn.abs(nn.sub(p, target)), w)))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return nn.mul(total, 1.0 / len(terms))


class SpeakerClassifier(Module):
    def __init__(self, dim, n_speakers, rng):
        self.proj = Linear(dim, n_speakers, rng)

    def __call__(self, states, lam) -> nn.Tensor:
        pooled = nn.mean(states, axis=0, keepdims=True)
        return nn.reshape(self.proj(nn.gradient_reverse(pooled, lam)), (-1,))


class AcousticNet(Module):
    def __init__(self, cfg: AcousticModelConfig, rng):
        d = cfg.dim
        self.ph = Embedding(len(PHONEMES), d, rng)
        self.pt = Embedding(len(PHONEME_TYPES), d, rng)
        self.pi = Embedding(N_PITCH_IDS, d, rng)
        self.sr = Embedding(len(SLURS), d, rng)
        self.in_norm = LayerNorm(4 * d)
        self.in_proj = Linear(4 * d, d, rng)
        self.encoder = [FFTBlock(d, cfg.heads, cfg.kernel_size, cfg.filter_size, rng)
                        for _ in range(cfg.encoder_blocks)]
        self.speaker = Embedding(cfg.n_speakers, d, rng)
        self.decoder = [FFTBlock(d, cfg.heads, cfg.kernel_size, cfg.filter_size, rng)
                        for _ in range(cfg.decoder_blocks)]
        self.projections = [Linear(d, cfg.out_dim, rng) for _ in range(cfg.decoder_blocks)]
        self.post1 = Conv1d(cfg.out_dim, d, cfg.postnet_kernel, rng)
        self.post2 = Conv1d(d, cfg.out_dim, cfg.postnet_kernel, rng)
        self.classifier = SpeakerClassifier(d, cfg.n_speakers, rng)


class AcousticModel(BaseEstimator):
    """Frame-level 26-dim feature predictor from phoneme rows and durations.

    ``fit`` takes :class:`AcousticExample` objects (rows with ground-truth
    durations plus normalized target frames). ``predict`` returns the
    post-net output, still in the normalized domain.
    """

    def __init__(self, dim=32, heads=2, encoder_blocks=2, decoder_blocks=2, kernel_size=3,
                 filter_size=64, postnet_kernel=5, n_speakers=1, grl_lambda=0.02, w_f0=1.2,
                 progressive=True, use_dat=True, epochs=30, lr=2e-3, batch_size=2, seed=0,
                 holdout=0.0, clip_norm=1.0, final_lr_ratio=0.1, classifier_lr_scale=10.0,
                 classifier_steps=20):
        self.dim = dim
        self.heads = heads
        self.encoder_blocks = encoder_blocks
        self.decoder_blocks = decoder_blocks
        self.kernel_size = kernel_size
        self.filter_size = filter_size
        self.postnet_kernel = postnet_kernel
        self.n_speakers = n_speakers
        self.grl_lambda = grl_lambda
        self.w_f0 = w_f0
        self.progressive = progressive
        self.use_dat = use_dat
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.holdout = holdout
        self.clip_norm = clip_norm
        self.final_lr_ratio = final_lr_ratio
        self.classifier_lr_scale = classifier_lr_scale
        self.classifier_steps = classifier_steps

    @property
    def config(self) -> AcousticModelConfig:
        return AcousticModelConfig(self.dim, self.heads, self.encoder_blocks, self.decoder_blocks,
                                   self.kernel_size, self.filter_size, self.postnet_kernel,
                                   self.n_speakers, self.grl_lambda, self.w_f0)

    def build(self) -> "AcousticModel":
        self.net_ = AcousticNet(self.config, np.random.default_rng(self.seed))
        return self

    def fit(self, X, y=None, recipe: str = "pretrain_multi_singer", init=None):
        train_acoustic(self, X, recipe, self.epochs, self.lr, self.seed, init=init)
        return self

    def predict(self, rows, durations=None, speaker: int = 0) -> np.ndarray:
        """Normalized (T, 26) frames; durations default to the rows' ground truth."""
        check_is_fitted(self, "net_")
        rows = utterance_rows(rows)
        if durations is None:
            durations = [r.gt_dur for r in rows]
        return decode(self, length_regulate(encode(self, rows), durations), speaker)[-1].data.copy()

    def save(self, path, extra: Optional[dict] = None) -> None:
        check_is_fitted(self, "net_")
        meta = {"kind": "acoustic", "params": self.get_params()}
        meta.update(extra or {})
        nn.save_checkpoint(path, self.net_.state_dict(), meta)

    @classmethod
    def load(cls, path) -> "AcousticModel":
        meta, state = nn.load_checkpoint(path)
        if meta.get("kind") != "acoustic":
            raise ShapeError(f"{path}: not an acoustic checkpoint")
        model = cls(**meta["params"]).build()
        model.net_.load_state_dict(state)
        model.checkpoint_meta_ = meta
        return model


def encode(model: AcousticModel, rows: Sequence[PhonemeRow]) -> nn.Tensor:
    """Phoneme-level states (rows × dim); note durations are not an input here."""
    check_is_fitted(model, "net_")
    rows = utterance_rows(rows)
    if not rows:
        raise ValueError("encode: no rows")
    a = row_arrays(rows)
    check_ids(a["ph"], a["pt"], a["pi"], a["sr"])
    net = model.net_
    x = nn.concat([net.ph(a["ph"]), net.pt(a["pt"]), net.pi(a["pi"]), net.sr(a["sr"])], axis=-1)
    x = net.in_proj(net.in_norm(x)) + nn.sinusoid_positions(len(rows), model.dim)
    for block in net.encoder:
        x = block(x)
    return x


def decode(model: AcousticModel, frame_states, speaker: int = 0) -> list[nn.Tensor]:
    """B projected outputs, one per decoder block, then the post-net output."""
    net = model.net_
    x = nn.as_tensor(frame_states)
    if x.shape[0] == 0:
        raise ValueError("decode: empty frame sequence")
    _check_speaker(model, speaker)
    x = x + net.speaker(np.array([speaker])) + nn.sinusoid_positions(x.shape[0], model.dim)
    outs = []
    for block, proj in zip(net.decoder, net.projections):
        x = block(x)
        outs.append(proj(x))
    last = outs[-1]
    outs.append(last + net.post2(nn.tanh(net.post1(last))))
    return outs


def _check_speaker(model, speaker):
    if not 0 <= int(speaker) < model.n_speakers:
        raise ValueError(f"speaker {speaker} outside [0, {model.n_speakers})")


def dat_loss(model: AcousticModel, rows, speaker_id: int, lam: Optional[float] = None) -> nn.Tensor:
    """Cross-entropy of the speaker classifier on gradient-reversed pooled encoder states.

    ``rows`` may be phoneme rows or already-computed encoder states.
    """
    _check_speaker(model, speaker_id)
    if model.n_speakers == 1:
        return nn.Tensor(np.array(0.0))
    states = rows if isinstance(rows, nn.Tensor) else encode(model, rows)
    lam = model.grl_lambda if lam is None else lam
    return nn.softmax_cross_entropy(model.net_.classifier(states, lam), int(speaker_id))


@dataclass
class AcousticExample:
    rows: list[PhonemeRow]
    target: np.ndarray
    speaker: int = 0
    utterance_id: str = ""

    def __post_init__(self):
        self.rows = utterance_rows(self.rows)
        if any(r.gt_dur is None for r in self.rows):
            raise ValueError("acoustic examples need ground-truth durations")
        self.target = check_frames(self.target, name="target")
        total = sum(r.gt_dur for r in self.rows)
        if self.target.shape[0] != total:
            raise ShapeError(f"{self.utterance_id}: {self.target.shape[0]} target frames, "
                             f"durations sum to {total}")


def _forward(model: AcousticModel, ex: AcousticExample, use_dat: bool):
    states = encode(model, ex.rows)
    outs = decode(model, length_regulate(states, [r.gt_dur for r in ex.rows]), ex.speaker)
    if not model.progressive:
        outs = outs[-1:]
    recon = progressive_loss(outs, ex.target, model.config.weights)
    adv = dat_loss(model, states, ex.speaker) if use_dat else nn.Tensor(np.array(0.0))
    return recon, adv, states.data.mean(axis=0)


def example_loss(model: AcousticModel, ex: AcousticExample, use_dat: bool):
    """(progressive loss, adversarial loss) for one example."""
    return _forward(model, ex, use_dat)[:2]


def classifier_best_response(model: AcousticModel, pooled: np.ndarray, speakers: np.ndarray,
                             lr: float, steps: int) -> float:
    """Adam steps of the speaker classifier alone on cached pooled states.

    Keeps the adversary close to its best response so the reversed gradient
    pulls the speakers together instead of chasing a stale classifier.
    Returns the classifier's cross-entropy after the update.
    """
    proj = model.net_.classifier.proj
    onehot = np.eye(model.n_speakers)[speakers]
    n = len(pooled)
    for _ in range(steps):
        logits = pooled @ proj.weight.data + proj.bias.data
        logits -= logits.max(axis=1, keepdims=True)
        prob = np.exp(logits)
        prob /= prob.sum(axis=1, keepdims=True)
        err = (prob - onehot) / n
        proj.weight.grad = pooled.T @ err
        proj.bias.grad = err.sum(axis=0)
        nn.adam_step([proj.weight, proj.bias], lr)
    logits = pooled @ proj.weight.data + proj.bias.data
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(n), speakers]))


@dataclass
class AcousticReport:
    history: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def final(self) -> dict:
        return self.history[-1] if self.history else {}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def validation_loss(model: AcousticModel, examples: Sequence[AcousticExample]) -> float:
    """Mean final-output weighted L1 over examples (no gradient)."""
    w = model.config.weights
    vals = []
    for ex in examples:
        pred = model.predict(ex.rows, speaker=ex.speaker)
        vals.append(float(np.mean(np.abs(pred - ex.target) * w)))
    return math.fsum(vals) / len(vals)


def _load_init(model: AcousticModel, init):
    if isinstance(init, AcousticModel):
        state = init.net_.state_dict()
    elif isinstance(init, (str, Path)):
        meta, state = nn.load_checkpoint(init)
        if meta.get("kind") != "acoustic":
            raise ShapeError(f"{init}: not an acoustic checkpoint")
    else:
        raise TypeError("init must be a checkpoint path or a fitted AcousticModel")
    model.net_.load_state_dict(state)


def train_acoustic(model: AcousticModel, corpus: Sequence[AcousticExample], recipe: str,
                   epochs: int, lr: float, seed: int, init=None) -> AcousticReport:
    """Pretrain on several singers with DAT, or fine-tune a checkpoint on one singer.

    Both recipes length-regulate with ground-truth durations. Fine-tuning
    requires ``init`` and turns the adversarial branch off.
    """
    from .duration import cosine_lr

    if recipe not in RECIPES:
        raise ValueError(f"unknown recipe {recipe!r}; expected one of {RECIPES}")
    if not corpus:
        raise ValueError("empty corpus")
    if recipe == "finetune_single" and init is None:
        raise ValueError("finetune_single requires a pretrained checkpoint")
    model.seed = seed
    model.build()
    if init is not None:
        _load_init(model, init)
    use_dat = recipe == "pretrain_multi_singer" and model.use_dat and model.n_speakers > 1
    if recipe == "finetune_single" and len({ex.speaker for ex in corpus}) > 1:
        raise ValueError("finetune_single expects examples from one singer")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    n_val = int(round(len(corpus) * model.holdout)) if len(corpus) > 1 else 0
    val = [corpus[i] for i in sorted(order[:n_val])]
    train = [corpus[i] for i in sorted(order[n_val:])]
    params = model.net_.parameters()
    clf_ids = {id(p) for p in model.net_.classifier.parameters()}
    body = [p for p in params if id(p) not in clf_ids]
    clf = model.net_.classifier.parameters()
    report = AcousticReport(config={"recipe": recipe, "epochs": epochs, "lr": lr, "seed": seed,
                                    "use_dat": use_dat, "progressive": model.progressive,
                                    "w_f0": model.w_f0, "grl_lambda": model.grl_lambda,
                                    "classifier_steps": model.classifier_steps,
                                    "n_train": len(train), "n_val": len(val)})
    speakers = np.array([ex.speaker for ex in train])
    pooled = pooled_encoder_states(model, train) if use_dat and model.classifier_steps else None
    for epoch in range(1, epochs + 1):
        step_lr = cosine_lr(lr, epoch, epochs, model.final_lr_ratio)
        recon_vals, adv_vals = [], []
        perm = rng.permutation(len(train))
        for start in range(0, len(perm), model.batch_size):
            batch = perm[start:start + model.batch_size]
            if pooled is not None:
                classifier_best_response(model, pooled, speakers, step_lr * model.classifier_lr_scale,
                                         model.classifier_steps)
            model.net_.zero_grad()
            total = None
            for i in batch:
                recon, adv, mean_state = _forward(model, train[i], use_dat)
                if pooled is not None:
                    pooled[i] = mean_state
                recon_vals.append(recon.item())
                adv_vals.append(adv.item())
                loss = recon + adv
                total = loss if total is None else total + loss
            nn.mul(total, 1.0 / len(batch)).backward()
            if model.clip_norm:
                nn.clip_grad_norm(params, model.clip_norm)
            nn.adam_step(body, step_lr)
            if pooled is None:
                nn.adam_step(clf, step_lr * model.classifier_lr_scale)
        entry = {"epoch": epoch, "loss": math.fsum(recon_vals) / len(recon_vals),
                 "dat_loss": math.fsum(adv_vals) / len(adv_vals)}
        if val:
            entry["val_loss"] = validation_loss(model, val)
        report.history.append(entry)
        logger.info("acoustic epoch %d %s", epoch, entry)
    model.report_ = report
    return report


def pooled_encoder_states(model: AcousticModel, examples: Sequence[AcousticExample]) -> np.ndarray:
    return np.stack([encode(model, ex.rows).data.mean(axis=0) for ex in examples])


def speaker_probe_accuracy(model: AcousticModel, examples: Sequence[AcousticExample],
                           seed: int = 0, folds: int = 5) -> float:
    """Cross-validated accuracy of a fresh logistic-regression speaker probe
    on mean-pooled frozen encoder states."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import StratifiedKFold, cross_val_score
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    X = pooled_encoder_states(model, examples)
    y = np.array([ex.speaker for ex in examples])
    probe = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000))
    cv = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return float(np.mean(cross_val_score(probe, X, y, cv=cv)))
