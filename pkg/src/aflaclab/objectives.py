"""Training procedures: plain classifier, adversarial invariance, and the
accuracy-constrained alignment variants.

All four methods share one step structure. The adversarial ones alternate
two phases per step: first the discriminator descends its own prediction
loss with the encoder frozen, then encoder and classifier descend the
method's composite objective with the discriminator's parameters frozen
(gradients still flow through the features).

    cnn        minimize L_y over (encoder, classifier)
    dan        phase 2 minimizes L_y - gamma_eff * L_d  (encoder ascends the
               discriminator's loss: the minimax game)
    aflac      phase 2 minimizes gamma_eff * L_KL + L_y, where L_KL aligns
               the discriminator's rows with the class-conditional domain
               distribution p(d|y)
    aflac_abl  same as aflac with alignment target p(d) in every row
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nets
from .errors import MissingAlignmentTargetError, PreconditionError
from .infostats import ConditionalTable, JointCounts, estimate_d_given_y, marginal_rows
from .nets import ArchitectureSpec, ModelBundle, Tape, apply_spec, build_model
from .optim import LrSchedule, rmsprop_update

METHODS = ("cnn", "dan", "aflac_abl", "aflac")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "cnn"
    gamma: float = 1.0
    lr: float = 5e-4
    batch_size: int = 128
    iterations: int = 10000
    anneal: bool = True
    seed: int = 0
    alpha: float = 0.0
    k_disc: int = 1
    eval_interval: int = 0  # 0 -> one epoch-equivalent
    dtype: str = "float32"
    lr_decay_steps: tuple[int, ...] = field(default_factory=tuple)
    lr_decay_rate: float = 0.1
    enc_spec: ArchitectureSpec | None = None
    cls_spec: ArchitectureSpec | None = None
    disc_spec: ArchitectureSpec | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise PreconditionError(f"unknown method {self.method!r}")
        if self.iterations <= 0:
            raise PreconditionError("iterations must be positive")
        if self.gamma < 0:
            raise PreconditionError("gamma must be nonnegative")


@dataclass(frozen=True)
class AlignmentTarget:
    """Per-class target rows for the discriminator's output distribution."""

    table: ConditionalTable

    def rows_for(self, y_batch: np.ndarray) -> np.ndarray:
        return self.table.t[y_batch]

    @classmethod
    def from_joint(cls, joint: JointCounts, method: str, alpha: float = 0.0):
        if method == "aflac":
            return cls(estimate_d_given_y(joint, alpha=alpha))
        if method == "aflac_abl":
            return cls(marginal_rows(joint))
        return None


@dataclass
class StepMetrics:
    l_y: float = math.nan
    l_d: float = math.nan
    l_kld: float = math.nan
    gamma_eff: float = 0.0


# ---------------------------------------------------------------- losses


def loss_classification(log_probs_y, y_batch: np.ndarray):
    """Mean negative log-likelihood of the true classes."""
    t = log_probs_y if isinstance(log_probs_y, ad.Tensor) else ad.const(log_probs_y)
    return ad.nll_mean(t, np.asarray(y_batch))


def loss_discrimination(log_probs_d, d_batch: np.ndarray):
    """Mean negative log-likelihood of the true domains."""
    t = log_probs_d if isinstance(log_probs_d, ad.Tensor) else ad.const(log_probs_d)
    return ad.nll_mean(t, np.asarray(d_batch))


def loss_kld_alignment(target: AlignmentTarget, y_batch: np.ndarray, log_probs_d):
    """Mean KL from each example's target row to the predicted domain row."""
    t = log_probs_d if isinstance(log_probs_d, ad.Tensor) else ad.const(log_probs_d)
    rows = target.rows_for(np.asarray(y_batch))
    return ad.kld_mean(rows, t)


def anneal_gamma(gamma: float, progress: float) -> float:
    """Ramp from 0 toward gamma along training progress in [0, 1]."""
    if not 0.0 <= progress <= 1.0:
        raise PreconditionError(f"progress must be in [0, 1], got {progress}")
    return gamma * (2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0)


# ------------------------------------------------------------ train steps


def _phase1_update(bundle: ModelBundle, x, d_batch, cfg, lr: float):
    """Discriminator step on frozen features."""
    h = apply_spec(bundle.enc_spec, bundle.enc, x)
    l_d_val = math.nan
    for _ in range(max(1, cfg.k_disc)):
        tape = Tape()
        logd = apply_spec(bundle.disc_spec, bundle.disc, ad.const(h), tape, prefix="D.")
        l_d = loss_discrimination(logd, d_batch)
        ad.backward(l_d)
        grads = tape.gradients(l_d, bundle.disc, "D.")
        bundle.disc, bundle.disc_state = rmsprop_update(
            bundle.disc, grads, bundle.disc_state, lr=lr)
        l_d_val = l_d.item()
    return l_d_val


def train_step(bundle: ModelBundle, batch, cfg: TrainConfig,
               target: AlignmentTarget | None, progress: float,
               lr: float | None = None):
    """One alternating update; returns (bundle, StepMetrics).

    The bundle's parameter stores are replaced, never mutated, so callers
    may hold snapshots of earlier states.
    """
    x, y_batch, d_batch = batch
    if cfg.method in ("aflac", "aflac_abl") and target is None:
        raise MissingAlignmentTargetError(f"{cfg.method} requires an alignment target")
    lr = cfg.lr if lr is None else lr
    gamma_eff = anneal_gamma(cfg.gamma, progress) if cfg.anneal else cfg.gamma
    metrics = StepMetrics(gamma_eff=gamma_eff if cfg.method != "cnn" else 0.0)

    if cfg.method != "cnn":
        metrics.l_d = _phase1_update(bundle, x, d_batch, cfg, lr)

    # phase 2: encoder + classifier
    tape = Tape()
    h = apply_spec(bundle.enc_spec, bundle.enc, ad.const(x), tape, prefix="E.")
    logy = apply_spec(bundle.cls_spec, bundle.cls, h, tape, prefix="M.")
    l_y = loss_classification(logy, y_batch)
    metrics.l_y = l_y.item()
    loss = l_y
    if cfg.method == "dan" and gamma_eff != 0.0:
        logd = apply_spec(bundle.disc_spec, bundle.disc, h, tape, prefix="D.")
        l_d2 = loss_discrimination(logd, d_batch)
        loss = ad.add(l_y, ad.scale(l_d2, -gamma_eff))
    elif cfg.method in ("aflac", "aflac_abl") and gamma_eff != 0.0:
        logd = apply_spec(bundle.disc_spec, bundle.disc, h, tape, prefix="D.")
        l_kld = loss_kld_alignment(target, y_batch, logd)
        metrics.l_kld = l_kld.item()
        loss = ad.add(ad.scale(l_kld, gamma_eff), l_y)
    ad.backward(loss)
    enc_grads = tape.gradients(loss, bundle.enc, "E.")
    cls_grads = tape.gradients(loss, bundle.cls, "M.")
    bundle.enc, bundle.enc_state = rmsprop_update(bundle.enc, enc_grads,
                                                  bundle.enc_state, lr=lr)
    bundle.cls, bundle.cls_state = rmsprop_update(bundle.cls, cls_grads,
                                                  bundle.cls_state, lr=lr)
    return bundle, metrics


# ------------------------------------------------------------------- fit


@dataclass
class HistoryRow:
    iteration: int
    l_y: float
    l_d: float
    l_kld: float
    gamma_eff: float
    val_acc: float


def _nanmean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def _stack_examples(examples, dtype):
    xs = np.stack([ex.x for ex in examples]).astype(dtype)
    if xs.ndim == 3:  # single-channel images
        xs = xs[:, None, :, :]
    ys = np.array([ex.y for ex in examples], dtype=np.int64)
    ds = np.array([ex.d for ex in examples], dtype=np.int64)
    return xs, ys, ds


def predict_classes(bundle: ModelBundle, x: np.ndarray, batch: int = 512) -> np.ndarray:
    out = []
    for i in range(0, len(x), batch):
        h = nets.encode(bundle, x[i:i + batch])
        out.append(nets.classify(bundle, h).argmax(axis=1))
    return np.concatenate(out)


def _make_bundle(cfg: TrainConfig, x_shape, n_classes: int, n_domains: int) -> ModelBundle:
    enc = cfg.enc_spec or nets.default_encoder_spec(in_ch=x_shape[1])
    cls = cfg.cls_spec or nets.default_classifier_spec(n_classes, hidden=enc.out_width())
    disc = None
    if cfg.method != "cnn":
        disc = cfg.disc_spec or nets.default_discriminator_spec(
            n_domains, hidden=enc.out_width())
    return build_model(enc, cls, disc, seed=cfg.seed, dtype=np.dtype(cfg.dtype), lr=cfg.lr)


def fit(cfg: TrainConfig, train_split, val_split,
        alignment_source: JointCounts | None = None):
    """Train on the source split with validation-based checkpoint selection.

    Minibatches are seeded shuffles; every `eval_interval` steps the
    validation accuracy is measured and the best-scoring parameters are
    retained. Returns (best bundle, history rows).
    """
    if not train_split or not val_split:
        raise PreconditionError("train and validation splits must be nonempty")
    dtype = np.dtype(cfg.dtype)
    x_tr, y_tr, d_tr = _stack_examples(train_split, dtype)
    x_va, y_va, _ = _stack_examples(val_split, dtype)
    n_classes = int(max(y_tr.max(), y_va.max())) + 1
    n_domains = int(d_tr.max()) + 1
    bundle = _make_bundle(cfg, x_tr.shape, n_classes, n_domains)
    target = AlignmentTarget.from_joint(alignment_source, cfg.method, cfg.alpha) \
        if alignment_source is not None else None
    schedule = LrSchedule(cfg.lr, cfg.lr_decay_steps, cfg.lr_decay_rate)
    eval_interval = cfg.eval_interval or max(1, math.ceil(len(train_split) / cfg.batch_size))

    rng = np.random.default_rng(np.random.SeedSequence([8080, cfg.seed]))
    order = rng.permutation(len(x_tr))
    cursor = 0
    history: list[HistoryRow] = []
    best_acc = -1.0
    best = bundle.snapshot()
    window: list[StepMetrics] = []
    denom = max(1, cfg.iterations - 1)
    for step in range(cfg.iterations):
        if cursor >= len(order):
            order = rng.permutation(len(x_tr))
            cursor = 0
        idx = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        batch = (x_tr[idx], y_tr[idx], d_tr[idx])
        bundle, metrics = train_step(bundle, batch, cfg, target,
                                     progress=step / denom, lr=schedule.at(step))
        window.append(metrics)
        if (step + 1) % eval_interval == 0 or step + 1 == cfg.iterations:
            pred = predict_classes(bundle, x_va)
            acc = float((pred == y_va).mean())
            history.append(HistoryRow(
                iteration=step + 1,
                l_y=_nanmean(m.l_y for m in window),
                l_d=_nanmean(m.l_d for m in window),
                l_kld=_nanmean(m.l_kld for m in window),
                gamma_eff=window[-1].gamma_eff,
                val_acc=acc,
            ))
            window = []
            if acc > best_acc:
                best_acc = acc
                best = bundle.snapshot()
    return best, history


HISTORY_HEADER = "iteration,L_y,L_d,L_DKL,gamma_eff,val_acc"


def history_rows_csv(history: list[HistoryRow]) -> str:
    lines = [HISTORY_HEADER]
    for r in history:
        lines.append(f"{r.iteration},{r.l_y:.6f},{r.l_d:.6f},{r.l_kld:.6f},"
                     f"{r.gamma_eff:.6f},{r.val_acc:.6f}")
    return "\n".join(lines) + "\n"
