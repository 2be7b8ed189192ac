"""The alternating loop: cluster the memory bank, then train on pseudo-labels.

Clustering runs at the epoch boundaries 0, T, 2T, ... and once more after
the last epoch, so ``epochs=6, T=2`` clusters four times (before epochs
0, 2, 4 and after epoch 5).  Each iteration:

1. PK-sample a batch from the current pseudo-labels;
2. embed strong views with the student (train mode) and weak views with
   the teacher (inference mode);
3. recompute centroids from the live bank;
4. total loss and its embedding gradient;
5. backprop through the student and take an Adam step;
6. EMA the teacher toward the student;
7. momentum-update the sampled memory slots with the post-EMA teacher's
   weak-view embeddings, in batch order.

The trainer only ever sees :class:`~l2gdistill.synthdata.UnlabeledData`.
Ground truth enters through the optional ``monitor`` callback, which the
caller builds and which is used for reporting alone.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .clustering import DbscanParams, dbscan
from .errors import ConfigError, NonFiniteLoss, SamplerError
from .losses import BatchContext, total_loss
from .memory import MemoryBank
from .numerics import seeded_rng
from .synthdata import AugmentConfig, augment_strong, augment_weak

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    recluster_every: int = 2
    P: int = 8
    H: int = 4
    tau: float = 0.05
    tau_s: float = 1.0
    tau_t: float = 0.5
    momentum: float = 0.3
    gamma: float = 0.2
    ema: float = 0.99
    lr: float = 3e-3
    weight_decay: float = 5e-4
    lr_step: int = 30
    lr_decay: float = 0.1
    hidden: int = 64
    d_emb: int = 16
    whiten_init: bool = True
    whiten_shrink: float = 0.5
    eps: float = 0.23
    min_samples: int = 5
    local: bool = True
    mining: bool = True
    distill: bool = True
    distill_outliers: bool = True
    sample_outliers: bool = True
    weak_noise: float = 0.01
    mask_prob: float = 0.0
    jitter: float = 0.1
    strong_noise: float = 0.05
    checkpoint_every: bool = False
    seed: int = 0

    def validate(self, n=None):
        if self.H < 2:
            raise ConfigError(f"H: need at least 2 instances per identity, got {self.H}")
        if self.P < 1:
            raise ConfigError(f"P: must be >= 1, got {self.P}")
        if n is not None and self.P * self.H > n:
            raise ConfigError(f"P*H = {self.P * self.H} exceeds dataset size {n}")
        for name in ("tau", "tau_s", "tau_t"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: temperature must be > 0")
        for name in ("momentum", "ema"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name}: must lie in [0, 1]")
        if self.epochs < 0:
            raise ConfigError("epochs: must be >= 0")
        if self.recluster_every < 1:
            raise ConfigError("recluster_every: must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be >= 0")
        DbscanParams(self.eps, self.min_samples).validate()
        return self

    @property
    def dbscan(self):
        return DbscanParams(self.eps, self.min_samples)

    @property
    def augment(self):
        return AugmentConfig(self.weak_noise, self.mask_prob, self.jitter, self.strong_noise)


# the defaults above are the calibrated desk-scale values; "paper" restores
# the published schedule, batch, optimizer, DBSCAN eps and masking
PRESETS = {
    "desk": TrainConfig(),
    "paper": TrainConfig(epochs=70, P=16, H=16, ema=0.999, lr=3.5e-4, eps=0.5, mask_prob=0.2),
}

# variants mirroring the ablation rows: centroid memory contrast alone,
# plus local batch contrast, plus mining, plus distillation
ABLATIONS = {
    "global": dict(local=False, mining=False, distill=False),
    "global+local": dict(local=True, mining=False, distill=False),
    "global+local+mining": dict(local=True, mining=True, distill=False),
    "global+distill": dict(local=False, mining=False, distill=True),
    "full": dict(local=True, mining=True, distill=True),
}

REPORT_COLUMNS = (
    "epoch", "lr", "loss_total", "loss_global", "loss_local", "loss_distill",
    "num_clusters", "num_outliers", "pair_precision", "pair_recall", "pair_f1",
)


@dataclass
class EpochReport:
    epoch: int
    lr: float
    loss_total: float
    loss_global: float
    loss_local: float
    loss_distill: float
    num_clusters: int
    num_outliers: int
    pair_precision: float = float("nan")
    pair_recall: float = float("nan")
    pair_f1: float = float("nan")

    def row(self):
        return [getattr(self, c) for c in REPORT_COLUMNS]


@dataclass
class TrainState:
    student: enc.EncoderState
    teacher: enc.EncoderState
    optimizer: enc.OptimizerState
    bank: MemoryBank
    rng: np.random.Generator
    epoch: int = 0


@dataclass
class FitResult:
    state: TrainState
    reports: list
    labeling: object
    clustering_passes: int
    labeling_history: list = field(default_factory=list)


def pk_sample(labeling, P, H, rng, include_outliers=True):
    """Draw P pseudo-identities, then H instances from each.

    Instances are drawn without replacement when a class has at least H
    members and with replacement otherwise, so a singleton outlier yields H
    replicas of itself.  Returns ``(indices, replica_tags, labels)``.
    """
    pool = np.arange(labeling.num_classes if include_outliers else labeling.num_clusters)
    if pool.size < P:
        raise SamplerError(f"need {P} pseudo-identities, only {pool.size} available")
    chosen = rng.choice(pool, size=P, replace=False)
    order = np.argsort(labeling.labels, kind="stable")
    sorted_labels = labeling.labels[order]
    idx, tags, labs = [], [], []
    for lab in chosen:
        lo, hi = np.searchsorted(sorted_labels, [lab, lab + 1])
        members = np.sort(order[lo:hi])
        pick = rng.choice(members, size=H, replace=members.size < H)
        idx.extend(pick.tolist())
        tags.extend(range(H))
        labs.extend([int(lab)] * H)
    return np.asarray(idx, dtype=np.int64), np.asarray(tags, dtype=np.int64), np.asarray(labs, dtype=np.int64)


def init_state(data, cfg):
    """Fresh student/teacher pair, optimizer and memory bank for ``data``.

    The student's BN running statistics start at the full-data statistics of
    its own pre-normalization activations, standing in for a pretrained
    backbone whose statistics are already meaningful.
    """
    rng = seeded_rng(cfg.seed)
    raw = np.asarray(data.raw, dtype=np.float64)
    scale = float(np.sqrt(np.mean(raw * raw)))
    wh = enc.whitening(raw, cfg.whiten_shrink) if cfg.whiten_init else None
    student = enc.init_encoder(rng, raw.shape[1], cfg.hidden, cfg.d_emb, input_scale=scale, whiten=wh)
    _calibrate_bn(student, raw)
    teacher = student.copy()
    opt = enc.OptimizerState(base_lr=cfg.lr, weight_decay=cfg.weight_decay,
                             step_size=cfg.lr_step, decay=cfg.lr_decay)
    bank = MemoryBank.initialize(teacher, raw)
    return TrainState(student, teacher, opt, bank, rng)


def _calibrate_bn(state, raw):
    p = state.params
    z = np.tanh(raw @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"]
    state.running_mean = z.mean(axis=0)
    state.running_var = z.var(axis=0, ddof=1) if len(z) > 1 else np.ones(z.shape[1])


def train_epoch(state, data, cfg, epoch):
    """One pass of floor(N / (P*H)) iterations over the current pseudo-labels."""
    bank = state.bank
    labeling = bank.labeling
    rng = state.rng
    raw = data.raw
    aug = cfg.augment
    sigma = getattr(data, "noise_scale", 1.0)
    iters = len(raw) // (cfg.P * cfg.H)
    sums = {"total": 0.0, "global": 0.0, "local": 0.0, "distill": 0.0}
    if cfg.distill and bank.num_clusters == 0:
        log.warning("epoch %d: no clusters, distillation skipped", epoch)
    for _ in range(iters):
        idx, _tags, labels = pk_sample(labeling, cfg.P, cfg.H, rng, cfg.sample_outliers)
        x = raw[idx]
        strong = augment_strong(x, rng, aug.mask_prob, aug.jitter, aug.strong_noise * sigma)
        weak = augment_weak(x, rng, aug.weak_noise * sigma)
        q, cache = enc.forward(state.student, strong, "train")
        qt, _ = enc.forward(state.teacher, weak, "inference")
        centroids = bank.compute_centroids() if bank.num_clusters else None
        ctx = BatchContext(q, qt, labels, idx)
        loss = total_loss(ctx, bank, centroids, gamma=cfg.gamma, tau=cfg.tau,
                          tau_s=cfg.tau_s, tau_t=cfg.tau_t, local=cfg.local,
                          mining=cfg.mining, distill=cfg.distill,
                          distill_outliers=cfg.distill_outliers)
        if not (math.isfinite(loss.value) and np.all(np.isfinite(loss.grad))):
            raise NonFiniteLoss(f"non-finite loss at epoch {epoch}", idx.tolist())
        grads = enc.backward(cache, loss.grad)
        enc.adam_step(state.optimizer, state.student.params, grads, epoch)
        enc.ema_update(state.teacher, state.student, cfg.ema)
        if cfg.momentum < 1.0:
            qt_new, _ = enc.forward(state.teacher, weak, "inference")
            for j, slot in enumerate(idx):
                bank.momentum_update(int(slot), qt_new[j], cfg.momentum)
        for key in sums:
            sums[key] += loss.terms.get(key, 0.0)
    n = max(iters, 1)
    state.epoch = epoch + 1
    return EpochReport(
        epoch=epoch,
        lr=state.optimizer.lr_at(epoch),
        loss_total=sums["total"] / n,
        loss_global=sums["global"] / n,
        loss_local=sums["local"] / n,
        loss_distill=sums["distill"] / n,
        num_clusters=labeling.num_clusters,
        num_outliers=labeling.num_outliers,
    )


def _recluster(state, cfg):
    labeling = dbscan(state.bank.features, cfg.dbscan)
    state.bank.set_labeling(labeling)
    return labeling


def fit(data, cfg, monitor=None, on_checkpoint=None, state=None):
    """Train from scratch (or from ``state``) for ``cfg.epochs`` epochs.

    ``monitor(labeling) -> dict`` may supply pair precision/recall/F1 for the
    report; ``on_checkpoint(state, partial)`` is called every T epochs when
    ``cfg.checkpoint_every`` is set, and always at the end.
    """
    cfg.validate(len(data))
    if state is None:
        state = init_state(data, cfg)
    history = [_recluster(state, cfg)]
    reports = []
    for epoch in range(cfg.epochs):
        if epoch > 0 and epoch % cfg.recluster_every == 0:
            history.append(_recluster(state, cfg))
            if cfg.checkpoint_every and on_checkpoint is not None:
                on_checkpoint(state, True)
        report = train_epoch(state, data, cfg, epoch)
        if monitor is not None:
            s = monitor(state.bank.labeling)
            report.pair_precision, report.pair_recall, report.pair_f1 = s["precision"], s["recall"], s["f1"]
        log.info("epoch %d: loss %.4f K=%d outliers=%d", epoch, report.loss_total,
                 report.num_clusters, report.num_outliers)
        reports.append(report)
    if cfg.epochs > 0:
        history.append(_recluster(state, cfg))
    if on_checkpoint is not None:
        on_checkpoint(state, False)
    return FitResult(state, reports, state.bank.labeling, len(history), history)


def replace(cfg, **kw):
    return dataclasses.replace(cfg, **kw)
