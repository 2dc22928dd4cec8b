"""Training procedures: further self-supervised pre-training with full or
partial unfreeze, supervised fine-tuning, and linear probing.

Each procedure runs as two phases. Phase 1 always trains a fresh head
against a fully frozen encoder for one epoch at a fixed learning rate;
phase 2 applies the procedure-specific freeze policy and a single-cycle
schedule whose maximum rate comes from a learning-rate search unless pinned
in the config. Frozen parameters (and the statistics buffers of frozen
normalization layers) stay byte-identical through a phase.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import augment, data, losses, models, stats
from .schedule import ScheduleConfig, lr_find, one_cycle
from .seeding import derive_seed, rng_for


class ProtocolError(RuntimeError):
    """Configuration or dataset precondition violated."""


@dataclass(frozen=True)
class ScheduleParams:
    """Overridable knobs of the single-cycle schedule."""

    div: float = 25.0
    final_div: float = 1e4
    pct_ramp: float = 0.25
    m_max: float = 0.95
    m_min: float = 0.85
    interp: str = "cosine"

    def build(self, max_lr: float, total_steps: int) -> ScheduleConfig:
        return ScheduleConfig(
            max_lr=max_lr,
            total_steps=total_steps,
            div=self.div,
            final_div=self.final_div,
            pct_ramp=self.pct_ramp,
            m_max=self.m_max,
            m_min=self.m_min,
            interp=self.interp,
        )


@dataclass(frozen=True)
class PretrainConfig:
    """Two-branch further pre-training configuration."""

    mode: str = "ssl"
    epochs_phase1: int = 1
    epochs_phase2: int = 100
    batch_size: int = 128
    image_size: int = 256
    projector_width: int = 8192
    projector_layers: int = 3
    loss: losses.LossConfig = field(default_factory=losses.LossConfig)
    l21_groups: str = "rows"
    lr_phase1: float = 1e-3
    lr_max: float | None = None
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    include_cutout: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ssl", "ssl_p"):
            raise ValueError(f"mode must be 'ssl' or 'ssl_p', got {self.mode!r}")
        if min(self.epochs_phase1, self.epochs_phase2) < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch_size >= 2")


@dataclass(frozen=True)
class TrainConfig:
    """Supervised fine-tune / linear-probe configuration."""

    epochs_phase1: int = 1
    epochs_phase2: int = 40
    batch_size: int = 64
    image_size: int = 256
    lr_phase1: float = 1e-3
    lr_max: float | None = None
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    tta_k: int = 3
    freeze_encoder: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs_phase1, self.epochs_phase2) < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.tta_k < 1:
            raise ValueError("tta_k must be >= 1")


@dataclass
class RunRecord:
    """What every training run persists besides weights."""

    seed: int
    plan_hash: str
    phase_losses: dict[str, list[float]]
    wall_time_s: float = 0.0
    archive_path: str = ""
    metrics: stats.RunMetrics | None = None


def plan_hash(cfg) -> str:
    """Stable digest of a config dataclass; excludes output locations by
    construction since those are never config fields."""
    blob = json.dumps(asdict(cfg), sort_keys=True, default=repr).encode()
    return hashlib.blake2b(blob, digest_size=8).hexdigest()


def _index_batches(n: int, batch_size: int, rng: np.random.Generator, min_size: int = 2) -> list[np.ndarray]:
    order = rng.permutation(n)
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    return [c for c in chunks if len(c) >= min_size]


def _adam(params, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999))


def _apply_schedule(opt: torch.optim.Optimizer, lr: float, momentum: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr
        group["betas"] = (momentum, 0.999)


def _to_chw_batch(batch: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))).float()


def _save_encoder(encoder: torch.nn.Module, out_dir: Path | None, name: str, provenance: str) -> str:
    if out_dir is None:
        return ""
    weights = Path(out_dir) / "weights"
    weights.mkdir(parents=True, exist_ok=True)
    path = weights / f"{name}.archive"
    models.save_archive(encoder, path, provenance=provenance)
    return str(path)


def _write_losses_csv(out_dir: Path | None, phase_losses: dict[str, list[float]]) -> None:
    if out_dir is None:
        return
    lines = ["phase,epoch,mean_loss"]
    for phase, vals in phase_losses.items():
        for epoch, v in enumerate(vals):
            lines.append(f"{phase},{epoch},{v!r}")
    (Path(out_dir) / "losses.csv").write_text("\n".join(lines) + "\n")


def _bt_loss(model: models.ComposedModel, va: torch.Tensor, vb: torch.Tensor, cfg: PretrainConfig) -> torch.Tensor:
    za = losses.normalize_batch(losses.EmbeddingBatch(model(va)))
    zb = losses.normalize_batch(losses.EmbeddingBatch(model(vb)))
    c = losses.cross_correlation(za, zb)
    return losses.sparse_bt_loss(c, model.head.final_weight, cfg.loss, cfg.l21_groups)


def _find_lr_max(
    model: torch.nn.Module,
    prepared: Sequence[object],
    loss_fn: Callable[[torch.nn.Module, object, int], torch.Tensor],
    override: float | None,
) -> float:
    if override is not None:
        return override
    result = lr_find(model, _adam, loss_fn, prepared)
    if result.no_valley or result.suggestion is None:
        raise ProtocolError(
            "learning-rate search found no valley; set an explicit maximum learning rate"
        )
    return result.suggestion


def further_pretrain(
    encoder: torch.nn.Module,
    corpus: data.Dataset,
    cfg: PretrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[torch.nn.Module, RunRecord]:
    """Two-phase self-supervised pre-training; returns the bare encoder.

    Phase 1 fits a fresh projector against the frozen encoder for one epoch
    at a fixed rate. Phase 2 unfreezes either the whole encoder ('ssl') or
    only its tagged final block ('ssl_p') and trains under the single-cycle
    schedule with the sparsity-regularized redundancy-reduction loss. The
    projector is discarded.
    """
    if len(corpus) == 0:
        raise ProtocolError("pre-training corpus is empty")
    if cfg.mode == "ssl_p":
        models.bottleneck_params(encoder)  # fails early on untagged encoders
    start = time.perf_counter()
    out_dir = Path(out_dir) if out_dir is not None else None

    images = corpus.load_all(cfg.image_size)
    pol_a, pol_b = augment.view_pair_policies(cfg.include_cutout)
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(cfg.seed, "projector"))
        head = models.Projector(
            encoder.output_dim,
            models.ProjectorSpec(width=cfg.projector_width, layers=cfg.projector_layers),
        )
    model = models.ComposedModel(encoder, head)
    _save_encoder(encoder, out_dir, "encoder_input", "pretrain-input")

    def run_epoch(opt, epoch_tag: int, schedule_cfg: ScheduleConfig | None, step0: int) -> tuple[float, int]:
        batches = _index_batches(len(corpus), cfg.batch_size, rng_for(cfg.seed, "order", epoch_tag))
        total, step = 0.0, step0
        for idx in batches:
            va, vb = augment.make_view_pair(
                images[idx], pol_a, pol_b,
                global_seed=cfg.seed, epoch=epoch_tag, sample_indices=idx,
            )
            if schedule_cfg is not None:
                lr, m = one_cycle(step, schedule_cfg)
                _apply_schedule(opt, lr, m)
            loss = _bt_loss(model, _to_chw_batch(va), _to_chw_batch(vb), cfg)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach())
            step += 1
        return total / max(1, len(batches)), step

    phase_losses: dict[str, list[float]] = {"phase1": [], "phase2": []}

    # phase 1: projector only
    models.set_trainable(model, lambda name: name.startswith("head."))
    models.train_with_freeze(model)
    opt = _adam(models.trainable_parameters(model), cfg.lr_phase1)
    for epoch in range(cfg.epochs_phase1):
        mean_loss, _ = run_epoch(opt, epoch, None, 0)
        phase_losses["phase1"].append(mean_loss)
    phase1_path = _save_encoder(encoder, out_dir, "encoder_phase1", "pretrain-phase1")

    # phase 2: encoder unfrozen per mode
    if cfg.epochs_phase2 > 0:
        if cfg.mode == "ssl":
            models.unfreeze_all(model)
        else:
            block = models.bottleneck_params(model)
            models.set_trainable(model, lambda name: name.startswith("head.") or name in block)
        models.train_with_freeze(model)

        find_batches = _index_batches(len(corpus), cfg.batch_size, rng_for(cfg.seed, "lrfind-order"))[:4]
        prepared = []
        for idx in find_batches:
            va, vb = augment.make_view_pair(
                images[idx], pol_a, pol_b,
                global_seed=cfg.seed, epoch=-1, sample_indices=idx,
            )
            prepared.append((_to_chw_batch(va), _to_chw_batch(vb)))
        lr_max = _find_lr_max(
            model, prepared, lambda mdl, batch, i: _bt_loss(mdl, batch[0], batch[1], cfg), cfg.lr_max
        )
        models.train_with_freeze(model)

        steps_per_epoch = len(_index_batches(len(corpus), cfg.batch_size, rng_for(cfg.seed, "order", 0)))
        sched = cfg.schedule.build(lr_max, max(1, cfg.epochs_phase2 * steps_per_epoch))
        opt = _adam(models.trainable_parameters(model), sched.start_lr)
        step = 0
        for epoch in range(cfg.epochs_phase2):
            mean_loss, step = run_epoch(opt, cfg.epochs_phase1 + epoch, sched, step)
            phase_losses["phase2"].append(mean_loss)

    final_path = _save_encoder(encoder, out_dir, "encoder_final", "pretrain-final")
    _write_losses_csv(out_dir, phase_losses)
    record = RunRecord(
        seed=cfg.seed,
        plan_hash=plan_hash(cfg),
        phase_losses=phase_losses,
        wall_time_s=time.perf_counter() - start,
        archive_path=final_path or phase1_path,
    )
    _write_run_record(out_dir, record)
    return encoder, record


def evaluate_tta(
    model: torch.nn.Module,
    test: data.Dataset,
    *,
    image_size: int,
    k: int = 3,
    seed: int = 0,
    chunk: int = 64,
) -> tuple[float, float, np.ndarray]:
    """Accuracy, weighted F1, and per-class F1 on a test split with k-view
    augmentation averaging."""
    if len(test) == 0:
        raise ProtocolError("test split is empty")
    images = test.load_all(image_size)
    labels = test.labels()
    classes = test.classes
    was_training = model.training
    model.eval()
    preds: list[str] = []
    with torch.no_grad():
        for lo in range(0, len(test), chunk):
            hi = min(lo + chunk, len(test))
            views = []
            for i in range(lo, hi):
                views.extend(augment.tta_views(images[i], k, seed=seed, sample_index=i))
            batch = _to_chw_batch(np.stack(views))
            probs = torch.softmax(model(batch), dim=1)
            probs = probs.reshape(hi - lo, k, -1).mean(dim=1)
            preds.extend(classes[int(j)] for j in probs.argmax(dim=1))
    model.train(was_training)
    acc = stats.accuracy(preds, labels)
    wf1 = stats.weighted_f1(preds, labels, classes)
    pcf = stats.per_class_f1(preds, labels, classes)
    return acc, wf1, pcf


def _supervised_phase(
    model: models.ComposedModel,
    images: np.ndarray,
    targets: torch.Tensor,
    cfg: TrainConfig,
    *,
    epochs: int,
    epoch_offset: int,
    opt: torch.optim.Optimizer,
    schedule_cfg: ScheduleConfig | None,
) -> list[float]:
    epoch_means = []
    step = 0
    for epoch in range(epochs):
        tag = epoch_offset + epoch
        batches = _index_batches(len(targets), cfg.batch_size, rng_for(cfg.seed, "order", tag), min_size=2)
        total = 0.0
        for idx in batches:
            x = augment.train_augment(images[idx], global_seed=cfg.seed, epoch=tag, sample_indices=idx)
            if schedule_cfg is not None:
                lr, m = one_cycle(step, schedule_cfg)
                _apply_schedule(opt, lr, m)
            logits = model(_to_chw_batch(x))
            loss = F.cross_entropy(logits, targets[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach())
            step += 1
        epoch_means.append(total / max(1, len(batches)))
    return epoch_means


def finetune(
    encoder: torch.nn.Module,
    dataset: data.Dataset,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[models.ComposedModel, RunRecord]:
    """Head warmup against the frozen encoder, then scheduled training of
    the whole network (or head only when ``cfg.freeze_encoder`` is set),
    finishing with augmentation-averaged test metrics."""
    classes = dataset.classes
    if len(classes) < 2:
        raise ProtocolError("supervised training needs at least 2 classes")
    train_ds = dataset.split("train")
    test_ds = dataset.split("test")
    if len(train_ds) == 0:
        raise ProtocolError("train split is empty")
    start = time.perf_counter()
    out_dir = Path(out_dir) if out_dir is not None else None

    images = train_ds.load_all(cfg.image_size)
    targets = torch.from_numpy(train_ds.targets())
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(cfg.seed, "head"))
        head = torch.nn.Linear(encoder.output_dim, len(classes))
    model = models.ComposedModel(encoder, head)
    _save_encoder(encoder, out_dir, "encoder_input", "train-input")

    phase_losses: dict[str, list[float]] = {}

    # phase 1: head only
    models.set_trainable(model, lambda name: name.startswith("head."))
    models.train_with_freeze(model)
    opt = _adam(models.trainable_parameters(model), cfg.lr_phase1)
    phase_losses["phase1"] = _supervised_phase(
        model, images, targets, cfg,
        epochs=cfg.epochs_phase1, epoch_offset=0, opt=opt, schedule_cfg=None,
    )

    # phase 2: whole network unless the encoder stays frozen
    if cfg.epochs_phase2 > 0:
        if not cfg.freeze_encoder:
            models.unfreeze_all(model)
        models.train_with_freeze(model)

        find_batches = _index_batches(len(targets), cfg.batch_size, rng_for(cfg.seed, "lrfind-order"), min_size=2)[:8]
        prepared = []
        for idx in find_batches:
            x = augment.train_augment(images[idx], global_seed=cfg.seed, epoch=-1, sample_indices=idx)
            prepared.append((_to_chw_batch(x), targets[idx]))
        lr_max = _find_lr_max(
            model, prepared,
            lambda mdl, batch, i: F.cross_entropy(mdl(batch[0]), batch[1]),
            cfg.lr_max,
        )
        models.train_with_freeze(model)

        steps_per_epoch = len(
            _index_batches(len(targets), cfg.batch_size, rng_for(cfg.seed, "order", cfg.epochs_phase1), min_size=2)
        )
        sched = cfg.schedule.build(lr_max, max(1, cfg.epochs_phase2 * steps_per_epoch))
        opt = _adam(models.trainable_parameters(model), sched.start_lr)
        phase_losses["phase2"] = _supervised_phase(
            model, images, targets, cfg,
            epochs=cfg.epochs_phase2, epoch_offset=cfg.epochs_phase1, opt=opt, schedule_cfg=sched,
        )

    acc, wf1, pcf = evaluate_tta(model, test_ds, image_size=cfg.image_size, k=cfg.tta_k, seed=cfg.seed)
    hashed = plan_hash(cfg)
    metrics = stats.RunMetrics(
        seed=cfg.seed,
        accuracy=acc,
        weighted_f1=wf1,
        per_class_f1=tuple(float(v) for v in pcf),
        run_id=f"seed{cfg.seed}",
        config_hash=hashed,
    )
    final_path = _save_encoder(encoder, out_dir, "encoder_final", "train-final")
    if out_dir is not None:
        models.save_archive(model, Path(out_dir) / "weights" / "model_final.archive", provenance="train-final")
    _write_losses_csv(out_dir, phase_losses)
    record = RunRecord(
        seed=cfg.seed,
        plan_hash=hashed,
        phase_losses=phase_losses,
        wall_time_s=time.perf_counter() - start,
        archive_path=final_path,
        metrics=metrics,
    )
    _write_run_record(out_dir, record)
    return model, record


def linear_probe(
    encoder: torch.nn.Module,
    dataset: data.Dataset,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[models.ComposedModel, RunRecord]:
    """Fine-tuning with the encoder frozen throughout; only the linear head
    ever receives updates."""
    return finetune(encoder, dataset, _frozen(cfg), out_dir)


def _frozen(cfg: TrainConfig) -> TrainConfig:
    if cfg.freeze_encoder:
        return cfg
    fields = asdict(cfg)
    fields["freeze_encoder"] = True
    fields["schedule"] = cfg.schedule
    return TrainConfig(**fields)


def _write_run_record(out_dir: Path | None, record: RunRecord) -> None:
    if out_dir is None:
        return
    payload = {
        "seed": record.seed,
        "plan_hash": record.plan_hash,
        "phase_losses": record.phase_losses,
        "wall_time_s": record.wall_time_s,
        "archive_path": record.archive_path,
    }
    if record.metrics is not None:
        payload["metrics"] = {
            "accuracy": record.metrics.accuracy,
            "weighted_f1": record.metrics.weighted_f1,
            "per_class_f1": list(record.metrics.per_class_f1),
        }
    (Path(out_dir) / "run_record.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
