"""Training objective: cross-modal and uni-modal alignment.

Cross-modal alignment (CMA) is a symmetric temperature-scaled contrastive
loss over the ECG/report cosine-similarity matrix with matched pairs on the
diagonal.  Uni-modal alignment (UMA) contrasts two independently
dropout-masked views of the ECG embeddings, so augmentation happens in
latent space instead of distorting the raw signal.  Both losses support two
denominator conventions: ``standard`` keeps the positive term in the softmax
denominator; ``decoupled`` excludes it, which makes the objective unbounded
below and is provided for comparison.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from . import augmentation as aug
from .config import fingerprint as config_fingerprint
from .corpus import ECGReportPair, _derived_rng, _unsigned
from .encoders import EncoderConfig, MerlModel, normalize_rows, save_checkpoint
from .errors import (
    BatchTooSmallError,
    ConfigurationError,
    DivergenceError,
    NumericError,
)

ArrayLike = Union[np.ndarray, torch.Tensor]

DEFAULT_TEMPERATURE = 0.07
DEFAULT_DROPOUT_RATIO = 0.1
REFERENCE_BATCH_SIZE = 512
VARIANTS = ("standard", "decoupled")
UMA_SOURCES = ("latent_dropout", "none", "cutout", "drop", "gaussian_noise")


# ---------------------------------------------------------------------------
# Similarity
# ---------------------------------------------------------------------------


@dataclass
class SimilarityMatrix:
    """Pairwise cosine similarities with the softmax temperature attached."""

    values: torch.Tensor  # (L, L); row = ECG, column = report
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    def transpose(self) -> "SimilarityMatrix":
        return SimilarityMatrix(self.values.T, self.temperature)


def similarity_matrix(
    ecg_embeds: ArrayLike,
    text_embeds: ArrayLike,
    temperature: float = DEFAULT_TEMPERATURE,
) -> SimilarityMatrix:
    """Dot products of unit-norm rows: values[i][j] = <ecg_i, text_j>."""
    e = torch.as_tensor(ecg_embeds)
    r = torch.as_tensor(text_embeds)
    if e.shape != r.shape or e.ndim != 2:
        raise ConfigurationError(
            f"embeddings must share an (L, d) shape, got {tuple(e.shape)} and {tuple(r.shape)}"
        )
    if e.shape[0] < 2:
        raise BatchTooSmallError(
            f"contrastive similarity needs a batch of at least 2, got {e.shape[0]}"
        )
    return SimilarityMatrix(e @ r.T, temperature)


def _require_finite(values: torch.Tensor) -> None:
    finite = torch.isfinite(values)
    if not bool(finite.all()):
        bad = (~finite).nonzero(as_tuple=False)[:8].tolist()
        raise NumericError(
            f"similarity matrix has non-finite entries at indices {bad}", indices=bad
        )


def _contrastive_row_terms(logits: torch.Tensor, variant: str) -> torch.Tensor:
    """Per-row -log softmax mass on the diagonal, with a stabilized
    log-sum-exp denominator."""
    positives = logits.diagonal()
    if variant == "standard":
        denom = torch.logsumexp(logits, dim=1)
    elif variant == "decoupled":
        eye = torch.eye(logits.shape[0], dtype=torch.bool, device=logits.device)
        denom = torch.logsumexp(logits.masked_fill(eye, float("-inf")), dim=1)
    else:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return denom - positives


def cma_loss(sim: SimilarityMatrix, variant: str = "standard") -> torch.Tensor:
    """Symmetric cross-modal contrastive loss with diagonal positives.

    Both directions (ECG-to-report over rows, report-to-ECG over rows of the
    transpose) contribute, averaged as (1 / 2L) times the sum of per-sample
    terms.
    """
    values = sim.values
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ConfigurationError(f"similarity matrix must be square, got {tuple(values.shape)}")
    if values.shape[0] < 2:
        raise BatchTooSmallError("contrastive loss needs at least 2 samples")
    _require_finite(values)
    logits = values / sim.temperature
    e2r = _contrastive_row_terms(logits, variant)
    r2e = _contrastive_row_terms(logits.T, variant)
    return (e2r.sum() + r2e.sum()) / (2 * values.shape[0])


# ---------------------------------------------------------------------------
# Latent dropout views
# ---------------------------------------------------------------------------


@dataclass
class DropoutViewPair:
    """Two element-wise masked copies of the same embedding batch.

    Masks are sampled from independent seed streams; views are exactly
    ``z * mask`` (no 1/(1-p) rescale unless requested).
    """

    view1: ArrayLike
    view2: ArrayLike
    mask1: np.ndarray
    mask2: np.ndarray
    ratio: float


def latent_dropout_views(
    z: ArrayLike,
    ratio: float = DEFAULT_DROPOUT_RATIO,
    seed: int | Sequence[int] = 0,
    rescale: bool = False,
) -> DropoutViewPair:
    """Draw two independent Bernoulli(keep = 1 - ratio) masks over ``z``.

    Deterministic for a fixed seed; the two masks come from disjoint spawned
    streams.  Tensor inputs produce tensor views (differentiable through the
    multiplication); numpy inputs produce numpy views.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigurationError(f"dropout ratio must be in [0, 1), got {ratio}")
    entropy = [_unsigned(seed)] if isinstance(seed, int) else [_unsigned(s) for s in seed]
    stream1, stream2 = np.random.SeedSequence(entropy).spawn(2)
    shape = tuple(z.shape)
    mask1 = (np.random.default_rng(stream1).random(shape) >= ratio).astype(np.float32)
    mask2 = (np.random.default_rng(stream2).random(shape) >= ratio).astype(np.float32)
    scale = 1.0 / (1.0 - ratio) if rescale and ratio > 0 else 1.0
    if isinstance(z, torch.Tensor):
        m1 = torch.as_tensor(mask1, dtype=z.dtype, device=z.device)
        m2 = torch.as_tensor(mask2, dtype=z.dtype, device=z.device)
        view1: ArrayLike = z * m1 * scale if scale != 1.0 else z * m1
        view2: ArrayLike = z * m2 * scale if scale != 1.0 else z * m2
    else:
        arr = np.asarray(z)
        view1 = arr * mask1 * scale if scale != 1.0 else arr * mask1
        view2 = arr * mask2 * scale if scale != 1.0 else arr * mask2
    return DropoutViewPair(view1=view1, view2=view2, mask1=mask1, mask2=mask2, ratio=ratio)


def uma_loss(
    views: DropoutViewPair | Tuple[ArrayLike, ArrayLike],
    temperature: float = DEFAULT_TEMPERATURE,
    variant: str = "standard",
) -> torch.Tensor:
    """Contrastive loss between two views of the same batch.

    Rows of each view are L2-normalized before the dot product so
    similarities stay bounded; positives sit on the diagonal and the loss is
    symmetrized over both view directions.
    """
    if isinstance(views, DropoutViewPair):
        v1, v2 = views.view1, views.view2
    else:
        v1, v2 = views
    v1 = torch.as_tensor(v1)
    v2 = torch.as_tensor(v2)
    if v1.shape != v2.shape or v1.ndim != 2:
        raise ConfigurationError(
            f"views must share an (L, d) shape, got {tuple(v1.shape)} and {tuple(v2.shape)}"
        )
    if v1.shape[0] < 2:
        raise BatchTooSmallError("contrastive loss needs at least 2 samples")
    sim = similarity_matrix(normalize_rows(v1), normalize_rows(v2), temperature)
    return cma_loss(sim, variant)


# ---------------------------------------------------------------------------
# Total loss
# ---------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    cma: float
    uma: float
    total: float
    batch_size: int


def total_loss(cma: float, uma: float, batch_size: int) -> LossBreakdown:
    """Unit-weight sum of the two alignment terms."""
    cma = float(cma)
    uma = float(uma)
    return LossBreakdown(cma=cma, uma=uma, total=cma + uma, batch_size=batch_size)


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


@dataclass
class PretrainConfig:
    """Optimization settings for representation pretraining.

    The published recipe (AdamW, lr 2e-4, weight decay 1e-5, 50 epochs,
    cosine annealing, logical batch 512) is the default; desk-scale runs
    shrink ``batch_size`` and ``epochs``.  When ``scale_lr_with_batch`` is on,
    the learning rate scales linearly below the 512 reference batch.
    """

    epochs: int = 50
    learning_rate: float = 2e-4
    weight_decay: float = 1e-5
    batch_size: int = 512
    temperature: float = DEFAULT_TEMPERATURE
    dropout_ratio: float = DEFAULT_DROPOUT_RATIO
    denominator_variant: str = "standard"
    uma_source: str = "latent_dropout"
    augmentation_param: Optional[float] = None
    rescale_dropout: bool = False
    scale_lr_with_batch: bool = True
    grad_accum_steps: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 2 or self.learning_rate <= 0:
            raise ConfigurationError(
                "epochs must be >= 1, batch_size >= 2, learning_rate > 0"
            )
        if self.denominator_variant not in VARIANTS:
            raise ConfigurationError(
                f"denominator_variant must be one of {VARIANTS}"
            )
        if self.uma_source not in UMA_SOURCES:
            raise ConfigurationError(f"uma_source must be one of {UMA_SOURCES}")
        if not 0.0 <= self.dropout_ratio < 1.0:
            raise ConfigurationError("dropout_ratio must be in [0, 1)")
        if self.grad_accum_steps < 1:
            raise ConfigurationError("grad_accum_steps must be >= 1")

    def effective_lr(self) -> float:
        if self.scale_lr_with_batch and self.batch_size < REFERENCE_BATCH_SIZE:
            return self.learning_rate * self.batch_size / REFERENCE_BATCH_SIZE
        return self.learning_rate


@dataclass
class PretrainResult:
    model: MerlModel
    epoch_log: List[Dict[str, float]]
    step_log: List[Dict[str, float]] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    log_path: Optional[Path] = None

    def epoch_breakdowns(self, batch_size: int) -> List[LossBreakdown]:
        return [
            total_loss(rec["cma"], rec["uma"], batch_size) for rec in self.epoch_log
        ]


def _augmented_views(
    signals: np.ndarray,
    model: MerlModel,
    source: str,
    param: Optional[float],
    seed_parts: Sequence[int],
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Encode two input-augmented copies of the batch (ablation path)."""
    views = []
    for view_idx in range(2):
        out = np.empty_like(signals)
        for i in range(signals.shape[0]):
            record_seed = np.random.SeedSequence(
                [*seed_parts, view_idx, i]
            ).generate_state(1)[0]
            out[i] = aug.apply_augmentation(signals[i], source, param, int(record_seed))
        views.append(model.encode_ecg(out))
    return views[0], views[1]


def pretrain(
    pairs: Sequence[ECGReportPair],
    encoder_config: EncoderConfig,
    config: PretrainConfig,
    out_dir: Optional[str | Path] = None,
    extra_meta: Optional[dict] = None,
) -> PretrainResult:
    """Run the alignment pretraining loop on a curated corpus.

    Per step: encode both modalities, project and normalize, take the
    cross-modal loss; build two latent views of the raw ECG embeddings and
    take the uni-modal loss; optimize their sum with AdamW under per-epoch
    cosine annealing.  Deterministic for a fixed seed in single-process mode.
    A non-finite loss aborts the run and retains the last epoch-end
    checkpoint.
    """
    config.validate()
    if len(pairs) < config.batch_size:
        raise ConfigurationError(
            f"batch_size {config.batch_size} exceeds corpus size {len(pairs)}"
        )
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    signals = np.stack([p.ecg.signal for p in pairs]).astype(np.float32)
    model = MerlModel(encoder_config, in_channels=signals.shape[1], seed=config.seed)
    reports = [p.report.text for p in pairs]
    report_embeds = model.encode_reports(reports)  # stub encoder: cache once

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.effective_lr(), weight_decay=config.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.epochs
    )

    meta = dict(extra_meta or {})
    meta["pretrain_config"] = asdict(config)
    meta.setdefault(
        "config_fingerprint",
        config_fingerprint(
            {"encoder_config": asdict(encoder_config), "pretrain_config": asdict(config)}
        ),
    )
    checkpoint_path = out_dir / "checkpoint.npz" if out_dir is not None else None
    log_path = out_dir / "train_log.jsonl" if out_dir is not None else None
    log_file = log_path.open("w", encoding="utf-8") if log_path is not None else None

    last_good = {name: copy.deepcopy(m.state_dict()) for name, m in model.modules().items()}
    epoch_log: List[Dict[str, float]] = []
    step_log: List[Dict[str, float]] = []

    def _abort(epoch: int, step: int) -> None:
        for name, module in model.modules().items():
            module.load_state_dict(last_good[name])
        retained = None
        if checkpoint_path is not None:
            retained = save_checkpoint(
                model, checkpoint_path, extra_meta={**meta, "diverged_at": [epoch, step]}
            )
        if log_file is not None:
            log_file.close()
        raise DivergenceError(
            f"non-finite loss at epoch {epoch} step {step}; "
            f"last good checkpoint retained",
            epoch=epoch,
            step=step,
            checkpoint=str(retained) if retained else None,
        )

    try:
        n = len(pairs)
        for epoch in range(config.epochs):
            model.train()
            perm = _derived_rng(config.seed, f"epoch:{epoch}").permutation(n)
            sums = {"cma": 0.0, "uma": 0.0, "total": 0.0}
            steps_in_epoch = 0
            optimizer.zero_grad()
            for step, start in enumerate(range(0, n, config.batch_size)):
                idx = perm[start : start + config.batch_size]
                if idx.size < 2:
                    continue  # a trailing singleton has no negatives
                x = signals[idx]
                try:
                    z_e = model.encode_ecg(x)
                    e_hat = model.project(z_e, "ecg")
                    r_hat = model.project(
                        torch.as_tensor(report_embeds[idx]), "text"
                    )
                    sim = similarity_matrix(e_hat, r_hat, config.temperature)
                    cma = cma_loss(sim, config.denominator_variant)

                    if config.uma_source == "none":
                        uma = torch.zeros((), dtype=cma.dtype)
                    elif config.uma_source == "latent_dropout":
                        views = latent_dropout_views(
                            z_e,
                            ratio=config.dropout_ratio,
                            seed=[config.seed, epoch, step],
                            rescale=config.rescale_dropout,
                        )
                        uma = uma_loss(views, config.temperature, config.denominator_variant)
                    else:
                        v1, v2 = _augmented_views(
                            x,
                            model,
                            config.uma_source,
                            config.augmentation_param,
                            [_unsigned(config.seed), epoch, step],
                        )
                        uma = uma_loss((v1, v2), config.temperature, config.denominator_variant)
                except NumericError:
                    _abort(epoch, step)

                loss = cma + uma
                if not bool(torch.isfinite(loss)):
                    _abort(epoch, step)
                (loss / config.grad_accum_steps).backward()
                if (step + 1) % config.grad_accum_steps == 0:
                    optimizer.step()
                    optimizer.zero_grad()

                breakdown = total_loss(cma.item(), uma.item(), int(idx.size))
                record = {
                    "epoch": epoch,
                    "step": step,
                    "cma": breakdown.cma,
                    "uma": breakdown.uma,
                    "total": breakdown.total,
                    "lr": optimizer.param_groups[0]["lr"],
                }
                step_log.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
                sums["cma"] += breakdown.cma
                sums["uma"] += breakdown.uma
                sums["total"] += breakdown.total
                steps_in_epoch += 1

            optimizer.step()  # flush a partial accumulation window
            optimizer.zero_grad()
            epoch_record = {
                "epoch": epoch,
                "cma": sums["cma"] / max(steps_in_epoch, 1),
                "uma": sums["uma"] / max(steps_in_epoch, 1),
                "total": sums["total"] / max(steps_in_epoch, 1),
                "lr": optimizer.param_groups[0]["lr"],
            }
            epoch_log.append(epoch_record)
            if log_file is not None:
                log_file.write(json.dumps({"epoch_summary": epoch_record}) + "\n")
                log_file.flush()
            scheduler.step()
            last_good = {
                name: copy.deepcopy(m.state_dict()) for name, m in model.modules().items()
            }
    finally:
        if log_file is not None and not log_file.closed:
            log_file.close()

    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path, extra_meta={**meta, "epochs_completed": config.epochs})
    return PretrainResult(
        model=model,
        epoch_log=epoch_log,
        step_log=step_log,
        checkpoint_path=checkpoint_path,
        log_path=log_path,
    )
