"""Evaluation harness: linear probing, subsampling, domain transfer, export.

Protocol guarantees enforced here rather than by convention: linear probing
hashes the frozen encoder before and after and hard-fails on any change;
training-data subsets are stratified and nested across ratios (the 1% subset
is contained in the 10% subset for the same seed); every result carries a
fingerprint of the full configuration that produced it.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from . import config as config_mod
from . import corpus as corpus_mod
from . import zeroshot as zeroshot_mod
from .alignment import PretrainConfig, pretrain
from .corpus import CorpusManifest, ECGReportPair, label_signature, stratified_priority_order
from .encoders import EncoderConfig, MerlModel, encode_ecg_batch, load_checkpoint
from .errors import (
    CompletenessError,
    ConfigurationError,
    ExperimentError,
    MerlError,
    ProtocolViolationError,
    TransferMapError,
)

RESULT_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Task datasets
# ---------------------------------------------------------------------------


@dataclass
class TaskDataset:
    """In-memory view of a labeled task: signals, binary labels, splits."""

    signals: np.ndarray  # (N, leads, samples) float32
    labels: np.ndarray  # (N, C) int8
    record_ids: List[str]
    class_names: List[str]
    splits: List[str]

    def __len__(self) -> int:
        return self.signals.shape[0]

    def indices_for_split(self, split: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.splits) == split)

    def subset(self, indices: Sequence[int]) -> "TaskDataset":
        idx = np.asarray(indices)
        return TaskDataset(
            signals=self.signals[idx],
            labels=self.labels[idx],
            record_ids=[self.record_ids[i] for i in idx],
            class_names=list(self.class_names),
            splits=[self.splits[i] for i in idx],
        )


def load_task(
    manifest: CorpusManifest,
    pairs: Optional[Sequence[ECGReportPair]] = None,
    base_dir: Optional[str | Path] = None,
) -> TaskDataset:
    """Materialize a manifest into a task dataset.

    Signals come from in-memory pairs when given, otherwise from the signal
    files referenced by the manifest (relative to ``base_dir``).
    """
    if pairs is None:
        if base_dir is None:
            raise ConfigurationError("load_task needs either pairs or base_dir")
        pairs = corpus_mod.load_pairs(manifest, base_dir)
    by_id = {p.ecg.record_id: p for p in pairs}
    missing = [e.record_id for e in manifest.entries if e.record_id not in by_id]
    if missing:
        raise ConfigurationError(
            f"{len(missing)} manifest records have no signals (first: {missing[:3]})"
        )
    signals = np.stack(
        [by_id[e.record_id].ecg.signal for e in manifest.entries]
    ).astype(np.float32)
    return TaskDataset(
        signals=signals,
        labels=zeroshot_mod.labels_matrix(manifest.entries, manifest.label_vocabulary),
        record_ids=[e.record_id for e in manifest.entries],
        class_names=list(manifest.label_vocabulary),
        splits=[e.split for e in manifest.entries],
    )


# ---------------------------------------------------------------------------
# Training-data subsampling
# ---------------------------------------------------------------------------


def subsample_split(
    entries: Sequence[corpus_mod.ManifestEntry], ratio: float, seed: int = 0
) -> List[corpus_mod.ManifestEntry]:
    """Deterministic stratified subset of a split.

    Subsets are nested: for a fixed seed, a smaller ratio's subset is
    contained in any larger ratio's subset.  Ratio 1.0 returns the input
    unchanged.
    """
    if not 0.0 < ratio <= 1.0:
        raise ConfigurationError(f"ratio must be in (0, 1], got {ratio}")
    if ratio == 1.0:
        return list(entries)
    count = int(math.floor(ratio * len(entries)))
    if count < 1:
        raise ConfigurationError(
            f"ratio {ratio} of {len(entries)} entries yields zero samples"
        )
    order = stratified_priority_order(
        [(e.record_id, label_signature(e.labels)) for e in entries], seed
    )
    chosen = set(order[:count])
    return [e for e in entries if e.record_id in chosen]


def _subsample_indices(task: TaskDataset, indices: np.ndarray, ratio: float, seed: int) -> np.ndarray:
    if ratio == 1.0:
        return indices
    count = int(math.floor(ratio * indices.size))
    if count < 1:
        raise ConfigurationError(
            f"ratio {ratio} of {indices.size} samples yields zero samples"
        )
    items = []
    for i in indices:
        labels = [task.class_names[c] for c in np.flatnonzero(task.labels[i])]
        items.append((task.record_ids[i], label_signature(labels)))
    order = stratified_priority_order(items, seed)
    chosen = set(order[:count])
    return np.asarray([i for i in indices if task.record_ids[i] in chosen])


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    task_id: str
    mode: str  # zeroshot | linear_probe | transfer
    training_ratio: float
    macro_auc: float
    per_class_auc: Dict[str, Optional[float]]
    config_fingerprint: str
    details: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "mode": self.mode,
            "training_ratio": self.training_ratio,
            "macro_auc": self.macro_auc,
            "per_class_auc": self.per_class_auc,
            "config_fingerprint": self.config_fingerprint,
            "details": self.details,
            "result_format_version": RESULT_FORMAT_VERSION,
        }


def _per_class_dict(
    class_names: Sequence[str], per_class: np.ndarray
) -> Dict[str, Optional[float]]:
    return {
        name: (None if math.isnan(value) else float(value))
        for name, value in zip(class_names, per_class)
    }


def result_fingerprint(**payload: Any) -> str:
    payload.setdefault("result_format_version", RESULT_FORMAT_VERSION)
    payload.setdefault("prompt_format_version", zeroshot_mod.PROMPT_FORMAT_VERSION)
    return config_mod.fingerprint(payload)


def append_result(path: str | Path, result: EvalResult | Dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = result.to_json() if isinstance(result, EvalResult) else result
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def read_results(path: str | Path) -> List[Dict[str, Any]]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def results_table(results: Sequence[Mapping[str, Any]]) -> str:
    """Plain-text summary: one row per (task, mode), columns per data ratio."""
    ratios = sorted(
        {r.get("training_ratio", 0.0) for r in results if "macro_auc" in r}
    )
    rows: Dict[Tuple[str, str], Dict[float, float]] = {}
    for r in results:
        if "macro_auc" not in r:
            continue
        key = (r.get("task_id", "?"), r.get("mode", "?"))
        rows.setdefault(key, {})[r.get("training_ratio", 0.0)] = r["macro_auc"]
    header = ["task", "mode"] + [f"ratio={ratio:g}" for ratio in ratios]
    widths = [max(18, len(h)) for h in header]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for (task, mode), by_ratio in sorted(rows.items()):
        cells = [task, mode] + [
            f"{by_ratio[ratio]:.4f}" if ratio in by_ratio else "-" for ratio in ratios
        ]
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


def write_results_csv(results: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "mode", "training_ratio", "macro_auc", "config_fingerprint"])
        for r in results:
            if "macro_auc" not in r:
                continue
            writer.writerow(
                [
                    r.get("task_id", ""),
                    r.get("mode", ""),
                    r.get("training_ratio", ""),
                    f"{r['macro_auc']:.6f}",
                    r.get("config_fingerprint", ""),
                ]
            )
    return path


# ---------------------------------------------------------------------------
# Linear probing
# ---------------------------------------------------------------------------


@dataclass
class ProbeConfig:
    """Downstream linear-probe recipe (AdamW + warmup + cosine annealing)."""

    training_ratio: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 100
    warmup_steps: int = 5
    weight_decay: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.training_ratio <= 1.0:
            raise ConfigurationError("training_ratio must be in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigurationError("epochs/batch_size/learning_rate must be positive")


def _warmup_cosine(step: int, warmup: int, total: int) -> float:
    if step < warmup:
        return (step + 1) / max(warmup, 1)
    span = max(total - warmup, 1)
    return 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / span))


def linear_probe(
    model: MerlModel,
    task: TaskDataset,
    probe_config: ProbeConfig,
    task_id: str = "task",
    fingerprint_payload: Optional[Mapping[str, Any]] = None,
) -> EvalResult:
    """Train a fresh affine head on frozen encoder features.

    The encoder itself is never updated: its weight hash is compared before
    and after and any difference is a hard protocol violation.  The head maps
    pre-projection features to per-class logits under binary cross-entropy
    (multi-label), and the score is macro AUC on the test split.
    """
    probe_config.validate()
    hash_before = model.encoder_state_hash()
    model.eval()

    train_idx = task.indices_for_split("train")
    test_idx = task.indices_for_split("test")
    if train_idx.size == 0 or test_idx.size == 0:
        raise ConfigurationError("task needs non-empty train and test splits")
    train_idx = _subsample_indices(task, train_idx, probe_config.training_ratio, probe_config.seed)

    features_train = encode_ecg_batch(task.signals[train_idx], model)
    features_test = encode_ecg_batch(task.signals[test_idx], model)
    y_train = task.labels[train_idx].astype(np.float32)

    torch.manual_seed(probe_config.seed & 0xFFFFFFFF)
    head = nn.Linear(features_train.shape[1], task.labels.shape[1])
    optimizer = torch.optim.AdamW(
        head.parameters(),
        lr=probe_config.learning_rate,
        weight_decay=probe_config.weight_decay,
    )
    criterion = nn.BCEWithLogitsLoss()
    steps_per_epoch = math.ceil(train_idx.size / probe_config.batch_size)
    total_steps = steps_per_epoch * probe_config.epochs
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer,
        lambda step: _warmup_cosine(step, probe_config.warmup_steps, total_steps),
    )

    x_all = torch.as_tensor(features_train)
    y_all = torch.as_tensor(y_train)
    n = train_idx.size
    for epoch in range(probe_config.epochs):
        perm = corpus_mod._derived_rng(probe_config.seed, f"probe-epoch:{epoch}").permutation(n)
        for start in range(0, n, probe_config.batch_size):
            idx = perm[start : start + probe_config.batch_size]
            optimizer.zero_grad()
            loss = criterion(head(x_all[idx]), y_all[idx])
            loss.backward()
            optimizer.step()
            scheduler.step()

    with torch.no_grad():
        scores = head(torch.as_tensor(features_test)).numpy()
    macro, per_class = zeroshot_mod.macro_auc(scores, task.labels[test_idx])

    if model.encoder_state_hash() != hash_before:
        raise ProtocolViolationError(
            "encoder weights changed during linear probing"
        )

    payload = dict(fingerprint_payload or {})
    payload.update({"probe_config": asdict(probe_config), "mode": "linear_probe", "task_id": task_id})
    return EvalResult(
        task_id=task_id,
        mode="linear_probe",
        training_ratio=probe_config.training_ratio,
        macro_auc=macro,
        per_class_auc=_per_class_dict(task.class_names, per_class),
        config_fingerprint=result_fingerprint(**payload),
        details={"train_size": int(train_idx.size), "test_size": int(test_idx.size)},
    )


def evaluate_zero_shot(
    model: MerlModel,
    task: TaskDataset,
    prompts: zeroshot_mod.ClassPromptSet,
    split: str = "test",
    task_id: str = "task",
    mode: str = "zeroshot",
    fingerprint_payload: Optional[Mapping[str, Any]] = None,
    scores_csv: Optional[str | Path] = None,
) -> EvalResult:
    """Zero-shot macro AUC of prompt-similarity scores on one split."""
    if prompts.class_names != list(task.class_names):
        raise ConfigurationError(
            "prompt classes must match the task vocabulary in order; "
            f"prompts={prompts.class_names} task={task.class_names}"
        )
    idx = task.indices_for_split(split) if split else np.arange(len(task))
    if idx.size == 0:
        raise ConfigurationError(f"split {split!r} is empty")
    prompt_matrix = zeroshot_mod.embed_class_prompts(prompts, model)
    scores = zeroshot_mod.zero_shot_scores(task.signals[idx], prompt_matrix, model)
    if scores_csv is not None:
        zeroshot_mod.save_scores_csv(
            scores,
            task.class_names,
            scores_csv,
            record_ids=[task.record_ids[i] for i in idx],
        )
    macro, per_class = zeroshot_mod.macro_auc(scores, task.labels[idx])
    payload = dict(fingerprint_payload or {})
    payload.update(
        {
            "mode": mode,
            "task_id": task_id,
            "prompt_style": prompts.style,
            "prompts": [e.prompt_text for e in prompts.entries],
            "split": split,
        }
    )
    return EvalResult(
        task_id=task_id,
        mode=mode,
        training_ratio=0.0,
        macro_auc=macro,
        per_class_auc=_per_class_dict(task.class_names, per_class),
        config_fingerprint=result_fingerprint(**payload),
        details={"split": split, "n": int(idx.size)},
    )


# ---------------------------------------------------------------------------
# Domain transfer
# ---------------------------------------------------------------------------


@dataclass
class TransferMap:
    """Category matching from a source task's vocabulary onto a target task.

    ``mapping`` lists, per source category, the target categories that merge
    into it (empty list = no matching target category).  Target categories in
    ``dropped_target_categories`` are removed together with samples labeled
    only by them.  A target category normally belongs to at most one source;
    maps that intentionally share a target must say so explicitly.
    """

    source_task: str
    target_task: str
    mapping: Dict[str, List[str]]
    dropped_target_categories: List[str] = field(default_factory=list)
    allow_shared_targets: bool = False
    notes: str = ""

    def validate(self) -> None:
        seen: Dict[str, str] = {}
        for source, targets in self.mapping.items():
            for target in targets:
                if target in seen and seen[target] != source:
                    if not self.allow_shared_targets:
                        raise TransferMapError(
                            f"target category {target!r} appears under both "
                            f"{seen[target]!r} and {source!r}",
                            target=target,
                        )
                seen[target] = source
        overlap = set(self.dropped_target_categories) & set(seen)
        if overlap:
            raise TransferMapError(
                f"categories both mapped and dropped: {sorted(overlap)}"
            )

    def source_vocabulary(self) -> List[str]:
        return list(self.mapping.keys())

    def target_to_source(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {}
        for source, targets in self.mapping.items():
            for target in targets:
                out.setdefault(target, [])
                if source not in out[target]:
                    out[target].append(source)
        return out


def load_transfer_map(path: str | Path) -> TransferMap:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    tmap = TransferMap(
        source_task=payload["source_task"],
        target_task=payload["target_task"],
        mapping={k: list(v) for k, v in payload["mapping"].items()},
        dropped_target_categories=list(payload.get("dropped_target_categories", [])),
        allow_shared_targets=bool(payload.get("allow_shared_targets", False)),
        notes=payload.get("notes", ""),
    )
    tmap.validate()
    return tmap


def builtin_transfer_map(name: str) -> TransferMap:
    """Load one of the packaged transfer-map fixtures by file stem."""
    resource = importlib.resources.files("merl").joinpath(
        f"data/transfer_maps/{name}.json"
    )
    if not resource.is_file():
        raise TransferMapError(
            f"no builtin transfer map {name!r}; available: {list_builtin_transfer_maps()}"
        )
    payload = json.loads(resource.read_text(encoding="utf-8"))
    tmap = TransferMap(
        source_task=payload["source_task"],
        target_task=payload["target_task"],
        mapping={k: list(v) for k, v in payload["mapping"].items()},
        dropped_target_categories=list(payload.get("dropped_target_categories", [])),
        allow_shared_targets=bool(payload.get("allow_shared_targets", False)),
        notes=payload.get("notes", ""),
    )
    tmap.validate()
    return tmap


def list_builtin_transfer_maps() -> List[str]:
    root = importlib.resources.files("merl").joinpath("data/transfer_maps")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def apply_transfer_map(manifest: CorpusManifest, tmap: TransferMap) -> CorpusManifest:
    """Rewrite target-domain labels into the source vocabulary.

    Labels already in the source vocabulary pass through unchanged (the
    operation is idempotent); samples whose labels are all dropped are
    removed; a label that is neither mapped, dropped, nor a source category
    is a completeness error.
    """
    tmap.validate()
    t2s = tmap.target_to_source()
    sources = set(tmap.mapping.keys())
    dropped = set(tmap.dropped_target_categories)
    source_order = {name: i for i, name in enumerate(tmap.mapping.keys())}
    entries = []
    removed = 0
    for entry in manifest.entries:
        new_labels: List[str] = []
        for label in entry.labels:
            # target-mapping first: a label can be both a source name and a
            # target name (e.g. a shared-target row), and the table wins then
            if label in t2s:
                mapped = t2s[label]
            elif label in sources:
                mapped = [label]
            elif label in dropped:
                continue
            else:
                raise CompletenessError(
                    f"target label {label!r} (record {entry.record_id!r}) is neither "
                    f"mapped nor dropped by {tmap.source_task} -> {tmap.target_task}",
                    label=label,
                )
            for source in mapped:
                if source not in new_labels:
                    new_labels.append(source)
        if not new_labels:
            removed += 1
            continue
        new_labels.sort(key=lambda name: source_order[name])
        entries.append(
            corpus_mod.ManifestEntry(
                record_id=entry.record_id,
                signal_path=entry.signal_path,
                report=entry.report,
                labels=tuple(new_labels),
                split=entry.split,
            )
        )
    notes = list(manifest.notes)
    notes.append(
        f"apply_transfer_map: {tmap.source_task} <- {tmap.target_task}, "
        f"removed {removed} samples with only dropped labels"
    )
    out = CorpusManifest(
        entries=entries, label_vocabulary=tmap.source_vocabulary(), notes=notes
    )
    out.validate()
    return out


# ---------------------------------------------------------------------------
# Embedding export
# ---------------------------------------------------------------------------


def export_embeddings(
    model: MerlModel,
    task: TaskDataset,
    path: str | Path,
    which: str = "z_e",
    split: str = "",
    drop_multilabel: bool = False,
    min_class_count: int = 0,
) -> Path:
    """Write embeddings to CSV (record_id, labels, then one column per dim).

    Optional filters mirror the usual visualization prep: keep single-label
    samples only, then remove classes (and their samples) rarer than
    ``min_class_count``.
    """
    if which not in ("z_e", "projected"):
        raise ConfigurationError("which must be 'z_e' or 'projected'")
    idx = task.indices_for_split(split) if split else np.arange(len(task))
    labels = task.labels[idx]
    keep = np.ones(idx.size, dtype=bool)
    if drop_multilabel:
        keep &= labels.sum(axis=1) <= 1
    if min_class_count > 0:
        counts = labels[keep].sum(axis=0)
        rare = np.flatnonzero(counts < min_class_count)
        if rare.size:
            keep &= ~(labels[:, rare].any(axis=1))
    idx = idx[keep]
    if which == "z_e":
        emb = encode_ecg_batch(task.signals[idx], model)
    else:
        emb = model.embed_ecg(task.signals[idx])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", "labels", *[f"e{i}" for i in range(emb.shape[1])]])
        for row, i in enumerate(idx):
            names = [task.class_names[c] for c in np.flatnonzero(task.labels[i])]
            writer.writerow(
                [task.record_ids[i], "|".join(names), *[f"{v:.8g}" for v in emb[row]]]
            )
    return path


# ---------------------------------------------------------------------------
# Experiment orchestration
# ---------------------------------------------------------------------------


def _seeded(section: Dict[str, str], default_seed: Optional[int]) -> Dict[str, str]:
    out = dict(section)
    if default_seed is not None and "seed" not in out:
        out["seed"] = str(default_seed)
    return out


def build_experiment_corpus(
    cfg: config_mod.ConfigDict, base_dir: Path, default_seed: Optional[int]
) -> Tuple[CorpusManifest, List[ECGReportPair], Optional[corpus_mod.SyntheticCorpusSpec]]:
    """Corpus stage shared by the CLI commands: synthesize or load, curate,
    and assign splits when the manifest has none."""
    section = dict(cfg.get("corpus", {}))
    ratios = config_mod.parse_ratios(section.pop("split_ratios", "0.7 0.1 0.2"))
    split_seed = int(section.pop("split_seed", default_seed or 0))
    manifest_path = section.pop("manifest", "")
    signals_base = section.pop("signals_base_dir", "")
    synthetic = section.pop("synthetic", "true" if not manifest_path else "false")

    spec = None
    if synthetic.strip().lower() in ("1", "true", "yes", "on") and not manifest_path:
        spec = config_mod.coerce_dataclass(
            corpus_mod.SyntheticCorpusSpec,
            _seeded(section, default_seed),
        )
        manifest, pairs = corpus_mod.generate_synthetic_corpus(spec)
    else:
        if not manifest_path:
            raise ConfigurationError("[corpus] needs synthetic=true or a manifest path")
        manifest = corpus_mod.load_manifest(base_dir / manifest_path)
        pairs = corpus_mod.load_pairs(
            manifest, base_dir / signals_base if signals_base else (base_dir / manifest_path).parent
        )

    curation = corpus_mod.curate_pairs(pairs)
    kept_ids = {p.ecg.record_id for p in curation.kept}
    entries = [e for e in manifest.entries if e.record_id in kept_ids]
    manifest = CorpusManifest(
        entries=entries,
        label_vocabulary=list(manifest.label_vocabulary),
        notes=list(manifest.notes)
        + [f"curation: kept {len(curation.kept)}, rejected {len(curation.rejected)}"],
    )
    if not all(e.split for e in manifest.entries):
        manifest = corpus_mod.split_by_ratio(manifest, ratios, seed=split_seed)
    return manifest, curation.kept, spec


def _pairs_for_split(
    manifest: CorpusManifest, pairs: Sequence[ECGReportPair], split: str
) -> List[ECGReportPair]:
    wanted = {e.record_id for e in manifest.entries_for_split(split)}
    return [p for p in pairs if p.ecg.record_id in wanted]


class Experiment:
    """One configured run: corpus, model, and the declared evaluations."""

    def __init__(self, cfg: config_mod.ConfigDict, base_dir: str | Path = "."):
        self.cfg = cfg
        self.base_dir = Path(base_dir)
        exp = cfg.get("experiment", {})
        self.name = exp.get("name", "experiment")
        self.seed = int(exp["seed"]) if "seed" in exp else None
        out_dir = exp.get("out_dir", f"merl_runs/{self.name}")
        self.out_dir = self.base_dir / out_dir
        self.tasks = [
            t.strip() for t in exp.get("tasks", "zeroshot, probe").split(",") if t.strip()
        ]
        self.encoder_config = config_mod.coerce_dataclass(
            EncoderConfig, cfg.get("encoder", {})
        )
        self.pretrain_section = dict(cfg.get("pretrain", {}))
        self.results_path = self.out_dir / "results.jsonl"

    # -- stages ----------------------------------------------------------

    def prepare_corpus(self) -> None:
        self.manifest, self.pairs, self.synthetic_spec = build_experiment_corpus(
            self.cfg, self.base_dir, self.seed
        )
        self.task = load_task(self.manifest, pairs=self.pairs)

    def pretrain_or_load(self) -> MerlModel:
        section = dict(self.pretrain_section)
        checkpoint = section.pop("checkpoint", "")
        if checkpoint:
            model, meta = load_checkpoint(self.base_dir / checkpoint)
            self.pretrain_config = (
                PretrainConfig(**meta["pretrain_config"])
                if "pretrain_config" in meta
                else PretrainConfig()
            )
            self.model = model
            return model
        self.pretrain_config = config_mod.coerce_dataclass(
            PretrainConfig, _seeded(section, self.seed)
        )
        train_pairs = _pairs_for_split(self.manifest, self.pairs, "train")
        result = pretrain(
            train_pairs,
            self.encoder_config,
            self.pretrain_config,
            out_dir=self.out_dir,
            extra_meta={"experiment": self.name, "fingerprint": self.base_fingerprint()},
        )
        self.model = result.model
        return result.model

    def base_fingerprint(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "experiment": self.name,
            "encoder_config": asdict(self.encoder_config),
        }
        if getattr(self, "synthetic_spec", None) is not None:
            payload["corpus"] = asdict(self.synthetic_spec)
        if hasattr(self, "pretrain_config"):
            payload["pretrain_config"] = asdict(self.pretrain_config)
        return payload

    def prompts(self) -> zeroshot_mod.ClassPromptSet:
        section = self.cfg.get("zeroshot", {})
        style = section.get("prompt_style", "ckepe")
        prompt_file = section.get("prompt_file", "")
        if prompt_file:
            prompts = zeroshot_mod.load_prompt_file(self.base_dir / prompt_file)
            if prompts.class_names != list(self.manifest.label_vocabulary):
                raise ConfigurationError(
                    "prompt file classes do not match the task vocabulary"
                )
            return prompts
        if self.synthetic_spec is not None:
            return zeroshot_mod.build_synthetic_prompts(
                self.synthetic_spec.num_classes, style
            )
        if style == "ckepe":
            raise ConfigurationError(
                "ckepe prompts for a non-synthetic corpus need a prompt_file "
                "(build one with the ckepe command)"
            )
        entries = [
            zeroshot_mod.ClassPrompt(
                class_name=name,
                prompt_text=zeroshot_mod.assemble_prompt_text(name, [], [], style),
            )
            for name in self.manifest.label_vocabulary
        ]
        return zeroshot_mod.ClassPromptSet(entries=entries, style=style)

    def run_zeroshot(self) -> EvalResult:
        scores_csv = self.cfg.get("zeroshot", {}).get("scores_csv", "")
        result = evaluate_zero_shot(
            self.model,
            self.task,
            self.prompts(),
            task_id=self.name,
            fingerprint_payload=self.base_fingerprint(),
            scores_csv=self.out_dir / scores_csv if scores_csv else None,
        )
        append_result(self.results_path, result)
        return result

    def run_probe(self) -> EvalResult:
        probe_config = config_mod.coerce_dataclass(
            ProbeConfig, _seeded(dict(self.cfg.get("probe", {})), self.seed)
        )
        result = linear_probe(
            self.model,
            self.task,
            probe_config,
            task_id=self.name,
            fingerprint_payload=self.base_fingerprint(),
        )
        append_result(self.results_path, result)
        return result

    def run_transfer(self) -> EvalResult:
        section = self.cfg.get("transfer", {})
        map_ref = section.get("map", "")
        if not map_ref:
            raise ConfigurationError("[transfer] needs map = <builtin name or path>")
        map_path = self.base_dir / map_ref
        tmap = (
            load_transfer_map(map_path) if map_path.exists() else builtin_transfer_map(map_ref)
        )
        target_manifest_path = section.get("target_manifest", "")
        if not target_manifest_path:
            raise ConfigurationError("[transfer] needs target_manifest = <path>")
        target_manifest = corpus_mod.load_manifest(self.base_dir / target_manifest_path)
        remapped = apply_transfer_map(target_manifest, tmap)
        if section.get("signals_base_dir", ""):
            target_base = self.base_dir / section["signals_base_dir"]
        else:
            target_base = (self.base_dir / target_manifest_path).parent
        target_task = load_task(remapped, base_dir=target_base)
        split = section.get("split", "")
        prompts = self.prompts()
        if prompts.class_names != list(remapped.label_vocabulary):
            raise ConfigurationError(
                "transfer prompts must cover the source vocabulary "
                f"{remapped.label_vocabulary}"
            )
        payload = self.base_fingerprint()
        payload["transfer_map"] = {
            "source_task": tmap.source_task,
            "target_task": tmap.target_task,
            "mapping": tmap.mapping,
        }
        result = evaluate_zero_shot(
            self.model,
            target_task,
            prompts,
            split=split,
            task_id=f"{self.name}:{tmap.source_task}->{tmap.target_task}",
            mode="transfer",
            fingerprint_payload=payload,
        )
        append_result(self.results_path, result)
        return result

    # -- the whole run -----------------------------------------------------

    def run(self) -> List[EvalResult]:
        self.prepare_corpus()
        self.pretrain_or_load()
        results: List[EvalResult] = []
        failures: List[Dict[str, Any]] = []
        runners = {
            "zeroshot": self.run_zeroshot,
            "probe": self.run_probe,
            "transfer": self.run_transfer,
        }
        for name in self.tasks:
            runner = runners.get(name)
            if runner is None:
                raise ConfigurationError(
                    f"unknown task {name!r}; choose from {sorted(runners)}"
                )
            try:
                results.append(runner())
            except MerlError as exc:
                failure = {"task_id": f"{self.name}/{name}", "failed": True, **exc.to_json()}
                failures.append(failure)
                append_result(self.results_path, failure)
        stored = read_results(self.results_path)
        write_results_csv(stored, self.out_dir / "results_table.csv")
        (self.out_dir / "results_table.txt").write_text(
            results_table(stored) + "\n", encoding="utf-8"
        )
        if failures and not results:
            raise ExperimentError(
                f"all declared tasks failed; see {self.results_path}",
                failures=[f["task_id"] for f in failures],
            )
        return results


def run_experiment(
    config_path: str | Path, overrides: Sequence[str] = (), seed: Optional[int] = None
) -> List[EvalResult]:
    cfg = config_mod.apply_overrides(config_mod.load_config(config_path), overrides)
    if seed is not None:
        cfg.setdefault("experiment", {})["seed"] = str(seed)
    return Experiment(cfg, base_dir=Path(config_path).parent).run()
