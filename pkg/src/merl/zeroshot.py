"""Zero-shot classification from prompt similarity, plus macro AUC.

A frozen model embeds one text prompt per category; each record's class
scores are the cosine similarities between its projected ECG embedding and
the prompt embeddings.  Scores are left uncalibrated (no softmax across
classes): the task is multi-label and the metric is rank-based.

Macro AUC here is one-vs-rest ROC AUC per class by pairwise counting with
ties credited 0.5 (computed via average ranks, which is equivalent), with
classes lacking positives or negatives excluded from the mean.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import corpus
from .encoders import MerlModel
from .errors import BatchShapeError, ConfigurationError

PROMPT_STYLES = ("name_only", "template", "ckepe")
FIXED_TEMPLATE = "this electrocardiogram shows {condition}"
PROMPT_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Prompt sets
# ---------------------------------------------------------------------------


@dataclass
class ClassPrompt:
    class_name: str
    prompt_text: str
    subtypes: List[str] = field(default_factory=list)
    attributes: List[str] = field(default_factory=list)
    provenance: Dict[str, object] = field(default_factory=dict)


@dataclass
class ClassPromptSet:
    """One prompt per category, ordered like the task's label vocabulary."""

    entries: List[ClassPrompt]
    style: str = "ckepe"

    @property
    def class_names(self) -> List[str]:
        return [e.class_name for e in self.entries]

    def validate(self) -> None:
        if self.style not in PROMPT_STYLES:
            raise ConfigurationError(f"style must be one of {PROMPT_STYLES}")
        names = self.class_names
        if len(set(names)) != len(names):
            raise ConfigurationError("class names in a prompt set must be unique")


def assemble_prompt_text(
    condition: str, subtypes: Sequence[str], attributes: Sequence[str], style: str
) -> str:
    """Deterministic prompt templates for the three styles."""
    if style == "name_only":
        return condition
    if style == "template":
        return FIXED_TEMPLATE.format(condition=condition)
    if style == "ckepe":
        parts = [condition]
        if subtypes:
            parts.append("subtypes: " + "; ".join(subtypes))
        if attributes:
            parts.append("signal attributes: " + "; ".join(attributes))
        return ", ".join(parts)
    raise ConfigurationError(f"style must be one of {PROMPT_STYLES}")


def build_synthetic_prompts(num_classes: int, style: str = "ckepe") -> ClassPromptSet:
    """Prompts derived from the synthetic generator's class tokens."""
    entries = []
    for tok in corpus.synthetic_class_tokens(num_classes):
        entries.append(
            ClassPrompt(
                class_name=tok.name,
                prompt_text=assemble_prompt_text(
                    tok.name, [tok.subtype], [tok.attribute], style
                ),
                subtypes=[tok.subtype],
                attributes=[tok.attribute],
            )
        )
    prompts = ClassPromptSet(entries=entries, style=style)
    prompts.validate()
    return prompts


def save_prompt_file(prompts: ClassPromptSet, path: str | Path) -> Path:
    """Write the prompt file: a JSON array of per-class objects.

    The prompt style travels inside each object's provenance so the document
    itself stays a plain array.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for entry in prompts.entries:
        row = asdict(entry)
        row["provenance"] = dict(
            row["provenance"],
            style=prompts.style,
            prompt_format_version=PROMPT_FORMAT_VERSION,
        )
        rows.append(row)
    path.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return path


def load_prompt_file(path: str | Path) -> ClassPromptSet:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(rows, list):
        raise ConfigurationError(f"{path}: prompt file must be a JSON array of objects")
    entries = [ClassPrompt(**row) for row in rows]
    style = "ckepe"
    for entry in entries:
        style = entry.provenance.get("style", style)
    prompts = ClassPromptSet(entries=entries, style=style)
    prompts.validate()
    return prompts


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def embed_class_prompts(prompts: ClassPromptSet, model: MerlModel) -> np.ndarray:
    """Unit-norm projected prompt embeddings, one row per class."""
    prompts.validate()
    for entry in prompts.entries:
        if not entry.prompt_text.strip():
            raise ConfigurationError(
                f"class {entry.class_name!r} has an empty prompt text"
            )
    return model.embed_texts([e.prompt_text for e in prompts.entries])


def zero_shot_scores(
    records, prompt_embeddings: np.ndarray, model: MerlModel, batch_size: int = 256
) -> np.ndarray:
    """Cosine similarity of each record's projected embedding to each prompt."""
    prompt_embeddings = np.asarray(prompt_embeddings, dtype=np.float32)
    ecg = model.embed_ecg(records, batch_size=batch_size)
    if ecg.shape[1] != prompt_embeddings.shape[1]:
        raise BatchShapeError(
            f"embedding dims differ: ecg {ecg.shape[1]} vs prompts {prompt_embeddings.shape[1]}"
        )
    return ecg @ prompt_embeddings.T


def save_scores_csv(
    scores: np.ndarray,
    class_names: Sequence[str],
    path: str | Path,
    record_ids: Optional[Sequence[str]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", *class_names])
        for i, row in enumerate(np.asarray(scores)):
            rid = record_ids[i] if record_ids is not None else str(i)
            writer.writerow([rid, *[f"{v:.8g}" for v in row]])
    return path


# ---------------------------------------------------------------------------
# Macro AUC
# ---------------------------------------------------------------------------


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's mean rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [values.shape[0]]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def binary_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """One-vs-rest ROC AUC; NaN when a class has no positives or negatives.

    Computed from average ranks, which equals the fraction of
    (positive, negative) pairs ranked concordantly with ties worth 0.5.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = _average_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def macro_auc(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean over classes of one-vs-rest AUC.

    ``labels`` is an (N, C) binary matrix.  Classes that are all-positive or
    all-negative in the evaluation set are undefined (NaN in ``per_class``)
    and excluded from the mean; if every class is undefined this raises.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise BatchShapeError(
            f"scores {scores.shape} and labels {labels.shape} must be equal (N, C) shapes"
        )
    if not np.isin(labels, (0, 1)).all():
        raise ConfigurationError("labels must be binary (0/1)")
    per_class = np.array(
        [binary_auc(scores[:, c], labels[:, c]) for c in range(scores.shape[1])]
    )
    defined = ~np.isnan(per_class)
    if not defined.any():
        raise ConfigurationError(
            "macro AUC undefined: every class lacks positives or negatives"
        )
    return float(per_class[defined].mean()), per_class


def labels_matrix(
    entries: Sequence[corpus.ManifestEntry], vocabulary: Sequence[str]
) -> np.ndarray:
    """Binary (N, C) matrix of manifest labels in vocabulary order."""
    index = {name: i for i, name in enumerate(vocabulary)}
    out = np.zeros((len(entries), len(vocabulary)), dtype=np.int8)
    for row, entry in enumerate(entries):
        for label in entry.labels:
            out[row, index[label]] = 1
    return out
