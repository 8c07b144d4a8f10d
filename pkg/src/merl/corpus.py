"""Paired ECG/report corpora: ingestion, repair, curation, splits, synthesis.

The on-disk contract is a UTF-8 CSV manifest with header
``record_id,signal_path,report,labels,split`` (labels are ``|``-separated,
split is one of ``train``/``valid``/``test`` or empty) plus one signal file
per record.  Signal files are little-endian binary: magic ``ECG1``, three
uint32 fields (num_leads, num_samples, sampling_rate_hz) and a float32
lead-major payload.  A plain CSV fallback (one lead per row) is accepted so
tests and small corpora can stay human-readable.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigurationError,
    ManifestError,
    ManifestParseError,
    UnrecoverableLeadError,
    VocabularyError,
)

MANIFEST_HEADER = ["record_id", "signal_path", "report", "labels", "split"]
SIGNAL_MAGIC = b"ECG1"
SPLIT_NAMES = ("train", "valid", "test")

REJECT_EMPTY_REPORT = "empty_report"
REJECT_SHORT_REPORT = "short_report"
REJECT_UNRECOVERABLE_SIGNAL = "unrecoverable_signal"

MIN_REPORT_WORDS = 3
# Neighbor repair draws this many finite values around each invalid sample.
REPAIR_NEIGHBORS = 6


# ---------------------------------------------------------------------------
# Core record types
# ---------------------------------------------------------------------------


@dataclass
class ECGRecord:
    """A multi-lead, fixed-rate raw signal with metadata."""

    record_id: str
    signal: np.ndarray  # (num_leads, num_samples)
    sampling_rate_hz: int
    lead_names: Optional[List[str]] = None

    def __post_init__(self) -> None:
        self.signal = np.asarray(self.signal)
        if self.signal.ndim != 2 or self.signal.shape[0] < 1:
            raise ConfigurationError(
                f"record {self.record_id!r}: signal must be a (num_leads, num_samples) "
                f"matrix with at least one lead, got shape {self.signal.shape}"
            )
        if int(self.sampling_rate_hz) <= 0:
            raise ConfigurationError(
                f"record {self.record_id!r}: sampling_rate_hz must be positive"
            )
        if self.lead_names is None:
            self.lead_names = [f"lead_{i}" for i in range(self.signal.shape[0])]
        if len(self.lead_names) != self.signal.shape[0]:
            raise ConfigurationError(
                f"record {self.record_id!r}: {len(self.lead_names)} lead names "
                f"for {self.signal.shape[0]} leads"
            )

    @property
    def num_leads(self) -> int:
        return self.signal.shape[0]

    @property
    def num_samples(self) -> int:
        return self.signal.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.num_samples / self.sampling_rate_hz

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.signal).all())


@dataclass
class ClinicalReport:
    """Free-text report attached to one ECG record."""

    text: str

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass
class ECGReportPair:
    """Unit of pretraining: one ECG record joined to its report."""

    ecg: ECGRecord
    report: ClinicalReport


@dataclass
class RejectedPair:
    pair: ECGReportPair
    reason: str


@dataclass
class CurationResult:
    kept: List[ECGReportPair]
    rejected: List[RejectedPair]


# ---------------------------------------------------------------------------
# Signal repair and curation
# ---------------------------------------------------------------------------


def repair_invalid(signal: np.ndarray, record_id: str = "<unknown>") -> np.ndarray:
    """Replace NaN/Inf samples by the mean of the six nearest finite samples.

    The window is three finite values on each side; at lead boundaries or
    across runs of invalid samples it widens toward the nearest finite values
    so that exactly six contribute.  Replacement values are always drawn from
    the original finite samples, which makes the operation idempotent.  A lead
    that needs repair but has fewer than six finite samples is considered
    unrecoverable.
    """
    signal = np.asarray(signal)
    finite = np.isfinite(signal)
    if finite.all():
        return signal

    out = np.array(signal, copy=True)
    half = REPAIR_NEIGHBORS // 2
    for lead in range(signal.shape[0]):
        lead_finite = finite[lead]
        if lead_finite.all():
            continue
        finite_idx = np.flatnonzero(lead_finite)
        if finite_idx.size < REPAIR_NEIGHBORS:
            raise UnrecoverableLeadError(
                f"record {record_id!r} lead {lead}: {finite_idx.size} finite "
                f"samples, need at least {REPAIR_NEIGHBORS} to repair",
                record_id=record_id,
                lead=lead,
            )
        finite_vals = signal[lead, finite_idx]
        for bad in np.flatnonzero(~lead_finite):
            pos = int(np.searchsorted(finite_idx, bad))
            n_left = min(half, pos)
            n_right = min(half, finite_idx.size - pos)
            # Widen toward whichever side still has finite values.
            n_right += half - n_left
            n_left += half - min(half, finite_idx.size - pos)
            window = np.concatenate(
                [finite_vals[pos - n_left : pos], finite_vals[pos : pos + n_right]]
            )
            out[lead, bad] = float(window.mean())
    return out


def curate_pairs(pairs: Sequence[ECGReportPair]) -> CurationResult:
    """Partition pairs into (kept, rejected-with-reason).

    Kept pairs have a report of at least three whitespace-separated words and
    a fully finite signal after neighbor repair; the kept pair carries the
    repaired signal.  Rejection reasons: ``empty_report``, ``short_report``,
    ``unrecoverable_signal``.
    """
    kept: List[ECGReportPair] = []
    rejected: List[RejectedPair] = []
    for pair in pairs:
        words = pair.report.word_count
        if words == 0:
            rejected.append(RejectedPair(pair, REJECT_EMPTY_REPORT))
            continue
        if words < MIN_REPORT_WORDS:
            rejected.append(RejectedPair(pair, REJECT_SHORT_REPORT))
            continue
        try:
            repaired = repair_invalid(pair.ecg.signal, record_id=pair.ecg.record_id)
        except UnrecoverableLeadError:
            rejected.append(RejectedPair(pair, REJECT_UNRECOVERABLE_SIGNAL))
            continue
        if repaired is pair.ecg.signal:
            kept.append(pair)
        else:
            ecg = replace(pair.ecg, signal=repaired)
            kept.append(ECGReportPair(ecg=ecg, report=pair.report))
    return CurationResult(kept=kept, rejected=rejected)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    record_id: str
    signal_path: str
    report: str
    labels: Tuple[str, ...]
    split: str = ""


@dataclass
class CorpusManifest:
    """Index of a corpus: one row per record plus the label vocabulary."""

    entries: List[ManifestEntry]
    label_vocabulary: List[str]
    notes: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def split_assignment(self) -> Dict[str, str]:
        return {e.record_id: e.split for e in self.entries if e.split}

    def entries_for_split(self, split: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def validate(self) -> None:
        seen = set()
        for entry in self.entries:
            if entry.record_id in seen:
                raise ManifestError(
                    f"duplicate record_id {entry.record_id!r}", record_id=entry.record_id
                )
            seen.add(entry.record_id)
        vocab = set(self.label_vocabulary)
        for entry in self.entries:
            for label in entry.labels:
                if label not in vocab:
                    raise VocabularyError(
                        f"record {entry.record_id!r}: label {label!r} not in vocabulary",
                        record_id=entry.record_id,
                        label=label,
                    )


def load_manifest(
    path: str | Path,
    vocabulary: Optional[Sequence[str]] = None,
    check_files: bool = False,
) -> CorpusManifest:
    """Parse a manifest CSV.

    When ``vocabulary`` is omitted it is derived as the sorted set of labels
    seen in the file.  With ``check_files=True`` every referenced signal file
    must exist relative to the manifest's directory; the default defers that
    check to load time.
    """
    path = Path(path)
    entries: List[ManifestEntry] = []
    seen: Dict[str, int] = {}
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestParseError(f"{path}: empty manifest", line=0)
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestParseError(
                f"{path}: bad header {header!r}, expected {MANIFEST_HEADER!r}", line=1
            )
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestParseError(
                    f"{path}:{line}: expected {len(MANIFEST_HEADER)} columns, got {len(row)}",
                    line=line,
                )
            record_id, signal_path, report, labels_field, split = row
            record_id = record_id.strip()
            if not record_id:
                raise ManifestParseError(f"{path}:{line}: empty record_id", line=line)
            if record_id in seen:
                raise ManifestParseError(
                    f"{path}:{line}: duplicate record_id {record_id!r} "
                    f"(first seen on line {seen[record_id]})",
                    line=line,
                    record_id=record_id,
                )
            seen[record_id] = line
            split = split.strip()
            if split not in ("",) + SPLIT_NAMES:
                raise ManifestParseError(
                    f"{path}:{line}: bad split {split!r}", line=line
                )
            labels = tuple(l.strip() for l in labels_field.split("|") if l.strip())
            entries.append(
                ManifestEntry(
                    record_id=record_id,
                    signal_path=signal_path.strip(),
                    report=report,
                    labels=labels,
                    split=split,
                )
            )
    if vocabulary is None:
        vocab = sorted({label for e in entries for label in e.labels})
    else:
        vocab = list(vocabulary)
    manifest = CorpusManifest(entries=entries, label_vocabulary=vocab)
    manifest.validate()
    if check_files:
        base = path.parent
        for entry in manifest.entries:
            if entry.signal_path and not (base / entry.signal_path).exists():
                raise ManifestError(
                    f"record {entry.record_id!r}: signal file "
                    f"{entry.signal_path!r} not found under {base}",
                    record_id=entry.record_id,
                )
    return manifest


def save_manifest(manifest: CorpusManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            writer.writerow(
                [e.record_id, e.signal_path, e.report, "|".join(e.labels), e.split]
            )
    return path


# ---------------------------------------------------------------------------
# Signal files
# ---------------------------------------------------------------------------


def write_signal(record: ECGRecord, path: str | Path) -> Path:
    """Write the binary signal format (header + float32 lead-major payload)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = struct.pack(
        "<4sIII",
        SIGNAL_MAGIC,
        record.num_leads,
        record.num_samples,
        int(record.sampling_rate_hz),
    )
    payload = np.ascontiguousarray(record.signal, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    return path


def read_signal(
    path: str | Path, record_id: Optional[str] = None, fallback_rate_hz: int = 500
) -> ECGRecord:
    """Read a signal file, accepting the binary format or the CSV fallback.

    CSV files carry no rate header, so ``fallback_rate_hz`` is used for them.
    """
    path = Path(path)
    raw = path.read_bytes()
    rid = record_id if record_id is not None else path.stem
    if raw[:4] == SIGNAL_MAGIC:
        if len(raw) < 16:
            raise ManifestParseError(f"{path}: truncated signal header")
        _, num_leads, num_samples, rate = struct.unpack("<4sIII", raw[:16])
        expected = 16 + 4 * num_leads * num_samples
        if len(raw) != expected:
            raise ManifestParseError(
                f"{path}: payload size {len(raw) - 16} does not match "
                f"{num_leads}x{num_samples} float32"
            )
        signal = (
            np.frombuffer(raw, dtype="<f4", offset=16)
            .reshape(num_leads, num_samples)
            .astype(np.float32)
        )
        return ECGRecord(record_id=rid, signal=signal, sampling_rate_hz=int(rate))
    try:
        signal = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float32)
    except ValueError as exc:
        raise ManifestParseError(f"{path}: neither binary signal nor CSV ({exc})")
    return ECGRecord(record_id=rid, signal=signal, sampling_rate_hz=fallback_rate_hz)


def load_pairs(
    manifest: CorpusManifest, base_dir: str | Path, fallback_rate_hz: int = 500
) -> List[ECGReportPair]:
    """Materialize manifest rows into in-memory pairs."""
    base = Path(base_dir)
    pairs = []
    for entry in manifest.entries:
        record = read_signal(
            base / entry.signal_path,
            record_id=entry.record_id,
            fallback_rate_hz=fallback_rate_hz,
        )
        pairs.append(ECGReportPair(ecg=record, report=ClinicalReport(entry.report)))
    return pairs


def save_corpus(
    manifest: CorpusManifest,
    pairs: Sequence[ECGReportPair],
    out_dir: str | Path,
    manifest_name: str = "manifest.csv",
) -> Path:
    """Write signal files plus the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    signals_dir = out_dir / "signals"
    by_id = {p.ecg.record_id: p for p in pairs}
    entries = []
    for entry in manifest.entries:
        pair = by_id[entry.record_id]
        rel = f"signals/{entry.record_id}.ecg"
        write_signal(pair.ecg, out_dir / rel)
        entries.append(replace(entry, signal_path=rel))
    signals_dir.mkdir(parents=True, exist_ok=True)
    out = CorpusManifest(
        entries=entries,
        label_vocabulary=list(manifest.label_vocabulary),
        notes=list(manifest.notes),
    )
    return save_manifest(out, out_dir / manifest_name)


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassTokens:
    """Deterministic vocabulary tied to one synthetic class."""

    name: str
    subtype: str
    attribute: str


def synthetic_class_tokens(num_classes: int) -> List[ClassTokens]:
    return [
        ClassTokens(
            name=f"condition{k}", subtype=f"subtype{k}", attribute=f"attribute{k}"
        )
        for k in range(num_classes)
    ]


def synthetic_report_text(labels: Sequence[int], tokens: Sequence[ClassTokens]) -> str:
    segments = [
        f"{tokens[k].name} rhythm with {tokens[k].subtype} morphology "
        f"and {tokens[k].attribute} pattern"
        for k in labels
    ]
    return "; ".join(segments)


@dataclass
class SyntheticCorpusSpec:
    """Parameters of the deterministic synthetic ECG/report generator.

    Class identity is carried by waveform frequency and amplitude envelope;
    per-record nuisance (noise, amplitude/phase jitter, baseline wander) is
    controlled separately so the noise-free generator stays exactly
    class-deterministic.
    """

    num_pairs: int
    num_classes: int
    num_leads: int = 12
    num_samples: int = 5000
    sampling_rate_hz: int = 500
    noise_std: float = 0.1
    seed: int = 0
    extra_label_prob: float = 0.0  # chance of a second class label per record
    amplitude_jitter: float = 0.0  # record-level scale drawn from U[1-a, 1+a]
    phase_jitter: float = 0.0  # record-level phase offset in radians
    baseline_wander: float = 0.0  # amplitude of a slow additive drift

    def validate(self) -> None:
        if self.num_pairs < 1:
            raise ConfigurationError("num_pairs must be positive")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be at least 2")
        if self.num_leads < 1 or self.num_samples < 1 or self.sampling_rate_hz < 1:
            raise ConfigurationError("leads, samples, and rate must be positive")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be non-negative")
        if not 0.0 <= self.extra_label_prob < 1.0:
            raise ConfigurationError("extra_label_prob must be in [0, 1)")


def class_waveform(class_index: int, spec: SyntheticCorpusSpec) -> np.ndarray:
    """Noise-free waveform for one class: a lead-phased sinusoid under a
    class-specific amplitude envelope."""
    t = np.arange(spec.num_samples) / spec.sampling_rate_hz
    duration = spec.num_samples / spec.sampling_rate_hz
    freq = 2.0 * (class_index + 1) / duration  # 2(k+1) cycles per window
    envelope = 1.0 + 0.3 * np.cos(
        2.0 * np.pi * t / duration + 2.0 * np.pi * class_index / spec.num_classes
    )
    amplitude = 1.0 + 0.1 * class_index
    lead_phases = np.pi * np.arange(spec.num_leads) / spec.num_leads
    waves = amplitude * np.sin(
        2.0 * np.pi * freq * t[None, :] + lead_phases[:, None]
    )
    return (waves * envelope[None, :]).astype(np.float32)


def _record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([_unsigned(seed), index]))


def _unsigned(seed: int) -> int:
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def generate_synthetic_corpus(
    spec: SyntheticCorpusSpec,
) -> Tuple[CorpusManifest, List[ECGReportPair]]:
    """Build a labeled corpus where report text is predictive of the labels.

    Deterministic for a fixed spec: labels and nuisance parameters derive from
    per-record seed streams, so the output does not depend on generation
    order.  Multi-label records sum the class waveforms.
    """
    spec.validate()
    tokens = synthetic_class_tokens(spec.num_classes)
    vocabulary = [tok.name for tok in tokens]
    base_waves = [class_waveform(k, spec) for k in range(spec.num_classes)]
    t = np.arange(spec.num_samples) / spec.sampling_rate_hz
    duration = spec.num_samples / spec.sampling_rate_hz

    entries: List[ManifestEntry] = []
    pairs: List[ECGReportPair] = []
    width = len(str(max(spec.num_pairs - 1, 1)))
    for i in range(spec.num_pairs):
        rng = _record_rng(spec.seed, i)
        primary = int(rng.integers(spec.num_classes))
        labels = [primary]
        if spec.extra_label_prob > 0 and rng.random() < spec.extra_label_prob:
            extra = int(rng.integers(spec.num_classes - 1))
            if extra >= primary:
                extra += 1
            labels.append(extra)
        signal = np.zeros((spec.num_leads, spec.num_samples), dtype=np.float32)
        for k in labels:
            signal += base_waves[k]
        if spec.amplitude_jitter > 0:
            scale = rng.uniform(1.0 - spec.amplitude_jitter, 1.0 + spec.amplitude_jitter)
            signal = signal * np.float32(scale)
        if spec.phase_jitter > 0:
            shift = rng.uniform(-spec.phase_jitter, spec.phase_jitter)
            frac = shift / (2.0 * np.pi)
            roll = int(round(frac * spec.num_samples))
            signal = np.roll(signal, roll, axis=1)
        if spec.baseline_wander > 0:
            drift_phase = rng.uniform(0.0, 2.0 * np.pi)
            drift = spec.baseline_wander * np.sin(
                2.0 * np.pi * t / duration + drift_phase
            )
            signal = signal + drift[None, :].astype(np.float32)
        if spec.noise_std > 0:
            signal = signal + rng.normal(
                0.0, spec.noise_std, size=signal.shape
            ).astype(np.float32)

        record_id = f"synth{i:0{width}d}"
        record = ECGRecord(
            record_id=record_id,
            signal=signal.astype(np.float32),
            sampling_rate_hz=spec.sampling_rate_hz,
        )
        report = ClinicalReport(synthetic_report_text(labels, tokens))
        pairs.append(ECGReportPair(ecg=record, report=report))
        entries.append(
            ManifestEntry(
                record_id=record_id,
                signal_path="",
                report=report.text,
                labels=tuple(tokens[k].name for k in labels),
            )
        )
    manifest = CorpusManifest(entries=entries, label_vocabulary=vocabulary)
    manifest.validate()
    return manifest, pairs


# ---------------------------------------------------------------------------
# Deterministic splits
# ---------------------------------------------------------------------------


def _derived_rng(seed: int, *tags: str) -> np.random.Generator:
    entropy: List[int] = [_unsigned(seed)]
    for tag in tags:
        digest = hashlib.sha256(tag.encode("utf-8")).digest()
        entropy.extend(
            int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)
        )
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _stable_fraction(record_id: str) -> float:
    digest = hashlib.sha256(record_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") / 2**64


def label_signature(labels: Sequence[str]) -> str:
    return "|".join(sorted(labels)) if labels else "<unlabeled>"


def stratified_priority_order(
    items: Iterable[Tuple[str, str]], seed: int
) -> List[str]:
    """Order record ids so any prefix is approximately stratum-proportional.

    ``items`` are (record_id, stratum_signature).  The order is a pure
    function of the id set, strata, and seed; input order is irrelevant.
    """
    by_stratum: Dict[str, List[str]] = defaultdict(list)
    for rid, sig in items:
        by_stratum[sig].append(rid)
    keyed: List[Tuple[float, float, str]] = []
    for sig in sorted(by_stratum):
        ids = sorted(by_stratum[sig])
        rng = _derived_rng(seed, "stratum:" + sig)
        order = rng.permutation(len(ids))
        n = len(ids)
        for pos, idx in enumerate(order):
            rid = ids[idx]
            keyed.append(((pos + 0.5) / n, _stable_fraction(rid), rid))
    keyed.sort()
    return [rid for _, _, rid in keyed]


def _apportion(total: int, ratios: Sequence[float]) -> List[int]:
    raw = [total * r for r in ratios]
    counts = [int(math.floor(x)) for x in raw]
    remainders = [x - c for x, c in zip(raw, counts)]
    short = total - sum(counts)
    for idx in sorted(range(len(ratios)), key=lambda i: -remainders[i])[:short]:
        counts[idx] += 1
    return counts


def split_by_ratio(
    manifest: CorpusManifest,
    ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> CorpusManifest:
    """Assign train/valid/test splits deterministically.

    Splits are stratified by label set whenever the result leaves every class
    with at least one sample in each split; otherwise it falls back to an
    unstratified shuffle and records a warning note on the manifest.  The
    assignment depends only on (record ids, labels, ratios, seed), never on
    manifest row order.
    """
    if not manifest.entries:
        raise ManifestError("cannot split an empty manifest")
    if len(ratios) != 3:
        raise ConfigurationError("ratios must be (train, valid, test)")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"ratios must sum to 1, got {sum(ratios)}")

    counts = _apportion(len(manifest.entries), ratios)
    items = [(e.record_id, label_signature(e.labels)) for e in manifest.entries]
    order = stratified_priority_order(items, seed)
    assignment = _slice_assignment(order, counts)
    notes = list(manifest.notes)

    if not _every_class_in_every_split(manifest, assignment):
        ids = sorted(e.record_id for e in manifest.entries)
        rng = _derived_rng(seed, "unstratified")
        order = [ids[i] for i in rng.permutation(len(ids))]
        assignment = _slice_assignment(order, counts)
        notes.append(
            "split_by_ratio: stratified split infeasible "
            "(some class missing from a split); fell back to unstratified"
        )

    entries = [replace(e, split=assignment[e.record_id]) for e in manifest.entries]
    return CorpusManifest(
        entries=entries, label_vocabulary=list(manifest.label_vocabulary), notes=notes
    )


def _slice_assignment(order: Sequence[str], counts: Sequence[int]) -> Dict[str, str]:
    assignment: Dict[str, str] = {}
    start = 0
    for split, count in zip(SPLIT_NAMES, counts):
        for rid in order[start : start + count]:
            assignment[rid] = split
        start += count
    return assignment


def _every_class_in_every_split(
    manifest: CorpusManifest, assignment: Dict[str, str]
) -> bool:
    present: Dict[str, set] = {split: set() for split in SPLIT_NAMES}
    for entry in manifest.entries:
        present[assignment[entry.record_id]].update(entry.labels)
    classes = {label for e in manifest.entries for label in e.labels}
    return all(classes <= present[split] for split in SPLIT_NAMES)
