"""Acceptance suite: one test per criterion, one printed line per criterion.

Heavy fixtures (the synthetic end-to-end checkpoint) are module-scoped so the
suite stays within a desk-scale CPU budget.  Run with ``pytest -s`` to see the
per-criterion lines as they pass.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
import torch

from merl import alignment, ckepe, corpus, encoders, harness, zeroshot
from tests.test_alignment import contrastive_oracle, random_unit_rows, uma_oracle


def report(criterion: str, detail: str) -> None:
    print(f"PASS  {criterion}: {detail}")


# ---------------------------------------------------------------------------
# Criterion 1: loss oracle equivalence
# ---------------------------------------------------------------------------


def test_criterion_01_loss_oracle_equivalence():
    start = time.time()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        L = 2 + seed % 15  # cycles through 2..16
        for d in (4, 32):
            e = random_unit_rows(rng, L, d)
            r = random_unit_rows(rng, L, d)
            sim = alignment.similarity_matrix(e, r, temperature=0.07)
            views = alignment.latent_dropout_views(
                rng.normal(size=(L, d)), 0.1, seed=seed
            )
            for variant in ("standard", "decoupled"):
                got_cma = alignment.cma_loss(sim, variant).item()
                want_cma = contrastive_oracle(e @ r.T, 0.07, variant)
                got_uma = alignment.uma_loss(views, 0.07, variant).item()
                want_uma = uma_oracle(
                    np.asarray(views.view1), np.asarray(views.view2), 0.07, variant
                )
                worst = max(worst, abs(got_cma - want_cma), abs(got_uma - want_uma))
                assert abs(got_cma - want_cma) < 1e-6
                assert abs(got_uma - want_uma) < 1e-6
    elapsed = time.time() - start
    assert elapsed < 30
    report(
        "criterion 1 (loss oracle equivalence)",
        f"cma+uma vs double-loop oracle, L in 2..16, d in {{4,32}}, 100 seeds, "
        f"both variants; worst |delta|={worst:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# Criterion 2: closed forms
# ---------------------------------------------------------------------------


def test_criterion_02_closed_forms():
    uniform = alignment.SimilarityMatrix(
        torch.full((2, 2), 0.3, dtype=torch.float64), temperature=1.0
    )
    value = alignment.cma_loss(uniform, "standard").item()
    assert abs(value - math.log(2)) < 1e-9

    strong = alignment.SimilarityMatrix(
        torch.tensor([[5.0, 0.0], [0.0, 5.0]], dtype=torch.float64), temperature=1.0
    )
    decoupled = alignment.cma_loss(strong, "decoupled").item()
    assert abs(decoupled - (-5.0)) < 1e-9
    report(
        "criterion 2 (closed forms)",
        f"uniform standard = ln 2 (|delta|={abs(value - math.log(2)):.1e}), "
        f"decoupled strong diagonal = -5 (|delta|={abs(decoupled + 5):.1e})",
    )


# ---------------------------------------------------------------------------
# Criterion 3: gradient correctness
# ---------------------------------------------------------------------------


def test_criterion_03_gradient_check():
    start = time.time()
    torch.manual_seed(0)
    cfg = encoders.EncoderConfig(text_embed_dim=24, shared_dim=16, projector_hidden=20)
    ecg_proj = encoders.build_projector(40, cfg).double()
    text_proj = encoders.build_projector(24, cfg).double()
    rng = np.random.default_rng(123)
    z_e = torch.tensor(rng.normal(size=(8, 40)))
    z_r = torch.tensor(rng.normal(size=(8, 24)))

    def loss_value() -> torch.Tensor:
        e_hat = encoders.project_and_normalize(z_e, ecg_proj)
        r_hat = encoders.project_and_normalize(z_r, text_proj)
        cma = alignment.cma_loss(alignment.similarity_matrix(e_hat, r_hat, 0.07))
        uma = alignment.uma_loss(
            alignment.latent_dropout_views(z_e, 0.1, seed=7), 0.07
        )
        return cma + uma

    params = list(ecg_proj.parameters()) + list(text_proj.parameters())
    loss = loss_value()
    grads = torch.autograd.grad(loss, params)

    flat_sizes = [p.numel() for p in params]
    total = sum(flat_sizes)
    chosen = rng.choice(total, size=20, replace=False)
    h = 1e-5
    worst_rel = 0.0
    for flat_index in chosen:
        param_idx = 0
        offset = int(flat_index)
        while offset >= flat_sizes[param_idx]:
            offset -= flat_sizes[param_idx]
            param_idx += 1
        param = params[param_idx]
        with torch.no_grad():
            original = param.view(-1)[offset].item()
            param.view(-1)[offset] = original + h
            plus = loss_value().item()
            param.view(-1)[offset] = original - h
            minus = loss_value().item()
            param.view(-1)[offset] = original
        fd = (plus - minus) / (2 * h)
        analytic = grads[param_idx].view(-1)[offset].item()
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)
        worst_rel = max(worst_rel, rel)
        assert rel < 1e-3, f"param {param_idx}[{offset}]: analytic {analytic} vs fd {fd}"
    elapsed = time.time() - start
    assert elapsed < 60
    report(
        "criterion 3 (gradient correctness)",
        f"20 projector parameters, central differences h=1e-5, float64; "
        f"worst relative error={worst_rel:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# Criterion 4: dropout semantics
# ---------------------------------------------------------------------------


def test_criterion_04_dropout_semantics():
    z = np.ones((1000, 1000), dtype=np.float32)
    views = alignment.latent_dropout_views(z, 0.1, seed=2024)
    frac1 = 1.0 - views.mask1.mean()
    frac2 = 1.0 - views.mask2.mean()
    assert abs(frac1 - 0.1) < 0.003
    assert abs(frac2 - 0.1) < 0.003

    z_small = np.random.default_rng(5).normal(size=(64, 128)).astype(np.float32)
    identity = alignment.latent_dropout_views(z_small, 0.0, seed=9)
    assert np.array_equal(identity.view1, z_small)
    assert np.array_equal(identity.view2, z_small)

    again = alignment.latent_dropout_views(z, 0.1, seed=2024)
    assert np.array_equal(views.mask1, again.mask1)
    assert np.array_equal(views.mask2, again.mask2)
    assert not np.array_equal(views.mask1, views.mask2)
    report(
        "criterion 4 (dropout semantics)",
        f"zero fractions {frac1:.4f}/{frac2:.4f} within 0.1 +/- 0.003 over 1e6 "
        f"entries; p=0 bit-exact; fixed seed bit-exact; masks independent",
    )


# ---------------------------------------------------------------------------
# Criterion 5: curation of a planted corpus
# ---------------------------------------------------------------------------


def test_criterion_05_curation():
    spec = corpus.SyntheticCorpusSpec(
        num_pairs=80, num_classes=2, num_leads=3, num_samples=60,
        sampling_rate_hz=6, noise_std=0.2, seed=31,
    )
    _, pairs = corpus.generate_synthetic_corpus(spec)

    # exactly 50 planted non-finite values, scattered across six records
    rng = np.random.default_rng(0)
    planted = 0
    for record_index, count in zip((2, 5, 9, 13, 17, 25), (8, 8, 8, 8, 8, 10)):
        pair = pairs[record_index]
        positions = rng.choice(60, size=count, replace=False)
        for j, pos in enumerate(positions):
            pair.ecg.signal[j % 3, pos] = np.nan if j % 2 == 0 else np.inf
        planted += count
    assert planted == 50

    # 10 planted report violations: 6 short, 4 empty
    for i in range(30, 36):
        pairs[i].report.text = "too short"
    for i in range(40, 44):
        pairs[i].report.text = ""

    result = corpus.curate_pairs(pairs)

    non_finite = sum(int((~np.isfinite(p.ecg.signal)).sum()) for p in result.kept)
    assert non_finite == 0
    assert min(p.report.word_count for p in result.kept) >= 3
    kept_ids = {p.ecg.record_id for p in result.kept}
    rejected_ids = {r.pair.ecg.record_id for r in result.rejected}
    all_ids = {p.ecg.record_id for p in pairs}
    assert kept_ids | rejected_ids == all_ids
    assert not kept_ids & rejected_ids
    reasons = sorted(r.reason for r in result.rejected)
    assert reasons.count("short_report") == 6
    assert reasons.count("empty_report") == 4
    assert len(result.rejected) == 10
    report(
        "criterion 5 (curation)",
        f"50 planted NaN/Inf values + 10 bad reports: kept={len(result.kept)} "
        f"rejected={len(result.rejected)}, 0 non-finite after repair, "
        f"min word count >= 3, kept+rejected partitions the input",
    )


# ---------------------------------------------------------------------------
# Criterion 6: macro AUC oracle
# ---------------------------------------------------------------------------


def pairwise_count_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(n^2) counting oracle: materialize every (positive, negative) pair."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return float("nan")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def test_criterion_06_macro_auc_oracle():
    rng = np.random.default_rng(77)
    worst = 0.0
    for trial in range(50):
        n = int(rng.integers(10, 2001))
        c = int(rng.integers(1, 5))
        scores = np.round(rng.normal(size=(n, c)), 2)  # coarse grid forces ties
        labels = (rng.random((n, c)) < rng.uniform(0.1, 0.9)).astype(int)
        labels[0, :] = 1
        labels[1, :] = 0
        macro, per_class = zeroshot.macro_auc(scores, labels)
        expected = [pairwise_count_auc(scores[:, j], labels[:, j]) for j in range(c)]
        for got, want in zip(per_class, expected):
            assert abs(got - want) < 1e-9
            worst = max(worst, abs(got - want))
        # strictly increasing transform: positive-coefficient odd polynomial + exp
        a, b, d = rng.uniform(0.5, 2.0, size=3)
        transformed = a * scores + b * scores**3 + np.exp(d * (scores - scores.max()))
        macro_t, _ = zeroshot.macro_auc(transformed, labels)
        assert abs(macro_t - macro) < 1e-9
    report(
        "criterion 6 (macro AUC)",
        f"50 tie-rich instances up to n=2000 match the pairwise-counting oracle "
        f"(worst |delta|={worst:.1e}); invariant under increasing transforms",
    )


# ---------------------------------------------------------------------------
# Criterion 7: synthetic end-to-end
# ---------------------------------------------------------------------------

END_TO_END_SPEC = corpus.SyntheticCorpusSpec(
    num_pairs=2000,
    num_classes=4,
    num_leads=12,
    num_samples=250,
    sampling_rate_hz=25,
    noise_std=1.0,
    seed=11,
    amplitude_jitter=0.4,
    phase_jitter=3.14,
    baseline_wander=0.5,
)

END_TO_END_PRETRAIN = alignment.PretrainConfig(
    epochs=6,
    batch_size=128,
    learning_rate=1e-3,
    scale_lr_with_batch=False,
    seed=7,
)

PROBE_CONFIG = harness.ProbeConfig(training_ratio=1.0, epochs=30, seed=5)


@pytest.fixture(scope="module")
def end_to_end():
    manifest, pairs = corpus.generate_synthetic_corpus(END_TO_END_SPEC)
    curated = corpus.curate_pairs(pairs)
    assert len(curated.kept) == len(pairs)
    manifest = corpus.split_by_ratio(manifest, (0.7, 0.1, 0.2), seed=0)
    task = harness.load_task(manifest, pairs=curated.kept)
    train_ids = {e.record_id for e in manifest.entries_for_split("train")}
    train_pairs = [p for p in curated.kept if p.ecg.record_id in train_ids]
    start = time.time()
    result = alignment.pretrain(train_pairs, encoders.EncoderConfig(), END_TO_END_PRETRAIN)
    train_seconds = time.time() - start
    return task, result.model, train_seconds


def test_criterion_07_synthetic_end_to_end(end_to_end):
    task, model, train_seconds = end_to_end
    assert train_seconds < 600

    prompts = zeroshot.build_synthetic_prompts(END_TO_END_SPEC.num_classes, "ckepe")
    zs = harness.evaluate_zero_shot(model, task, prompts, task_id="synthetic4")
    assert zs.macro_auc >= 0.85

    probe = harness.linear_probe(model, task, PROBE_CONFIG, task_id="synthetic4")
    assert probe.macro_auc >= 0.90

    random_model = encoders.MerlModel(
        encoders.EncoderConfig(), in_channels=END_TO_END_SPEC.num_leads, seed=99
    )
    random_probe = harness.linear_probe(random_model, task, PROBE_CONFIG, task_id="synthetic4")
    assert random_probe.macro_auc < probe.macro_auc

    report(
        "criterion 7 (synthetic end-to-end)",
        f"4-class/2000-pair corpus, {END_TO_END_PRETRAIN.epochs} epochs in "
        f"{train_seconds:.0f}s: zero-shot={zs.macro_auc:.4f} (>=0.85), "
        f"probe={probe.macro_auc:.4f} (>=0.90), random-init={random_probe.macro_auc:.4f} (strictly below)",
    )


# ---------------------------------------------------------------------------
# Criterion 8: loss-ablation direction
# ---------------------------------------------------------------------------


def test_criterion_08_uma_ablation_direction():
    spec = corpus.SyntheticCorpusSpec(
        num_pairs=800, num_classes=4, num_leads=12, num_samples=250,
        sampling_rate_hz=25, noise_std=1.0, seed=11,
        amplitude_jitter=0.4, phase_jitter=3.14, baseline_wander=0.5,
    )
    manifest, pairs = corpus.generate_synthetic_corpus(spec)
    manifest = corpus.split_by_ratio(manifest, (0.7, 0.1, 0.2), seed=0)
    task = harness.load_task(manifest, pairs=pairs)
    train_ids = {e.record_id for e in manifest.entries_for_split("train")}
    train_pairs = [p for p in pairs if p.ecg.record_id in train_ids]
    prompts = zeroshot.build_synthetic_prompts(4, "ckepe")

    scores = {"cma_uma": [], "cma_only": []}
    for seed in (1, 2, 3):
        for key, source in (("cma_uma", "latent_dropout"), ("cma_only", "none")):
            cfg = alignment.PretrainConfig(
                epochs=6, batch_size=64, learning_rate=1e-3,
                scale_lr_with_batch=False, seed=seed, uma_source=source,
            )
            run = alignment.pretrain(train_pairs, encoders.EncoderConfig(), cfg)
            scores[key].append(
                harness.evaluate_zero_shot(run.model, task, prompts).macro_auc
            )

    mean_both = float(np.mean(scores["cma_uma"]))
    mean_cma = float(np.mean(scores["cma_only"]))
    assert mean_both >= mean_cma - 0.02
    report(
        "criterion 8 (ablation direction)",
        f"zero-shot over 3 seeds: CMA+UMA={mean_both:.4f} vs CMA-only={mean_cma:.4f} "
        f"(tolerance -0.02)",
    )


# ---------------------------------------------------------------------------
# Criterion 9: transfer-map fidelity
# ---------------------------------------------------------------------------

EXPECTED_MAPS = {
    "ptbxl_super_to_cpsc2018": {
        "source_task": "ptbxl_super",
        "target_task": "cpsc2018",
        "mapping": {
            "HYP": [],
            "NORM": ["NORM"],
            "CD": ["1AVB", "CRBBB", "CLBBB"],
            "MI": [],
            "STTC": ["STE", "STD"],
        },
    },
    "ptbxl_super_to_csn": {
        "source_task": "ptbxl_super",
        "target_task": "csn",
        "mapping": {
            "HYP": ["RVH", "LVH"],
            "NORM": ["SR"],
            "CD": ["2AVB", "2AVB1", "1AVB", "AVB", "LBBB", "RBBB", "STDD"],
            "MI": ["MI"],
            "STTC": ["STTC", "STE", "TWO", "STTU", "QTIE", "TWC"],
        },
    },
    "cpsc2018_to_csn": {
        "source_task": "cpsc2018",
        "target_task": "csn",
        "mapping": {
            "AFIB": ["AFIB"],
            "VPC": ["VPB"],
            "NORM": ["SR"],
            "1AVB": ["1AVB"],
            "CRBBB": ["RBBB"],
            "STE": ["STE"],
            "PAC": ["APB"],
            "CLBBB": ["LBBB"],
            "STD": ["STE", "STTC", "STTU", "STDD"],
        },
    },
}


def test_criterion_09_transfer_map_fidelity():
    for name, expected in EXPECTED_MAPS.items():
        tmap = harness.builtin_transfer_map(name)
        assert tmap.source_task == expected["source_task"]
        assert tmap.target_task == expected["target_task"]
        assert tmap.mapping == expected["mapping"]
        assert list(tmap.mapping.keys()) == list(expected["mapping"].keys())
        for source, targets in expected["mapping"].items():
            assert tmap.mapping[source] == targets
    assert harness.builtin_transfer_map("ptbxl_super_to_cpsc2018").mapping["CD"] == [
        "1AVB", "CRBBB", "CLBBB",
    ]
    assert harness.builtin_transfer_map("cpsc2018_to_csn").mapping["STD"] == [
        "STE", "STTC", "STTU", "STDD",
    ]
    report(
        "criterion 9 (transfer-map fidelity)",
        "all three category-matching fixtures equal the published tables field by field",
    )


# ---------------------------------------------------------------------------
# Criterion 10: CKEPE verification guarantee
# ---------------------------------------------------------------------------


def test_criterion_10_ckepe_guarantee():
    web = ckepe.KnowledgeBase(
        name="web", kind="web_snomed",
        terms={"paroxysmal atrial fibrillation", "persistent atrial fibrillation",
               "longstanding persistent atrial fibrillation"},
    )
    local = ckepe.KnowledgeBase(
        name="local", kind="local_scp",
        terms={"absent p waves", "irregular rr intervals"},
    )
    response = (
        "subtypes: paroxysmal atrial fibrillation; persistent atrial fibrillation; "
        "longstanding persistent atrial fibrillation; invented subtype alpha\n"
        "attributes: absent p waves; irregular rr intervals; invented wave beta; "
        "invented interval gamma"
    )
    client = ckepe.FixtureLLMClient.from_condition_map({"atrial fibrillation": response})

    candidates = ckepe.query_candidates("atrial fibrillation", client)
    verified = ckepe.verify_against_kb(candidates, [web, local])
    kept = verified.kept_subtypes + verified.kept_attributes
    discarded = [t for t, _ in verified.discarded]
    assert sorted(kept) == [
        "absent p waves",
        "irregular rr intervals",
        "longstanding persistent atrial fibrillation",
        "paroxysmal atrial fibrillation",
        "persistent atrial fibrillation",
    ]
    assert sorted(discarded) == [
        "invented interval gamma", "invented subtype alpha", "invented wave beta",
    ]
    assembled = ckepe.assemble_prompt(verified, "ckepe")
    for term in kept:
        assert term in assembled.prompt_text
    for term in discarded:
        assert term not in assembled.prompt_text

    # disabling the local KB flips its two terms to discarded
    verified_web_only = ckepe.verify_against_kb(candidates, [web])
    assert sorted(verified_web_only.kept_subtypes + verified_web_only.kept_attributes) == [
        "longstanding persistent atrial fibrillation",
        "paroxysmal atrial fibrillation",
        "persistent atrial fibrillation",
    ]
    flipped = {t for t, _ in verified_web_only.discarded}
    assert {"absent p waves", "irregular rr intervals"} <= flipped
    report(
        "criterion 10 (CKEPE guarantee)",
        "5 KB-present terms kept, 3 absent terms discarded, prompt free of "
        "discarded terms; disabling one KB flips exactly its terms",
    )


# ---------------------------------------------------------------------------
# Criterion 11: determinism of the full pipeline
# ---------------------------------------------------------------------------


def test_criterion_11_pipeline_determinism():
    spec = corpus.SyntheticCorpusSpec(
        num_pairs=64, num_classes=2, num_leads=4, num_samples=64,
        sampling_rate_hz=8, noise_std=0.4, seed=21,
    )

    def run_once():
        manifest, pairs = corpus.generate_synthetic_corpus(spec)
        manifest = corpus.split_by_ratio(manifest, (0.7, 0.1, 0.2), seed=1)
        task = harness.load_task(manifest, pairs=pairs)
        train_ids = {e.record_id for e in manifest.entries_for_split("train")}
        train_pairs = [p for p in pairs if p.ecg.record_id in train_ids]
        enc_cfg = encoders.EncoderConfig(
            text_embed_dim=64, shared_dim=32, projector_hidden=48
        )
        pre_cfg = alignment.PretrainConfig(
            epochs=2, batch_size=16, learning_rate=1e-3,
            scale_lr_with_batch=False, seed=13,
        )
        run = alignment.pretrain(train_pairs, enc_cfg, pre_cfg)
        prompts = zeroshot.build_synthetic_prompts(2, "ckepe")
        zs = harness.evaluate_zero_shot(run.model, task, prompts, task_id="det")
        probe = harness.linear_probe(
            run.model, task, harness.ProbeConfig(training_ratio=1.0, epochs=5, seed=3),
            task_id="det",
        )
        return run.step_log, run.epoch_log, zs, probe

    steps_a, epochs_a, zs_a, probe_a = run_once()
    steps_b, epochs_b, zs_b, probe_b = run_once()
    assert steps_a == steps_b
    assert epochs_a == epochs_b
    assert zs_a == zs_b
    assert probe_a == probe_b
    assert zs_a.config_fingerprint == zs_b.config_fingerprint
    assert probe_a.config_fingerprint == probe_b.config_fingerprint
    report(
        "criterion 11 (determinism)",
        f"identical loss logs over {len(steps_a)} steps and identical zero-shot/probe "
        f"results+fingerprints across two full reruns",
    )
