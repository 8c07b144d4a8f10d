"""CLI contract: subcommands, --set overrides, --seed, JSON errors."""

from __future__ import annotations

import json

import pytest

from merl import harness
from merl.cli import main

MINI_CONFIG = """
[experiment]
name = mini
out_dir = run
seed = 3

[corpus]
num_pairs = 36
num_classes = 2
num_leads = 4
num_samples = 64
sampling_rate_hz = 8
noise_std = 0.3

[encoder]
text_embed_dim = 64
shared_dim = 32
projector_hidden = 48

[pretrain]
epochs = 1
batch_size = 12
learning_rate = 0.001
scale_lr_with_batch = false

[probe]
epochs = 2
batch_size = 8

[zeroshot]
prompt_style = ckepe
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "mini.ini"
    path.write_text(MINI_CONFIG)
    return path


class TestSynthCommand:
    def test_writes_corpus(self, config_path, capsys):
        assert main(["synth", "--config", str(config_path)]) == 0
        out_dir = config_path.parent / "run"
        assert (out_dir / "manifest.csv").exists()
        signals = list((out_dir / "signals").glob("*.ecg"))
        assert len(signals) == 36
        assert "36 records" in capsys.readouterr().out


class TestPipelineCommands:
    def test_pretrain_then_zeroshot_then_probe_then_report(self, config_path, capsys):
        assert main(["pretrain", "--config", str(config_path)]) == 0
        out_dir = config_path.parent / "run"
        assert (out_dir / "checkpoint.npz").exists()
        assert (out_dir / "train_log.jsonl").exists()

        # reuse the checkpoint for evaluation commands
        reuse = ["--set", "pretrain.checkpoint=run/checkpoint.npz"]
        assert main(["zeroshot", "--config", str(config_path), *reuse]) == 0
        assert main(["probe", "--config", str(config_path), *reuse]) == 0
        results = harness.read_results(out_dir / "results.jsonl")
        modes = {r["mode"] for r in results if "macro_auc" in r}
        assert modes == {"zeroshot", "linear_probe"}

        assert main(["report", "--config", str(config_path)]) == 0
        table = capsys.readouterr().out
        assert "zeroshot" in table and "linear_probe" in table

    def test_seed_and_set_override_affect_fingerprint(self, config_path):
        out_dir = config_path.parent / "run"
        assert main(["pretrain", "--config", str(config_path)]) == 0
        reuse = ["--set", "pretrain.checkpoint=run/checkpoint.npz"]

        assert main(["probe", "--config", str(config_path), *reuse]) == 0
        assert main(["probe", "--config", str(config_path), *reuse]) == 0
        assert (
            main(
                [
                    "probe", "--config", str(config_path), *reuse,
                    "--set", "probe.training_ratio=0.5",
                ]
            )
            == 0
        )
        results = [
            r for r in harness.read_results(out_dir / "results.jsonl")
            if r.get("mode") == "linear_probe"
        ]
        assert results[0]["config_fingerprint"] == results[1]["config_fingerprint"]
        assert results[2]["config_fingerprint"] != results[0]["config_fingerprint"]


class TestTransferCommand:
    def test_transfer_against_renamed_target(self, config_path, tmp_path):
        # target corpus: same generator, labels renamed target0/target1
        assert main(["synth", "--config", str(config_path)]) == 0
        run_dir = config_path.parent / "run"
        manifest_text = (run_dir / "manifest.csv").read_text()
        target_dir = tmp_path / "target"
        target_dir.mkdir()
        (target_dir / "manifest.csv").write_text(
            manifest_text.replace("condition0", "target0").replace("condition1", "target1")
        )
        import shutil

        shutil.copytree(run_dir / "signals", target_dir / "signals")
        tmap = {
            "source_task": "mini",
            "target_task": "renamed",
            "mapping": {"condition0": ["target0"], "condition1": ["target1"]},
            "dropped_target_categories": [],
        }
        (tmp_path / "map.json").write_text(json.dumps(tmap))

        assert main(["pretrain", "--config", str(config_path)]) == 0
        code = main(
            [
                "transfer", "--config", str(config_path),
                "--set", "pretrain.checkpoint=run/checkpoint.npz",
                "--set", f"transfer.map={tmp_path / 'map.json'}",
                "--set", f"transfer.target_manifest={target_dir / 'manifest.csv'}",
                "--set", "transfer.split=test",
            ]
        )
        assert code == 0
        results = harness.read_results(run_dir / "results.jsonl")
        assert any(r.get("mode") == "transfer" for r in results)


class TestCkepeCommand:
    def test_builds_prompt_file_offline(self, tmp_path, capsys):
        (tmp_path / "web.json").write_text(
            json.dumps([{"canonical": "paroxysmal atrial fibrillation", "synonyms": []}])
        )
        (tmp_path / "local.json").write_text(
            json.dumps([{"canonical": "absent p waves", "synonyms": []}])
        )
        (tmp_path / "responses.json").write_text(
            json.dumps(
                {
                    "by_condition": {
                        "atrial fibrillation": (
                            "subtypes: paroxysmal atrial fibrillation; fake subtype\n"
                            "attributes: absent p waves"
                        )
                    }
                }
            )
        )
        (tmp_path / "ckepe.ini").write_text(
            "[ckepe]\n"
            "conditions = atrial fibrillation\n"
            "web_kb = web.json\n"
            "local_kb = local.json\n"
            "llm_fixture = responses.json\n"
            "out = prompts.json\n"
        )
        assert main(["ckepe", "--config", str(tmp_path / "ckepe.ini")]) == 0
        payload = json.loads((tmp_path / "prompts.json").read_text())
        assert isinstance(payload, list)
        prompt = payload[0]
        assert "paroxysmal atrial fibrillation" in prompt["prompt_text"]
        assert "fake subtype" not in prompt["prompt_text"]
        assert "1 discarded" in capsys.readouterr().out


class TestErrorReporting:
    def test_missing_config_is_json_error(self, tmp_path, capsys):
        code = main(["pretrain", "--config", str(tmp_path / "nope.ini")])
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "configuration_error"

    def test_malformed_override_is_json_error(self, config_path, capsys):
        code = main(["pretrain", "--config", str(config_path), "--set", "oops"])
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error"] == "configuration_error"

    def test_unknown_config_key_is_json_error(self, config_path, capsys):
        code = main(
            ["pretrain", "--config", str(config_path), "--set", "pretrain.optimizer=sgd"]
        )
        assert code == 1
        message = json.loads(capsys.readouterr().err)["message"]
        assert "optimizer" in message
