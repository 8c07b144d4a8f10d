"""Command-line interface.

Every subcommand takes ``--config <path>`` (INI sections of key = value),
repeatable ``--set section.key=value`` overrides, and ``--seed``.  Failures
exit nonzero with a machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import ckepe as ckepe_mod
from . import config as config_mod
from . import corpus as corpus_mod
from . import harness as harness_mod
from . import zeroshot as zeroshot_mod
from .errors import ConfigurationError, MerlError


def _load(args: argparse.Namespace) -> config_mod.ConfigDict:
    cfg = config_mod.load_config(args.config)
    cfg = config_mod.apply_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg.setdefault("experiment", {})["seed"] = str(args.seed)
    return cfg


def _base_dir(args: argparse.Namespace) -> Path:
    return Path(args.config).parent


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load(args)
    seed = int(cfg.get("experiment", {}).get("seed", 0))
    manifest, pairs, spec = harness_mod.build_experiment_corpus(cfg, _base_dir(args), seed)
    out_dir = _base_dir(args) / cfg.get("experiment", {}).get("out_dir", "merl_runs/synth")
    manifest_path = corpus_mod.save_corpus(manifest, pairs, out_dir)
    print(f"wrote {len(manifest.entries)} records to {manifest_path}")
    if spec is not None:
        print(f"classes: {', '.join(manifest.label_vocabulary)}")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    cfg = _load(args)
    experiment = harness_mod.Experiment(cfg, base_dir=_base_dir(args))
    experiment.prepare_corpus()
    experiment.pretrain_or_load()
    final = experiment.model
    print(f"checkpoint: {experiment.out_dir / 'checkpoint.npz'}")
    print(f"encoder hash: {final.encoder_state_hash()[:16]}")
    return 0


def _run_tasks(args: argparse.Namespace, tasks: str) -> int:
    cfg = _load(args)
    cfg.setdefault("experiment", {})["tasks"] = tasks
    experiment = harness_mod.Experiment(cfg, base_dir=_base_dir(args))
    results = experiment.run()
    for result in results:
        print(
            f"{result.task_id} [{result.mode}] ratio={result.training_ratio:g} "
            f"macro_auc={result.macro_auc:.4f} fingerprint={result.config_fingerprint[:12]}"
        )
    return 0


def cmd_zeroshot(args: argparse.Namespace) -> int:
    return _run_tasks(args, "zeroshot")


def cmd_probe(args: argparse.Namespace) -> int:
    return _run_tasks(args, "probe")


def cmd_transfer(args: argparse.Namespace) -> int:
    return _run_tasks(args, "transfer")


def cmd_ckepe(args: argparse.Namespace) -> int:
    cfg = _load(args)
    section = cfg.get("ckepe", {})
    if "conditions" not in section:
        raise ConfigurationError("[ckepe] needs conditions = name; name; ...")
    conditions = [c.strip() for c in section["conditions"].split(";") if c.strip()]
    base = _base_dir(args)

    kbs = []
    for key in ("web_kb", "local_kb"):
        path = section.get(key, "")
        if path:
            kind = "web_snomed" if key == "web_kb" else "local_scp"
            kbs.append(ckepe_mod.load_kb(base / path, kind))
    if not kbs:
        raise ConfigurationError("[ckepe] needs web_kb and/or local_kb paths")

    if section.get("llm_fixture", ""):
        client: ckepe_mod.LLMClient = ckepe_mod.FixtureLLMClient.from_file(
            base / section["llm_fixture"]
        )
    elif section.get("llm_endpoint", ""):
        client = ckepe_mod.HttpLLMClient(
            endpoint=section["llm_endpoint"], model=section.get("llm_model", "")
        )
    else:
        raise ConfigurationError("[ckepe] needs llm_fixture (offline) or llm_endpoint")

    style = section.get("style", "ckepe")
    prompts = ckepe_mod.build_prompt_set(conditions, client, kbs, style)
    out = base / section.get("out", "prompts.json")
    zeroshot_mod.save_prompt_file(prompts, out)
    for entry in prompts.entries:
        discarded = entry.provenance.get("discarded", [])
        print(f"{entry.class_name}: {entry.prompt_text!r} ({len(discarded)} discarded)")
    print(f"wrote {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _load(args)
    base = _base_dir(args)
    out_dir = base / cfg.get("experiment", {}).get("out_dir", ".")
    section = cfg.get("report", {})
    if "results" in section:
        results_path = base / section["results"]
    else:
        results_path = out_dir / "results.jsonl"
    if not results_path.exists():
        raise ConfigurationError(f"no results store at {results_path}")
    results = harness_mod.read_results(results_path)
    print(harness_mod.results_table(results))
    csv_out = cfg.get("report", {}).get("csv", "")
    if csv_out:
        harness_mod.write_results_csv(results, base / csv_out)
        print(f"wrote {base / csv_out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="merl",
        description="Multimodal ECG representation learning workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "synth": (cmd_synth, "generate a synthetic paired corpus on disk"),
        "pretrain": (cmd_pretrain, "run alignment pretraining"),
        "probe": (cmd_probe, "linear-probe a checkpoint"),
        "zeroshot": (cmd_zeroshot, "zero-shot evaluation with prompts"),
        "ckepe": (cmd_ckepe, "build knowledge-verified prompts"),
        "transfer": (cmd_transfer, "domain-transfer evaluation"),
        "report": (cmd_report, "print the results table"),
    }
    for name, (handler, help_text) in commands.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="INI config file")
        cmd.add_argument(
            "--set",
            action="append",
            metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable)",
        )
        cmd.add_argument("--seed", type=int, default=None, help="base seed override")
        cmd.set_defaults(handler=handler)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except MerlError as exc:
        print(json.dumps(exc.to_json()), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io_error", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
