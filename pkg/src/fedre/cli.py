"""Command-line front end.

    fedre gen-data --out data.bin [--n-samples N ...]
    fedre train    [--config exp.cfg] [--epsilon 10 --clients 4 ...]
    fedre attack   --model model.bin --data data.bin [--gradients g.bin]

``--data`` is the ordinary ``data`` config key: train draws its pool from
it, attack takes the victim sample from it.
    fedre report   RUN_DIR [RUN_DIR ...] --out REPORT_DIR

Every configuration key is also a kebab-case flag; flags override the
config file. Exit status: 0 success, 1 invalid input or configuration,
2 numeric failure at run time.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import attack, datagen, federation, nn, privacy
from .config import FIELDS, ExperimentConfig, parse_config, to_text
from .errors import FormatError, NumericError
from .federation import fmt

log = logging.getLogger("fedre")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


# ---------------------------------------------------------------- helpers


def _config(args) -> ExperimentConfig:
    overrides = {}
    for name in FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    return parse_config(args.config, overrides)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _config_record(cfg: ExperimentConfig) -> dict:
    rec = {}
    for name in FIELDS:
        if name == "output":
            continue
        v = getattr(cfg, name)
        rec[name] = list(v) if isinstance(v, tuple) else v
    return rec


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    samples = datagen.generate(federation.dataset_spec(cfg, cfg.n_samples), [cfg.seed, 1])
    out = Path(args.out) if args.out else _out_dir(cfg) / "data.bin"
    out.parent.mkdir(parents=True, exist_ok=True)
    datagen.save_dataset(samples, out)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)

    def progress(r):
        log.info("round %d loss %.4f iou %.4f", r.round, r.loss, r.iou)

    run = federation.run_training(cfg, progress=progress)
    (out / "config.txt").write_text(to_text(cfg))
    (out / "history.csv").write_text(federation.history_csv(run.history))
    _write_json(out / "history.json", federation.history_records(run.history))
    nn.save_model(run.model, out / "model.bin")
    datagen.save_dataset(run.test, out / "test.bin")
    last = run.history[-1] if run.history else None
    summary = {
        "kind": "train",
        "config": _config_record(cfg),
        "rounds_run": len(run.history),
        "final": None if last is None else {
            "loss": last.loss, "iou": last.iou, "precision": last.precision,
            "recall": last.recall, "f_score": last.f_score,
        },
    }
    _write_json(out / "summary.json", summary)
    print(f"trained {len(run.history)} rounds; outputs in {out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    model = nn.load_model(args.model)
    if not cfg.data:
        raise ValueError("attack needs a dataset: pass --data or set data in the config")
    samples = datagen.load_dataset(cfg.data)
    if not 0 <= cfg.attack_index < len(samples):
        raise ValueError(f"attack index {cfg.attack_index} outside the {len(samples)}-sample file")
    sample = samples[cfg.attack_index]
    if not sample.psi_regions:
        raise ValueError(f"sample {cfg.attack_index} has no privacy-sensitive regions to score")
    if args.gradients:
        target = nn.load_gradients(args.gradients)
    else:
        # simulate the victim's upload with the configured privacy settings
        spec = federation.privacy_spec(cfg)
        update = attack.victim_update(
            model, sample, spec, privacy.noise_stream(cfg.seed, 0, cfg.attack_index),
            allocation="uniform" if cfg.uniform_psi else cfg.allocation,
            psi_samples=cfg.psi_samples, fd_step=cfg.fd_step,
        )
        target = update.gradients
        nn.save_gradients(target, out / "target.bin")
    acfg = attack.AttackConfig(
        iterations=cfg.attack_iterations, step=cfg.attack_step,
        seed=cfg.attack_seed, method=cfg.attack_method, h=cfg.fd_step,
    )
    result = attack.invert_gradient(model, target, sample.tamper_mask, acfg, sample.image, sample.psi_regions)
    rec = datagen.Sample(result.reconstruction, sample.tamper_mask, sample.psi_regions, sample.format_id)
    datagen.save_dataset([rec], out / "reconstruction.bin")
    _write_json(out / "attack.json", {"kind": "attack", "config": _config_record(cfg), "result": result.summary()})
    (out / "attack.csv").write_text(
        "match_loss,mse,psnr,ssim\n"
        + ",".join(fmt(v) for v in (result.match_loss, result.mse, result.psnr, result.ssim)) + "\n"
    )
    print(f"attack done: region mse {result.mse:.6g}, psnr {result.psnr:.4g} dB, ssim {result.ssim:.4g}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import TABLES, build_report

    tables = tuple(t.strip() for t in args.tables.split(",")) if args.tables else TABLES
    written = build_report([Path(d) for d in args.runs], Path(args.out), tables)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    g = p.add_argument_group("configuration overrides")
    for name in FIELDS:
        g.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedre", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset file")
    _add_config_flags(p)
    p.add_argument("--out", help="dataset path (default OUTPUT/data.bin)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run federated training")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="gradient-inversion attack on one sample")
    _add_config_flags(p)
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--gradients", help="uploaded gradient file; simulated from the sample when omitted")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="summarise a sweep of run directories")
    p.add_argument("runs", nargs="+", help="run directories (searched recursively)")
    p.add_argument("--out", required=True, help="directory for the comparison CSVs")
    p.add_argument("--tables", help="comma list from utility, defense, pda-gain, clip, psi (default: the first four, where data exists)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FormatError, FileNotFoundError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
