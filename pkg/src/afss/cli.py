"""``afss`` command line: synthesize, train, evaluate, score, validate.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from contextlib import contextmanager
from pathlib import Path

from filelock import FileLock, Timeout

from . import config as config_mod
from .config import ConfigError, ExperimentConfig, load_config
from .manifest import ManifestError, provenance_counts, read_manifest, validate_manifest, write_manifest
from .metrics import MetricError, ScoringError, average_summaries, write_scores
from .synthesis import generate_corpus
from .training import TrainConfig, build_model, load_checkpoint, model_from_checkpoint, train

log = logging.getLogger("afss")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
SNAPSHOT = "config.snapshot"
OVERRIDE = "override_training_"


class ValidationError(ValueError):
    pass


class RunDirError(RuntimeError):
    pass


@contextmanager
def locked(run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(run_dir / ".lock"), timeout=0)
    try:
        with lock:
            yield
    except Timeout as exc:
        raise RunDirError(f"{run_dir} is in use by another process") from exc


def ensure_snapshot(config: ExperimentConfig, run_dir: Path, force: bool = False) -> None:
    """Write the resolved config to the run dir, refusing to clobber a different one."""
    path = run_dir / SNAPSHOT
    text = config_mod.dumps(config)
    if path.exists() and path.read_text(encoding="utf-8") != text and not force:
        raise RunDirError(f"{path} holds a different config; use --force to overwrite")
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands

def cmd_synthesize(config: ExperimentConfig, real_manifest, run_dir, force: bool = False) -> dict[str, Path]:
    """Generate pseudo-fakes for every real record; write fake and merged manifests."""
    run_dir = Path(run_dir)
    issues = validate_manifest(real_manifest)
    reals = [] if issues else read_manifest(real_manifest)
    spoofed = [r.utterance_id for r in reals if r.is_fake]
    if issues or spoofed:
        lines = [str(i) for i in issues] + [f"{u}: labelled spoof; synthesis takes real audio only"
                                            for u in spoofed]
        raise ValidationError("invalid real manifest:\n  " + "\n  ".join(lines))

    with locked(run_dir):
        ensure_snapshot(config, run_dir, force)
        syn = config.synthesis
        corpus = generate_corpus(
            reals, run_dir / "audio", mode=syn.mode, branch_ratio=syn.branch_ratio,
            vc=syn.vc.build(), vocoders=[v.build() for v in syn.vocoders],
            preset=config.transforms.preset(), seed=config.seed,
            kind_pool=config.transforms.kinds, workers=syn.workers,
        )
        manifests = run_dir / "manifests"
        paths = {"fake": manifests / "fake.tsv", "train": manifests / "train.tsv"}
        write_manifest(corpus.records, paths["fake"])
        write_manifest(list(reals) + corpus.records, paths["train"])
    counts = provenance_counts(list(reals) + corpus.records)
    print(" ".join(f"{k}={v}" for k, v in counts.items()) + f" skipped={len(corpus.skipped)}")
    return paths


def cmd_train(config: ExperimentConfig, train_manifest, dev_manifest, run_dir, force: bool = False):
    """Train (or resume) in ``run_dir``; returns (best checkpoint state, history)."""
    run_dir = Path(run_dir)
    train_records = read_manifest(train_manifest)
    dev_records = read_manifest(dev_manifest)
    cfg = dataclasses.replace(config.training, seed=config.seed)
    with locked(run_dir):
        resume = (run_dir / "checkpoints" / "last.pt").exists() and not force
        ensure_snapshot(config, run_dir, force)
        model = build_model(config.detector.front_end_config(), config.seed)
        model.front_end.trainable = not config.detector.freeze_front_end
        return train(model, train_records, dev_records, cfg, run_dir=run_dir, resume=resume,
                     config_snapshot=config_mod.to_dict(config))


def _load_model(checkpoint, config: ExperimentConfig | None):
    state = load_checkpoint(checkpoint)
    if config is not None:
        expected = config.detector.front_end_config()
        saved = state["front_end"]
        if saved.get("kind") != expected["kind"]:
            raise ConfigError(f"checkpoint front-end {saved.get('kind')!r} does not match "
                              f"config front-end {expected['kind']!r}")
    return model_from_checkpoint(state)


def cmd_score(checkpoint, manifest, out, config: ExperimentConfig | None = None):
    model = _load_model(checkpoint, config)
    return write_scores(model, read_manifest(manifest), out)


def cmd_evaluate(checkpoint, manifests, out_dir, config: ExperimentConfig | None = None) -> dict:
    """Score several datasets; writes per-dataset files plus ``summary.json`` with an average row."""
    out_dir = Path(out_dir)
    model = _load_model(checkpoint, config)
    summaries, failures = {}, []
    for manifest in manifests:
        name = Path(manifest).stem
        path = out_dir / f"{name}.txt"
        try:
            write_scores(model, read_manifest(manifest), path)
        except ScoringError as exc:
            failures.extend(exc.failures)
        summaries[name] = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    result = {"datasets": summaries, "average": average_summaries(summaries)}
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if failures:
        raise ScoringError(failures, None)
    return result


# ---------------------------------------------------------------------------
# argparse

def _add_common(p: argparse.ArgumentParser, run_dir: bool = True):
    p.add_argument("--config", help=f"TOML config (default: ${config_mod.CONFIG_ENV} or built-in defaults)")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    if run_dir:
        p.add_argument("--run-dir", help="run directory (overrides paths.run_dir)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="generate pseudo-fakes from a real-only manifest")
    _add_common(p)
    p.add_argument("manifest", nargs="?", help="real manifest (default: paths.real_manifest)")
    p.add_argument("--force", action="store_true", help="overwrite a differing config snapshot")

    p = sub.add_parser("train", help="train the detector")
    _add_common(p)
    p.add_argument("--train-manifest", help="default: <run-dir>/manifests/train.tsv")
    p.add_argument("--dev-manifest", help="default: paths.dev_manifest")
    p.add_argument("--force", action="store_true", help="start over even if the run dir has state")
    for name, tp in typing.get_type_hints(TrainConfig).items():
        if name != "seed":
            p.add_argument(f"--{name.replace('_', '-')}", type=tp, dest=f"{OVERRIDE}{name}",
                           help=f"override training.{name}")

    p = sub.add_parser("evaluate", help="score one or more datasets and summarise")
    _add_common(p, run_dir=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("manifests", nargs="+")

    p = sub.add_parser("score", help="write a score file for one manifest")
    _add_common(p, run_dir=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="score file path")
    p.add_argument("manifest")

    p = sub.add_parser("validate", help="check a manifest")
    p.add_argument("manifest")
    p.add_argument("--no-audio", action="store_true", help="skip audio existence and rate checks")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "run_dir", None):
        config.paths.run_dir = args.run_dir
    if args.command == "train":
        overrides = {k[len(OVERRIDE):]: v for k, v in vars(args).items()
                     if k.startswith(OVERRIDE) and v is not None}
        config.training = dataclasses.replace(config.training, **overrides)
    return config.validate()


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            issues = validate_manifest(args.manifest, check_audio=not args.no_audio)
            for issue in issues:
                print(issue)
            return EXIT_VALIDATION if issues else EXIT_OK

        config = _resolve_config(args)
        run_dir = Path(config.paths.run_dir)
        if args.command == "synthesize":
            manifest = args.manifest or config.paths.real_manifest
            if not manifest:
                raise ValidationError("no real manifest given")
            cmd_synthesize(config, manifest, run_dir, args.force)
        elif args.command == "train":
            train_manifest = args.train_manifest or run_dir / "manifests" / "train.tsv"
            dev_manifest = args.dev_manifest or config.paths.dev_manifest
            if not dev_manifest:
                raise ValidationError("no dev manifest given")
            _, history = cmd_train(config, train_manifest, dev_manifest, run_dir, args.force)
            if history:
                last = history[-1]
                print(f"epochs={last['epoch']} dev_eer={last['dev_eer']:.4f}")
        elif args.command == "evaluate":
            result = cmd_evaluate(args.checkpoint, args.manifests, args.out,
                                  config if args.config else None)
            print(json.dumps(result["average"], sort_keys=True))
        elif args.command == "score":
            cmd_score(args.checkpoint, args.manifest, args.out, config if args.config else None)
    except (ValidationError, ManifestError, ConfigError) as exc:
        print(f"afss: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RunDirError, MetricError, ScoringError, OSError, RuntimeError, ValueError) as exc:
        print(f"afss: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
