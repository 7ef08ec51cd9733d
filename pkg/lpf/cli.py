# lpf/cli.py

"""
Command-line entry point.

    lpf verify {t1..t7,all,assumptions}   run verification experiments
    lpf world export                      sample entities to JSON lines
    lpf factor                            soft factors for exported entities
    lpf aggregate                         aggregate factors per entity
    lpf train                             train the attention aggregator

Exit status: 0 pass, 1 a verification failed, 2 usage or configuration error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from lpf.core.config import configure_logging, get_settings
from lpf.core.errors import ConfigError, LPFError
from lpf.harness.config import ExperimentConfig, load_config, parse_config
from lpf.harness.experiments import experiment_decoder, experiment_world
from lpf.harness.reports import FAIL_GLYPH, PASS_GLYPH, write_rows_csv
from lpf.harness.runner import EXPERIMENTS, run_all, run_experiment
from lpf.services.aggregators import (init_attention, learned_aggregate, load_attention,
                                      save_attention, spn_aggregate, uniform_aggregate)
from lpf.services.factorizer import factorize_entity, load_decoder, save_decoder
from lpf.services.metrics import ece
from lpf.services.trainer import TrainConfig, gradient_check, train
from lpf.services.world import entity_labels, export_entities, load_entities, make_agg_dataset, sample_entities

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


# ============= PARSER =============


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config")
    common.add_argument("--out", metavar="DIR", help="output directory (default ./lpf-out)")
    common.add_argument("--seed", type=int, help="root seed (falls back to LPF_SEED, then the config, then 42)")
    common.add_argument("--format", choices=["json", "csv", "both"], default="both", dest="fmt")
    common.add_argument("--jobs", type=int, help="max concurrent trial workers")
    common.add_argument("--log-level", help="logging level (default from LPF_LOG_LEVEL or INFO)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="lpf", description="Latent Posterior Factors")
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", parents=[common], help="run verification experiments")
    verify.add_argument("target", choices=[*[k for k in EXPERIMENTS if k != "assumptions"], "all", "assumptions"])

    world = sub.add_parser("world", help="synthetic world utilities")
    world_sub = world.add_subparsers(dest="world_command", required=True)
    export = world_sub.add_parser("export", parents=[common], help="sample entities to JSON lines")
    export.add_argument("--n", type=int, default=100, help="number of entities")
    export.add_argument("--K", type=int, default=5, help="evidence items per entity")

    factor = sub.add_parser("factor", parents=[common], help="soft factors for exported entities")
    factor.add_argument("--input", required=True, metavar="JSONL")
    factor.add_argument("--decoder", metavar="JSON", help="decoder parameters (default: world's Bayes decoder)")
    factor.add_argument("--M", type=int, default=16, help="Monte Carlo samples per item")

    aggregate = sub.add_parser("aggregate", parents=[common], help="aggregate evidence per entity")
    aggregate.add_argument("--input", required=True, metavar="JSONL")
    aggregate.add_argument("--method", choices=["spn", "uniform", "learned"], default="spn")
    aggregate.add_argument("--decoder", metavar="JSON")
    aggregate.add_argument("--aggregator", metavar="JSON", help="trained attention aggregator (method learned)")
    aggregate.add_argument("--M", type=int, default=16)

    trainer = sub.add_parser("train", parents=[common], help="train the attention aggregator")
    trainer.add_argument("--n-train", type=int, default=500)
    trainer.add_argument("--n-test", type=int, default=200)
    trainer.add_argument("--K", type=int, default=5)
    trainer.add_argument("--epochs", type=int, default=30)
    trainer.add_argument("--check", action="store_true", help="also run a gradient check")
    return parser


# ============= RESOLUTION =============


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then LPF_* settings, then command-line flags"""
    settings = get_settings()
    config = load_config(args.config)
    updates = {}
    seed = args.seed if args.seed is not None else settings.seed
    if seed is not None:
        updates["seed"] = seed
    if args.out is not None:
        updates["out_dir"] = args.out
    elif "out_dir" in settings.model_fields_set:
        updates["out_dir"] = settings.out_dir
    if not updates:
        return config
    return parse_config({**config.model_dump(), **updates}, source="command line")


def _jobs(args: argparse.Namespace) -> Optional[int]:
    return args.jobs if args.jobs is not None else get_settings().jobs


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ============= COMMANDS =============


def cmd_verify(args: argparse.Namespace, config: ExperimentConfig) -> int:
    jobs = _jobs(args)
    if args.target == "all":
        reports, ok = run_all(config, jobs, config.out_dir, args.fmt)
    else:
        reports = [run_experiment(args.target, config, jobs, config.out_dir, args.fmt)]
        ok = reports[0].passed
    for r in reports:
        glyph = PASS_GLYPH if r.passed else FAIL_GLYPH
        failed = f"  failed: {', '.join(r.failed_checks)}" if not r.passed else ""
        print(f"{glyph} {r.experiment:<12} {r.title}{failed}")
    print(f"{PASS_GLYPH if ok else FAIL_GLYPH} outputs in {config.out_dir}")
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_world_export(args: argparse.Namespace, config: ExperimentConfig) -> int:
    world = experiment_world(config, k_max=max(config.world.k_max, args.K))
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    count = export_entities(sample_entities(world, args.n, args.K, namespace="export"), out / "entities.jsonl")
    save_decoder(experiment_decoder(config, world), out / "decoder.json")
    print(f"{PASS_GLYPH} exported {count} entities to {out / 'entities.jsonl'}")
    return EXIT_PASS


def _load_input(path: str):
    entities = load_entities(path)
    if not entities:
        raise ConfigError(f"{path}: no entities")
    return entities


def _decoder_for(args: argparse.Namespace, config: ExperimentConfig, k: int):
    if args.decoder:
        return load_decoder(args.decoder)
    return experiment_decoder(config, experiment_world(config, k_max=max(config.world.k_max, k)))


def cmd_factor(args: argparse.Namespace, config: ExperimentConfig) -> int:
    entities = _load_input(args.input)
    decoder = _decoder_for(args, config, max(e.k for e in entities))
    rows = []
    for i, entity in enumerate(entities):
        for f in factorize_entity(decoder, entity, args.M, config.seed, ("cli-factor", i)):
            rows.append({"entity": i, "source_id": f.source_id, "weight": f.weight, "m_used": f.m_used, "probs": f.probs.tolist()})
    out = Path(config.out_dir)
    if args.fmt in ("json", "both"):
        _write_json(out / "factors.json", rows)
    if args.fmt in ("csv", "both"):
        out.mkdir(parents=True, exist_ok=True)
        write_rows_csv(rows, out / "factors.csv")
    print(f"{PASS_GLYPH} {len(rows)} factors for {len(entities)} entities")
    return EXIT_PASS


def cmd_aggregate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    entities = _load_input(args.input)
    if args.method == "learned":
        if not args.aggregator:
            raise ConfigError("--aggregator is required for method 'learned'")
        agg = load_attention(args.aggregator)
        results = [learned_aggregate(agg, e.evidence) for e in entities]
    else:
        decoder = _decoder_for(args, config, max(e.k for e in entities))
        pool = spn_aggregate if args.method == "spn" else uniform_aggregate
        results = [pool(factorize_entity(decoder, e, args.M, config.seed, ("cli-factor", i))) for i, e in enumerate(entities)]

    rows = [
        {"entity": i, "label": e.label, "k_eff": r.k_eff, "probs": r.dist.probs.tolist()}
        for i, (e, r) in enumerate(zip(entities, results))
    ]
    table = ece(np.stack([r.dist.probs for r in results]), entity_labels(entities))
    out = Path(config.out_dir)
    if args.fmt in ("json", "both"):
        _write_json(out / f"aggregate_{args.method}.json", {"method": args.method, "ece": table.ece, "predictions": rows})
    if args.fmt in ("csv", "both"):
        out.mkdir(parents=True, exist_ok=True)
        write_rows_csv(rows, out / f"aggregate_{args.method}.csv")
        write_rows_csv(table.rows(), out / f"reliability_{args.method}.csv")
    print(f"{PASS_GLYPH} {args.method}: ECE {table.ece:.4f} over {len(entities)} entities")
    return EXIT_PASS


def cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> int:
    world = experiment_world(config, k_max=max(config.world.k_max, args.K))
    decoder = experiment_decoder(config, world)
    dataset = make_agg_dataset(world, args.n_train, args.n_test, args.K, stream_id="cli-train")
    arch = init_attention(decoder, seed=config.seed)
    agg, report = train(dataset, arch, TrainConfig(epochs=args.epochs, seed=config.seed))

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_attention(agg, out / "aggregator.json")
    payload = report.model_dump(mode="json")
    if args.check:
        payload["gradient_check_max_rel_error"] = gradient_check(agg, dataset.train[:20], n_coords=10, seed=config.seed)
    _write_json(out / "train_report.json", payload)
    print(
        f"{PASS_GLYPH} train {report.train_loss:.4f} / test {report.test_loss:.4f}, "
        f"accuracy {report.test_accuracy:.3f}, d_eff {report.d_eff}/{report.num_params}"
    )
    return EXIT_PASS


# ============= MAIN =============


def parse_and_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run the command and return its exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_PASS

    configure_logging(args.log_level or get_settings().log_level)
    try:
        config = resolve_config(args)
        if args.command == "verify":
            return cmd_verify(args, config)
        if args.command == "world":
            return cmd_world_export(args, config)
        if args.command == "factor":
            return cmd_factor(args, config)
        if args.command == "aggregate":
            return cmd_aggregate(args, config)
        return cmd_train(args, config)
    except ConfigError as e:
        print(f"{FAIL_GLYPH} {e}", file=sys.stderr)
        return EXIT_USAGE
    except (LPFError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"{FAIL_GLYPH} {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
