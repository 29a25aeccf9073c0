"""``recall-forge`` command line.

Exit codes: 0 success, 2 recall target unattainable, 3 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .calibration import CalibrationError
from .ranker import TrainingDegenerateError
from .synth import generate

EXIT_OK = 0
EXIT_UNATTAINABLE = 2
EXIT_INPUT = 3

log = logging.getLogger("recall_forge")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recall-forge", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="INI configuration file")
    common.add_argument("--seed", type=int, help="override the sampling seed")
    common.add_argument("--init-seed", type=int, help="override the neural init seed")
    common.add_argument("--mode", choices=[m.value for m in pl.CalibratorMode], action="append")
    common.add_argument("--target", type=float, action="append", help="recall target R*")
    common.add_argument("--workers", type=int, help="threads for filtering and inference")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset to the configured paths")
    sub.add_parser("filter", parents=[common], help="candidate pairs and scaled features")
    sub.add_parser("train", parents=[common], help="label the bootstrap sample and train the ranker")
    sub.add_parser("score", parents=[common], help="score every candidate")
    sub.add_parser("calibrate", parents=[common], help="choose the threshold")
    sub.add_parser("run", parents=[common], help="every stage plus verification")
    exp = sub.add_parser("experiment", parents=[common], help="repeat runs over neural-init seeds")
    exp.add_argument("--trials", type=int, default=10)
    rep = sub.add_parser("report", parents=[common], help="summarise a report or experiment JSON")
    rep.add_argument("--input", type=Path, help="JSON file (default: the output directory's experiment or report)")
    return p


def _config(args) -> pl.PipelineConfig:
    over = {"init_seed": args.init_seed, "workers": args.workers}
    if args.mode:
        over["mode"] = args.mode[0]
    if args.target:
        over["recall_target"] = args.target[0]
    return pl.PipelineConfig.from_ini(args.config, seed=args.seed, **over)


def _summary_lines(doc: dict) -> list[str]:
    if "modes" in doc:
        lines = [f"{doc['trials']} trials, init seeds {doc['init_seeds']}"]
        for mode, per_target in doc["modes"].items():
            for target, s in per_target.items():
                lines.append(
                    f"{mode:<12} R*={target:<5} recall {s['mean_recall']:.4f} +/- {s['sd_recall']:.4f}"
                    f"  |err| {s['mean_abs_error']:.4f}  review {s['mean_review_cost_fraction']:.4f}"
                )
        return lines
    return [
        f"mode {doc['config']['mode']}  R*={doc['config']['recall_target']}",
        f"candidates {doc['candidate_count']} ({doc['candidate_fraction']:.2e} of all pairs)",
        f"tau {doc['tau']:.6f}  attainable {doc['attainable']}",
        f"achieved recall {doc['achieved_recall']:.4f}  reviewed {doc['reviewed_count']}  overrun {doc['budget_overrun']}",
    ]


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        art = pl.Artifacts(cfg.output_dir)
        if args.command == "generate":
            data = generate(cfg.synth, cfg.predicate)
            data.write(cfg.source, cfg.target, cfg.ground_truth)
            print(f"wrote {len(data.sources)} sources, {len(data.targets)} targets, {len(data.ground_truth)} matches")
        elif args.command == "filter":
            csr = pl.filter_to_disk(cfg)
            print(f"{len(csr)} candidate pairs -> {art.candidates}")
        elif args.command == "train":
            model = pl.train_from_disk(cfg)
            print(f"trained {len(model.history)} epochs -> {art.model}")
        elif args.command == "score":
            scores = pl.score_from_disk(cfg)
            print(f"scored {scores.size} pairs -> {art.scores}")
        elif args.command == "calibrate":
            out = pl.calibrate_from_disk(cfg)
            print(f"tau {out.tau!r} (attainable {out.attainable}) -> {art.calibration}")
            return EXIT_OK if out.attainable else EXIT_UNATTAINABLE
        elif args.command == "run":
            report = pl.run_pipeline(cfg)
            print("\n".join(_summary_lines(report.to_dict())))
            return EXIT_OK if report.attainable else EXIT_UNATTAINABLE
        elif args.command == "experiment":
            summary = pl.run_experiment(cfg, args.trials, args.mode, args.target)
            art.ensure()
            pl.dump_json(art.experiment, summary)
            print("\n".join(_summary_lines(summary)))
            if any(s["unattainable_runs"] for t in summary["modes"].values() for s in t.values()):
                return EXIT_UNATTAINABLE
        elif args.command == "report":
            path = args.input or (art.experiment if art.experiment.exists() else art.report)
            try:
                doc = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise pl.InputError(f"cannot read report {path}: {exc}") from exc
            print("\n".join(_summary_lines(doc)))
        return EXIT_OK
    except (pl.InputError, TrainingDegenerateError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
