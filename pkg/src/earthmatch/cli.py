"""Command-line entry point: localize, bench, calibrate, synth-gen.

Exit codes distinguish outcomes: 0 = confident localization (or command
success), 2 = no confident prediction (a meaningful result under the
precision-first contract), 1 = error. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bench as bench_mod
from . import calibrate as cal_mod
from .engine import (
    LOCALIZED,
    CandidateTile,
    EngineConfig,
    QueryImage,
    localize,
)
from .errors import CalibrationError, DomainError, ManifestError
from .features import KEYPOINT_BUDGETS, MatcherConfig
from .raster import load_image
from .robustfit import RansacConfig
from .synth import SynthSpec, write_manifest

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_PREDICTION = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # unknown flags fail fast with exit 1
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_ERROR)


def _engine_config(args) -> EngineConfig:
    return EngineConfig(
        matcher=args.matcher,
        matcher_cfg=MatcherConfig(
            max_keypoints=args.max_keypoints,
            image_side=args.image_side,
        ),
        ransac_cfg=RansacConfig(rng_seed=args.seed),
        inlier_threshold=args_threshold(args),
    )


def args_threshold(args) -> int | None:
    if not getattr(args, "threshold_file", None):
        return None
    decision, _ = cal_mod.load_threshold_json(args.threshold_file)
    return decision.t_inl  # disabled thresholds load as None


def _add_matcher_flags(p: _Parser) -> None:
    p.add_argument("--matcher", default="builtin",
                   help="matcher backend id: builtin, bridge, or bridge:<cmd>")
    p.add_argument("--image-side", type=int, default=768,
                   help="canonical square side applied to query and candidates")
    p.add_argument("--max-keypoints", type=int, default=2048,
                   help=f"keypoint budget (benchmark grid: {KEYPOINT_BUDGETS})")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed")
    p.add_argument("--threshold-file", default=None,
                   help="JSON produced by 'calibrate'; enables inlier-count gating")


def _result_json(result, args) -> dict:
    footprint = None
    if result.footprint is not None:
        footprint = [[c.lat, c.lon] for c in result.footprint.corners]
    return {
        "query_id": result.query_id,
        "status": result.status,
        "footprint": footprint,
        "inlier_count": result.inlier_count,
        "accepted_rank": result.accepted_rank,
        "iterations_run": result.iterations_run,
        "reject_reasons": result.reject_reasons,
        "wall_time_s": round(result.wall_time_s, 4),
        "config": {
            "matcher": args.matcher,
            "image_side": args.image_side,
            "max_keypoints": args.max_keypoints,
            "seed": args.seed,
        },
    }


def _load_candidates_for_localize(manifest_path: Path) -> list[bench_mod.CandidateSpec]:
    data = json.loads(manifest_path.read_text())
    if isinstance(data, dict) and "queries" in data:
        manifest = bench_mod.load_manifest(manifest_path)
        if not manifest.queries:
            raise ManifestError(f"{manifest_path}: no queries in manifest")
        return manifest.queries[0].candidates
    if isinstance(data, dict) and "candidates" in data:
        # bare candidate list: wrap into a single-query manifest for validation
        wrapped = {"queries": [{
            "id": "query",
            "image_path": data["candidates"][0].get("image_path", ""),
            "candidates": data["candidates"],
        }]}
        tmp = manifest_path.parent / ".localize-manifest.json"
        tmp.write_text(json.dumps(wrapped))
        try:
            manifest = bench_mod.load_manifest(tmp)
        finally:
            tmp.unlink(missing_ok=True)
        return manifest.queries[0].candidates
    raise ManifestError(f"{manifest_path}: expected 'queries' or 'candidates'")


def cmd_localize(args) -> int:
    query_img = load_image(args.query)
    specs = _load_candidates_for_localize(Path(args.candidates))
    tiles: list[CandidateTile] = [bench_mod._load_candidate(c) for c in specs]
    query = QueryImage(image=query_img, id=Path(args.query).stem)
    cfg = _engine_config(args)
    result = localize(query, tiles, cfg)
    print(json.dumps(_result_json(result, args), indent=2))
    return EXIT_OK if result.status == LOCALIZED else EXIT_NO_PREDICTION


def cmd_bench(args) -> int:
    manifest = bench_mod.load_manifest(args.manifest)
    cfg = _engine_config(args)
    report = bench_mod.run_benchmark(manifest, cfg, mode=args.mode, workers=args.workers)
    rendered = bench_mod.emit_report(report, format=args.format)
    if args.out:
        Path(args.out).write_text(rendered)
        print(bench_mod.emit_report(report, format="table"))
    else:
        print(rendered)
    if args.outcomes_csv:
        bench_mod.save_outcomes(report, args.outcomes_csv)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    outcomes = cal_mod.read_outcomes_csv(args.outcomes)
    decision = cal_mod.calibrate_from_run(outcomes)
    config = {
        "image_side": args.image_side,
        "max_keypoints": args.max_keypoints,
    }
    payload = {"matcher": args.matcher, "config": config}
    if decision.t_inl is not None:
        payload["t_inl"] = decision.t_inl
    else:
        payload["disabled_reason"] = decision.disabled_reason
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_synth_gen(args) -> int:
    spec = SynthSpec(base_side=args.base_side, seed=args.seed)
    path = write_manifest(
        args.out,
        n_positives=args.n,
        spec=spec,
        n_negatives=args.negatives,
        distractors=args.distractors,
    )
    print(str(path))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="earthmatch",
                     description="Footprint localization by iterative coregistration")
    parser.add_argument("--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("localize", help="localize one query against a candidate manifest")
    p.add_argument("query", help="query image path")
    p.add_argument("candidates", help="manifest JSON with candidates")
    _add_matcher_flags(p)
    p.set_defaults(fn=cmd_localize)

    p = sub.add_parser("bench", help="run a benchmark manifest end to end")
    p.add_argument("manifest", help="benchmark manifest JSON")
    _add_matcher_flags(p)
    p.add_argument("--mode", choices=[bench_mod.MODE_FIRST_ACCEPT, bench_mod.MODE_EXHAUST_ALL],
                   default=bench_mod.MODE_FIRST_ACCEPT)
    p.add_argument("--format", choices=["table", "json", "csv"], default="table")
    p.add_argument("--workers", type=int, default=1, help="parallel queries")
    p.add_argument("--out", default=None, help="write the rendered report here")
    p.add_argument("--outcomes-csv", default=None,
                   help="write labeled per-candidate outcomes (calibration input)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("calibrate", help="derive the inlier threshold from labeled outcomes")
    p.add_argument("outcomes", help="labeled outcomes CSV from a bench run")
    p.add_argument("--matcher", default="builtin")
    p.add_argument("--image-side", type=int, default=768)
    p.add_argument("--max-keypoints", type=int, default=2048)
    p.add_argument("--out", default=None, help="write threshold JSON here")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("synth-gen", help="generate a synthetic benchmark manifest")
    p.add_argument("--n", type=int, default=10, help="number of positive queries")
    p.add_argument("--negatives", type=int, default=0, help="zero-overlap queries")
    p.add_argument("--distractors", type=int, default=0,
                   help="disjoint candidates ranked ahead of each true one")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-side", type=int, default=256)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_synth_gen)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ManifestError, CalibrationError, DomainError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
