"""Benchmark manifests, execution, the centerpoint metric, and reports.

A manifest lists queries with their retrieval candidates (at most 10,
rank-ordered) and optional ground-truth labels. Scoring follows the
deployment-oriented metric: a query counts as correctly localized when the
predicted footprint contains its annotated centerpoint. Percentages are
reported against the "localizable" queries: those with at least one
positively labeled candidate.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .calibrate import write_outcomes_csv
from .engine import (
    ESTIMATION_FAILURE,
    LOCALIZED,
    CandidateTile,
    EngineConfig,
    LocalizationResult,
    QueryImage,
    localize,
)
from .errors import BackendError, DomainError, ManifestError
from .geo import Footprint, GeoPoint, TileGeom, footprint_contains
from .raster import NEIGHBOR_KEYS, load_image, resize_square

logger = logging.getLogger(__name__)

CORRECT = "Correct"
INCORRECT = "Incorrect"
NO_PREDICTION = "NoPrediction"

MODE_FIRST_ACCEPT = "first-accept"
MODE_EXHAUST_ALL = "exhaust-all"

# Table column scheme: subset label -> predicate over the metadata value.
FOCAL_BINS = (
    ("f<=200", lambda f: f <= 200),
    ("200<f<=400", lambda f: 200 < f <= 400),
    ("400<f<=800", lambda f: 400 < f <= 800),
    ("f>800", lambda f: f > 800),
)
TILT_BINS = (
    ("tilt<40", lambda t: t < 40),
    ("tilt>=40", lambda t: t >= 40),
)
CLOUD_BINS = (
    ("cloud<40", lambda c: c < 40),
    ("cloud>=40", lambda c: c >= 40),
)
SUBSET_DIMENSIONS = (
    ("focal_length_mm", FOCAL_BINS),
    ("tilt_deg", TILT_BINS),
    ("cloud_cover_pct", CLOUD_BINS),
)


@dataclass
class CandidateSpec:
    rank: int
    image_path: Path
    footprint: Footprint
    neighbors: dict[str, Path]
    is_positive: bool | None


@dataclass
class QuerySpec:
    id: str
    image_path: Path
    centerpoint: GeoPoint | None
    focal_length_mm: float | None
    tilt_deg: float | None
    cloud_cover_pct: float | None
    candidates: list[CandidateSpec]


@dataclass
class Manifest:
    path: Path
    queries: list[QuerySpec]


def _require(cond: bool, path, where: str, msg: str) -> None:
    if not cond:
        raise ManifestError(f"{path}: {where}: {msg}")


def load_manifest(path) -> Manifest:
    """Parse and validate a manifest JSON file; paths resolve at load."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read manifest: {exc}") from exc
    base = path.parent
    _require(isinstance(data, dict) and isinstance(data.get("queries"), list),
             path, "root", "expected an object with a 'queries' list")

    queries: list[QuerySpec] = []
    seen_ids: set[str] = set()
    for qi, q in enumerate(data["queries"]):
        where = f"queries[{qi}]"
        _require(isinstance(q, dict), path, where, "query entry must be an object")
        qid = q.get("id")
        _require(isinstance(qid, str) and qid != "", path, where, "missing field 'id'")
        _require(qid not in seen_ids, path, where, f"duplicate query id {qid!r}")
        seen_ids.add(qid)
        img = q.get("image_path")
        _require(isinstance(img, str), path, where, "missing field 'image_path'")
        img_path = base / img
        _require(img_path.exists(), path, where, f"image_path {img!r} does not resolve")

        cp = q.get("centerpoint")
        centerpoint = None
        if cp is not None:
            _require(isinstance(cp, dict) and "lat" in cp and "lon" in cp,
                     path, where, "field 'centerpoint' needs lat and lon")
            centerpoint = GeoPoint(float(cp["lat"]), float(cp["lon"]))

        cands_raw = q.get("candidates")
        _require(isinstance(cands_raw, list) and len(cands_raw) >= 1,
                 path, where, "field 'candidates' must be a non-empty list")
        _require(len(cands_raw) <= 10, path, where, "more than 10 candidates")

        cands: list[CandidateSpec] = []
        last_rank = 0
        for ci, c in enumerate(cands_raw):
            cwhere = f"{where}.candidates[{ci}]"
            _require(isinstance(c, dict), path, cwhere, "candidate must be an object")
            rank = c.get("rank")
            _require(isinstance(rank, int) and 1 <= rank <= 10,
                     path, cwhere, "field 'rank' must be an integer in [1,10]")
            _require(rank > last_rank, path, cwhere,
                     f"ranks must be unique and ascending (got {rank} after {last_rank})")
            last_rank = rank
            cimg = c.get("image_path")
            _require(isinstance(cimg, str), path, cwhere, "missing field 'image_path'")
            cimg_path = base / cimg
            _require(cimg_path.exists(), path, cwhere, f"image_path {cimg!r} does not resolve")
            fp_raw = c.get("footprint")
            _require(isinstance(fp_raw, list) and len(fp_raw) == 4,
                     path, cwhere, "field 'footprint' must list 4 [lat, lon] corners")
            try:
                corners = tuple(GeoPoint(float(lat), float(lon)) for lat, lon in fp_raw)
                footprint = Footprint(corners=corners)
            except (DomainError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}: {cwhere}: bad footprint: {exc}") from exc
            neighbors: dict[str, Path] = {}
            for key, rel in (c.get("neighbors") or {}).items():
                _require(key in NEIGHBOR_KEYS, path, cwhere, f"unknown neighbor key {key!r}")
                npath = base / rel
                _require(npath.exists(), path, cwhere, f"neighbor {key} path does not resolve")
                neighbors[key] = npath
            is_positive = c.get("is_positive")
            _require(is_positive is None or isinstance(is_positive, bool),
                     path, cwhere, "field 'is_positive' must be a boolean when present")
            cands.append(CandidateSpec(rank, cimg_path, footprint, neighbors, is_positive))

        queries.append(QuerySpec(
            id=qid,
            image_path=img_path,
            centerpoint=centerpoint,
            focal_length_mm=q.get("focal_length_mm"),
            tilt_deg=q.get("tilt_deg"),
            cloud_cover_pct=q.get("cloud_cover_pct"),
            candidates=cands,
        ))
    return Manifest(path=path, queries=queries)


def query_is_localizable(q: QuerySpec) -> bool | None:
    """True/False when every candidate is labeled, None otherwise."""
    labels = [c.is_positive for c in q.candidates]
    if any(lab is None for lab in labels):
        return None
    return any(labels)


def localizable_count(manifest: Manifest) -> int | None:
    """Number of queries with at least one positive candidate, or None when
    labels are incomplete."""
    flags = [query_is_localizable(q) for q in manifest.queries]
    if any(f is None for f in flags):
        return None
    return sum(1 for f in flags if f)


def score_query(result: LocalizationResult, centerpoint: GeoPoint) -> str:
    """Correct / Incorrect / NoPrediction against the annotated centerpoint."""
    if result.status != LOCALIZED or result.footprint is None:
        return NO_PREDICTION
    return CORRECT if footprint_contains(result.footprint, centerpoint) else INCORRECT


def _load_candidate(spec: CandidateSpec) -> CandidateTile:
    image = load_image(spec.image_path)
    side = image.shape[0]
    neighbors = {}
    for key, p in spec.neighbors.items():
        n = load_image(p)
        if n.shape != image.shape:
            n = resize_square(n, side)  # zoom levels are uniform in practice
        neighbors[key] = n
    geom = TileGeom(footprint=spec.footprint, width_px=image.shape[1], height_px=image.shape[0])
    return CandidateTile(image=image, geom=geom, rank=spec.rank, neighbors=neighbors)


@dataclass
class QueryRecord:
    query_id: str
    status: str
    score: str | None  # None when the query has no centerpoint
    localizable: bool | None
    accepted_rank: int | None
    inlier_count: int
    iterations_run: list[int]
    reject_reasons: list[str | None]
    candidate_times_s: list[float]
    wall_time_s: float
    focal_length_mm: float | None
    tilt_deg: float | None
    cloud_cover_pct: float | None
    footprint: list[list[float]] | None


@dataclass
class SubsetRow:
    label: str
    queries: int
    localizable: int | None
    correct: int
    percent: float | None


@dataclass
class BenchReport:
    matcher: str
    mode: str
    image_side: int
    max_keypoints: int
    seed: int
    threshold: int | None
    total_queries: int
    localized_count: int
    localizable_count: int | None
    percent_of_localizable: float | None
    subsets: dict[str, list[SubsetRow]]
    excluded: dict[str, int]
    mean_wall_time_s: float
    rows: list[QueryRecord] = field(default_factory=list)
    outcomes: list[tuple[str, int, int, bool]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "matcher": self.matcher,
            "mode": self.mode,
            "image_side": self.image_side,
            "max_keypoints": self.max_keypoints,
            "seed": self.seed,
            "threshold": self.threshold,
            "total_queries": self.total_queries,
            "localized_count": self.localized_count,
            "localizable_count": self.localizable_count,
            "percent_of_localizable": self.percent_of_localizable,
            "subsets": {
                dim: [
                    {
                        "label": r.label,
                        "queries": r.queries,
                        "localizable": r.localizable,
                        "correct": r.correct,
                        "percent": r.percent,
                    }
                    for r in rows
                ]
                for dim, rows in self.subsets.items()
            },
            "excluded": dict(self.excluded),
            "mean_wall_time_s": self.mean_wall_time_s,
            "queries": [
                {
                    "query_id": r.query_id,
                    "status": r.status,
                    "score": r.score,
                    "localizable": r.localizable,
                    "accepted_rank": r.accepted_rank,
                    "inlier_count": r.inlier_count,
                    "iterations_run": r.iterations_run,
                    "reject_reasons": r.reject_reasons,
                    "candidate_times_s": r.candidate_times_s,
                    "wall_time_s": r.wall_time_s,
                    "footprint": r.footprint,
                }
                for r in self.rows
            ],
        }


def _percent(correct: int, localizable: int | None) -> float | None:
    if localizable is None or localizable == 0:
        return None
    return round(100.0 * correct / localizable, 1)


def _run_one(qspec: QuerySpec, cfg: EngineConfig, exhaust: bool) -> tuple[QuerySpec, LocalizationResult]:
    image = load_image(qspec.image_path)
    query = QueryImage(
        image=image,
        id=qspec.id,
        focal_length_mm=qspec.focal_length_mm,
        tilt_deg=qspec.tilt_deg,
        cloud_cover_pct=qspec.cloud_cover_pct,
        centerpoint=qspec.centerpoint,
    )
    tiles = [_load_candidate(c) for c in qspec.candidates]
    try:
        result = localize(query, tiles, cfg, exhaust_all=exhaust)
    except BackendError as exc:
        logger.warning("query %s: matcher backend failed: %s", qspec.id, exc)
        result = LocalizationResult(
            query_id=qspec.id,
            status="NoCandidateAccepted",
            footprint=None,
            inlier_count=0,
            accepted_rank=None,
            iterations_run=[0 for _ in tiles],
            reject_reasons=[ESTIMATION_FAILURE for _ in tiles],
            wall_time_s=0.0,
            candidates=[],
        )
    return qspec, result


def run_benchmark(
    manifest: Manifest,
    cfg: EngineConfig,
    mode: str = MODE_FIRST_ACCEPT,
    workers: int = 1,
) -> BenchReport:
    if mode not in (MODE_FIRST_ACCEPT, MODE_EXHAUST_ALL):
        raise DomainError(f"unknown benchmark mode {mode!r}")
    exhaust = mode == MODE_EXHAUST_ALL

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda qs: _run_one(qs, cfg, exhaust), manifest.queries))
    else:
        results = [_run_one(qs, cfg, exhaust) for qs in manifest.queries]
    results.sort(key=lambda pair: [q.id for q in manifest.queries].index(pair[0].id))

    rows: list[QueryRecord] = []
    outcomes: list[tuple[str, int, int, bool]] = []
    for qspec, res in results:
        score = score_query(res, qspec.centerpoint) if qspec.centerpoint else None
        footprint = None
        if res.footprint is not None:
            footprint = [[c.lat, c.lon] for c in res.footprint.corners]
        rows.append(QueryRecord(
            query_id=qspec.id,
            status=res.status,
            score=score,
            localizable=query_is_localizable(qspec),
            accepted_rank=res.accepted_rank,
            inlier_count=res.inlier_count,
            iterations_run=res.iterations_run,
            reject_reasons=res.reject_reasons,
            candidate_times_s=[round(o.wall_time_s, 6) for o in res.candidates],
            wall_time_s=res.wall_time_s,
            focal_length_mm=qspec.focal_length_mm,
            tilt_deg=qspec.tilt_deg,
            cloud_cover_pct=qspec.cloud_cover_pct,
            footprint=footprint,
        ))
        by_rank = {c.rank: c.is_positive for c in qspec.candidates}
        for out in res.candidates:
            label = by_rank.get(out.rank)
            if out.accepted and label is not None:
                outcomes.append((qspec.id, out.rank, out.inlier_count, bool(label)))

    total = len(rows)
    correct = sum(1 for r in rows if r.score == CORRECT)
    loc_count = localizable_count(manifest)

    subsets: dict[str, list[SubsetRow]] = {}
    excluded: dict[str, int] = {}
    for dim, bins in SUBSET_DIMENSIONS:
        dim_rows: list[SubsetRow] = []
        defined = [r for r in rows if getattr(r, dim) is not None]
        excluded[dim] = total - len(defined)
        for label, pred in bins:
            members = [r for r in defined if pred(getattr(r, dim))]
            loc = None
            if all(m.localizable is not None for m in members):
                loc = sum(1 for m in members if m.localizable)
            ncorrect = sum(1 for m in members if m.score == CORRECT)
            dim_rows.append(SubsetRow(
                label=label,
                queries=len(members),
                localizable=loc,
                correct=ncorrect,
                percent=_percent(ncorrect, loc),
            ))
        subsets[dim] = dim_rows

    mean_time = sum(r.wall_time_s for r in rows) / total if total else 0.0
    return BenchReport(
        matcher=cfg.matcher,
        mode=mode,
        image_side=cfg.matcher_cfg.image_side,
        max_keypoints=cfg.matcher_cfg.max_keypoints,
        seed=cfg.ransac_cfg.rng_seed,
        threshold=cfg.inlier_threshold,
        total_queries=total,
        localized_count=correct,
        localizable_count=loc_count,
        percent_of_localizable=_percent(correct, loc_count),
        subsets=subsets,
        excluded=excluded,
        mean_wall_time_s=round(mean_time, 4),
        rows=rows,
        outcomes=outcomes,
    )


def save_outcomes(report: BenchReport, path) -> None:
    """Labeled (query, rank, inliers, is_positive) rows for calibration."""
    write_outcomes_csv(path, report.outcomes)


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def emit_report(report: BenchReport, format: str = "table") -> str:
    """Render a report. Column order mirrors the benchmark table scheme:
    All, focal bins, tilt bins, cloud bins, time, threshold."""
    columns = ["All"]
    values: list = [report.percent_of_localizable]
    counts = [f"({report.total_queries} / {_fmt(report.localizable_count)})"]
    for dim, _ in SUBSET_DIMENSIONS:
        for row in report.subsets[dim]:
            columns.append(row.label)
            values.append(row.percent)
            counts.append(f"({row.queries} / {_fmt(row.localizable)})")
    columns += ["Time (sec)", "T_inl"]
    values += [report.mean_wall_time_s, report.threshold]
    counts += ["", ""]

    if format == "json":
        return json.dumps(report.to_dict(), indent=2)
    if format == "csv":
        head = ",".join(columns)
        body = ",".join(_fmt(v) for v in values)
        return f"{head}\n{body}\n"
    if format == "table":
        widths = [max(len(c), len(_fmt(v)), len(n)) for c, v, n in zip(columns, values, counts)]
        lines = [
            "  ".join(c.ljust(w) for c, w in zip(columns, widths)),
            "  ".join(n.ljust(w) for n, w in zip(counts, widths)),
            "  ".join(_fmt(v).ljust(w) for v, w in zip(values, widths)),
        ]
        lines.append("")
        lines.append(
            f"localized {report.localized_count} of "
            f"{_fmt(report.localizable_count)} localizable "
            f"({report.total_queries} queries, matcher={report.matcher}, mode={report.mode})"
        )
        for dim, count in report.excluded.items():
            if count:
                lines.append(f"note: {count} queries lack {dim} and are excluded from that dimension")
        return "\n".join(lines) + "\n"
    raise DomainError(f"unknown report format {format!r}")
