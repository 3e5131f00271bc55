"""Command-line entry point: ``grilink <subcommand>``.

Stages communicate through files under the configured output directory, so
any stage can be rerun on its own:

    harvest/   All, Author and Dataset reports (CSV)
    records/   parsed records and DOI-award pairs (JSON Lines)
    probe/     per-pair classifications, thresholds, batch counts
    analysis/  summary tables, manifest.json, analytics.json
    charts/    SVG charts

The probe checkpoint (which carries fetch timestamps) lives at its own
configured path, outside the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .analytics import (
    CATEGORIES,
    Category,
    classify_awards,
    cumulative_matrix,
    doi_coverage,
    field_completeness,
    pct,
    reference_events,
    snapshot_distribution,
    summarize,
    temporal_doi_coverage,
)
from .config import PipelineConfig
from .errors import ConfigError, GrilinkError
from .harvest import FunderQuery, harvest, write_reports
from .identifiers import extract_nsf_award_ids, normalize_doi, validate_award_id
from .ingest import (
    AwardRecord,
    ChorusRecord,
    DoiAwardPair,
    ParRecord,
    Source,
    explode_pairs,
    load_header_aliases,
    parse_chorus_all_report,
    parse_nsf_awards,
    parse_par_export,
    read_jsonl,
    write_jsonl,
)
from .probe import (
    DEFAULT_THRESHOLDS,
    Classification,
    CheckpointStore,
    ProbeResult,
    ThresholdConfig,
    calibrate_thresholds,
    probe_batch,
    reclassify,
    summarize_probes,
    write_batch_report,
)
from .report import ChartKind, ChartSpec, emit_tables, render_chart
from .transport import ResponseCache, ServiceConfig, Transport, build_service

log = logging.getLogger("grilink")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2

CATEGORY_LABELS = {
    Category.CHORUS_ONLY: "CHORUS only",
    Category.BOTH: "Both",
    Category.PAR_ONLY: "PAR only",
    Category.NO_REFERENCE: "No reference",
}
CATEGORY_COLORS = {
    Category.CHORUS_ONLY: "chorus_only",
    Category.BOTH: "both",
    Category.PAR_ONLY: "par_only",
    Category.NO_REFERENCE: "none",
}
PROBE_COLUMNS = ["award_id", "doi", "response_length", "classification"]


# --------------------------------------------------------------------------
# logging


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": datetime.fromtimestamp(record.created, timezone.utc).isoformat(timespec="milliseconds"),
            "level": record.levelname.lower(),
            "logger": record.name,
        }
        payload = getattr(record, "payload", None)
        if payload:
            entry.update(payload)
        else:
            entry["message"] = record.getMessage()
        return json.dumps(entry, sort_keys=False, default=str)


def _setup_logging(verbose: bool) -> None:
    root = logging.getLogger("grilink")
    for handler in list(root.handlers):
        if getattr(handler, "_grilink", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler._grilink = True  # type: ignore[attr-defined]
    handler.setFormatter(JsonLineFormatter())
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def _stage_log(stage: str, started: float, **counts: Any) -> None:
    payload = {"stage": stage, "status": "done", "elapsed_s": round(time.monotonic() - started, 3), **counts}
    log.info("stage done", extra={"payload": payload})


# --------------------------------------------------------------------------
# layout helpers


class Layout:
    def __init__(self, out: Path):
        self.out = out
        self.harvest = out / "harvest"
        self.records = out / "records"
        self.probe = out / "probe"
        self.analysis = out / "analysis"
        self.charts = out / "charts"

    @property
    def all_report(self) -> Path:
        return self.harvest / "all_report.csv"


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _services(cfg: PipelineConfig, inner: Transport | None, names: Sequence[str], **overrides):
    cache = ResponseCache(cfg.cache_dir) if cfg.cache_dir else None
    out = {}
    for name in names:
        svc_cfg = cfg.services[name]
        if overrides.get(name):
            svc_cfg = ServiceConfig(**{**vars(svc_cfg), **overrides[name]})
        out[name] = build_service(name, svc_cfg, inner=inner, cache=cache if name != "par" else None)
    return out


# --------------------------------------------------------------------------
# stages


def stage_harvest(cfg: PipelineConfig, *, inner: Transport | None = None) -> dict[str, Any]:
    started = time.monotonic()
    layout = Layout(cfg.output_dir)
    services = _services(cfg, inner, ("crossref", "scholix", "datacite", "orcid"))
    result = harvest(FunderQuery(cfg.funder_identifier, cfg.funder_name), services, rows=cfg.harvest_rows)
    write_reports(result.reports, layout.harvest)
    all_rows, author_rows, dataset_rows = result.reports.row_counts
    counts = {
        "articles": all_rows,
        "author_rows": author_rows,
        "dataset_rows": dataset_rows,
        "warnings": len(result.reports.warnings),
        **{k: v for k, v in sorted(result.stats.items())},
    }
    for warning in result.reports.warnings:
        log.warning(warning)
    _stage_log("harvest", started, **counts)
    return counts


def stage_ingest(cfg: PipelineConfig) -> dict[str, Any]:
    started = time.monotonic()
    layout = Layout(cfg.output_dir)
    aliases = load_header_aliases(cfg.header_aliases)
    chorus_path = cfg.chorus or layout.all_report
    if not chorus_path.exists():
        raise ConfigError(f"no CHORUS report at {chorus_path}; set inputs.chorus or run the harvest stage")

    awards = parse_nsf_awards(cfg.awards, cfg.awards_format, aliases)
    par = parse_par_export(cfg.par, aliases)
    chorus = parse_chorus_all_report(chorus_path, aliases)
    par_pairs = explode_pairs(par, Source.PAR)
    chorus_pairs = explode_pairs(chorus, Source.CHORUS)

    write_jsonl(awards, layout.records / "awards.jsonl")
    write_jsonl(par, layout.records / "par_records.jsonl")
    write_jsonl(chorus, layout.records / "chorus_records.jsonl")
    write_jsonl(par_pairs, layout.records / "par_pairs.jsonl")
    write_jsonl(chorus_pairs, layout.records / "chorus_pairs.jsonl")
    stats = {
        "awards": awards.stats.as_dict(),
        "par": par.stats.as_dict(),
        "chorus": chorus.stats.as_dict(),
        "par_pairs": dict(sorted(par_pairs.stats.items())),
        "chorus_pairs": dict(sorted(chorus_pairs.stats.items())),
    }
    _write_json(layout.records / "ingest_stats.json", stats)
    counts = {
        "awards": len(awards),
        "awards_skipped": awards.stats.rows_skipped,
        "par_records": len(par),
        "par_flagged": len(par.stats.flagged),
        "chorus_records": len(chorus),
        "chorus_skipped": chorus.stats.rows_skipped,
        "par_pairs": len(par_pairs),
        "chorus_pairs": len(chorus_pairs),
    }
    _stage_log("ingest", started, **counts)
    return counts


def _read_pairs_file(path: Path) -> list[tuple[str, str]]:
    """Pairs from a CSV/TSV with award_id and doi columns (header required)."""
    lines = path.read_text(encoding="utf-8-sig").splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty pairs file")
    dialect = "excel-tab" if "\t" in lines[0] else "excel"
    reader = csv.DictReader(lines, dialect=dialect)
    if not reader.fieldnames or not {"award_id", "doi"} <= set(reader.fieldnames):
        raise ConfigError(f"{path}: need award_id and doi columns")
    pairs, skipped = [], 0
    for row in reader:
        award_id = (row["award_id"] or "").strip()
        outcome = normalize_doi(row["doi"])
        if outcome.ok and validate_award_id(award_id):
            pairs.append((award_id, outcome.result))
        else:
            skipped += 1
    if skipped:
        log.warning("skipped unusable pair rows", extra={"payload": {"file": str(path), "skipped": skipped}})
    return pairs


def _probe_targets(layout: Layout) -> list[tuple[str, str]]:
    universe = {a.award_id for a in read_jsonl(layout.records / "awards.jsonl", AwardRecord)}
    pairs = read_jsonl(layout.records / "chorus_pairs.jsonl", DoiAwardPair)
    return sorted({(p.award_id, p.doi) for p in pairs if p.award_id in universe})


def _resolve_thresholds(mode: str, thresholds_file: Path | None) -> ThresholdConfig | None:
    if mode == "paper":
        return DEFAULT_THRESHOLDS
    if mode == "calibrate":
        return None
    return ThresholdConfig.load(thresholds_file)


def run_probes(
    pairs: Sequence[tuple[str, str]],
    transport: Transport,
    *,
    base_url: str,
    mode: str,
    thresholds_file: Path | None,
    concurrency: int,
    checkpoint: Path | None,
    out_dir: Path | None,
) -> tuple[list[ProbeResult], ThresholdConfig]:
    fixed = _resolve_thresholds(mode, thresholds_file)
    store = CheckpointStore(checkpoint) if checkpoint else None
    results = probe_batch(pairs, transport, fixed or DEFAULT_THRESHOLDS, store,
                          base_url=base_url, concurrency=concurrency)
    thresholds = fixed
    if thresholds is None:
        lengths = [r.response_length for r in results if r.classification is not Classification.FAILED]
        thresholds = calibrate_thresholds(lengths)
        results = [reclassify(r, thresholds) for r in results]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "thresholds.json", {**thresholds.to_dict(), "mode": mode})
        write_batch_report(results, out_dir / "batch_report.csv")
        with open(out_dir / "probe_results.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(PROBE_COLUMNS)
            for r in results:
                writer.writerow([r.award_id, r.doi, r.response_length, r.classification.value])
    return results, thresholds


def _probe_summary_line(results: Sequence[ProbeResult]) -> str:
    counts = summarize_probes(results)
    return (
        f"linked={counts['Linked']} not_linked={counts['NotLinked']} "
        f"ambiguous={counts['Ambiguous']} failed={counts['Failed']}"
    )


def stage_probe(
    cfg: PipelineConfig,
    *,
    inner: Transport | None = None,
    base_url: str | None = None,
    rate: float | None = None,
    concurrency: int | None = None,
    thresholds: str | None = None,
) -> tuple[list[ProbeResult], ThresholdConfig]:
    started = time.monotonic()
    layout = Layout(cfg.output_dir)
    overrides: dict[str, Any] = {}
    if base_url:
        overrides["base_url"] = base_url
    if rate is not None:
        overrides["rate"] = rate
    concurrency = concurrency or cfg.probe.concurrency
    overrides["max_in_flight"] = max(concurrency, 1)
    par = _services(cfg, inner, ("par",), par=overrides)["par"]
    mode, thresholds_file = cfg.probe.mode, cfg.probe.thresholds_file
    if thresholds:
        mode, thresholds_file = _threshold_arg(thresholds)
    results, used = run_probes(
        _probe_targets(layout),
        par.transport,
        base_url=par.config.base_url,
        mode=mode,
        thresholds_file=thresholds_file,
        concurrency=concurrency,
        checkpoint=cfg.checkpoint,
        out_dir=layout.probe,
    )
    _stage_log("probe", started, pairs=len(results), thresholds=used.to_dict(), **summarize_probes(results))
    return results, used


def _threshold_arg(value: str) -> tuple[str, Path | None]:
    if value in ("paper", "calibrate"):
        return value, None
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"thresholds file not found: {path}")
    return "file", path


def _read_probe_results(path: Path) -> list[ProbeResult]:
    if not path.exists():
        return []
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    with open(path, encoding="utf-8", newline="") as fh:
        return [
            ProbeResult(row["award_id"], row["doi"], int(row["response_length"]),
                        Classification(row["classification"]), epoch)
            for row in csv.DictReader(fh)
        ]


def _pct_map(values: dict) -> dict[str, float]:
    return {CATEGORY_LABELS[c]: values[c] for c in CATEGORIES}


def stage_analyze(cfg: PipelineConfig) -> dict[str, Any]:
    started = time.monotonic()
    layout = Layout(cfg.output_dir)
    awards = read_jsonl(layout.records / "awards.jsonl", AwardRecord)
    par_records = read_jsonl(layout.records / "par_records.jsonl", ParRecord)
    chorus_records = read_jsonl(layout.records / "chorus_records.jsonl", ChorusRecord)
    par_pairs = read_jsonl(layout.records / "par_pairs.jsonl", DoiAwardPair)
    chorus_pairs = read_jsonl(layout.records / "chorus_pairs.jsonl", DoiAwardPair)
    probes = _read_probe_results(layout.probe / "probe_results.csv")

    effective = {a.award_id: a.effective_year for a in awards}
    universe_chorus = [p for p in chorus_pairs if p.award_id in effective]

    classes = classify_awards(awards, par_pairs, chorus_pairs)
    summary = summarize(classes)
    coverage = doi_coverage(universe_chorus, probes)
    temporal = temporal_doi_coverage(universe_chorus, effective, probes, cfg.periods)
    matrix = cumulative_matrix(reference_events(awards, par_pairs, chorus_pairs), last_year=cfg.last_year)
    par_complete = field_completeness(par_records, lambda r: r.award_ids)
    chorus_complete = field_completeness(chorus_records, lambda r: r.extracted_award_ids)

    snapshot = {}
    if cfg.observation_year is not None:
        snapshot = snapshot_distribution(matrix, cfg.observation_year)

    tables = {
        "coverage_summary": (list(summary.row()), [summary.row()]),
        "award_classes": (
            ["award_id", "category", "first_reference_year_chorus", "first_reference_year_par"],
            [
                {
                    "award_id": c.award_id,
                    "category": c.category.value,
                    "first_reference_year_chorus": c.first_reference_year_chorus or "",
                    "first_reference_year_par": c.first_reference_year_par or "",
                }
                for c in classes
            ],
        ),
        "doi_coverage": (list(coverage.row()), [coverage.row()]),
        "doi_coverage_by_year": (
            ["effective_year", "found_in_par", "chorus_only", "untested", "total", "pct_found_in_par",
             "pct_chorus_only", "pct_untested"],
            [y.row() for y in temporal.years],
        ),
        "doi_coverage_periods": (
            ["start_year", "end_year", "years", "mean_pct_found_in_par", "pooled_pct_found_in_par"],
            [p.row() for p in temporal.periods],
        ),
        "cumulative_matrix": (
            ["effective_year", "years_after", "awards", "chorus_only", "both", "par_only", "no_reference",
             "pct_chorus_only", "pct_both", "pct_par_only", "pct_no_reference"],
            matrix.rows(),
        ),
        "field_completeness": (
            ["source", "field", "present", "total", "percentage"],
            [
                {"source": "PAR", "field": "award_ids", "present": par_complete.present,
                 "total": par_complete.total, "percentage": par_complete.percentage},
                {"source": "CHORUS", "field": "award_ids", "present": chorus_complete.present,
                 "total": chorus_complete.total, "percentage": chorus_complete.percentage},
            ],
        ),
        "probe_summary": (
            ["classification", "count"],
            [{"classification": k, "count": v} for k, v in summarize_probes(probes).items()],
        ),
    }
    if snapshot:
        tables["snapshot"] = (
            ["effective_year", "observation_year"] + [f"pct_{c.name.lower()}" for c in CATEGORIES],
            [
                {"effective_year": e, "observation_year": cfg.observation_year,
                 **{f"pct_{c.name.lower()}": f"{v[c]:.1f}" for c in CATEGORIES}}
                for e, v in sorted(snapshot.items())
            ],
        )
    manifest = emit_tables(tables, layout.analysis)

    analytics = {
        "coverage_summary": {
            "total_awards": summary.total_awards,
            "counts": {c.value: summary.counts[c] for c in CATEGORIES},
            "percentages": {c.value: summary.exact_percentage(c) for c in CATEGORIES},
            "par_referenced": summary.par_referenced,
            "chorus_referenced": summary.chorus_referenced,
            "ignored_pairs": dict(sorted(classes.stats.items())),
        },
        "doi_coverage": coverage.row(),
        "doi_coverage_by_year": [
            {
                "effective_year": y.effective_year,
                "found_in_par": y.found_in_par,
                "chorus_only": y.chorus_only,
                "untested": y.untested,
            }
            for y in temporal.years
        ],
        "doi_coverage_periods": [p.row() for p in temporal.periods],
        "cumulative": {
            "metadata": matrix.metadata,
            "cohorts": {
                str(e): [
                    {c.value: matrix.percentages(e, k)[c] for c in CATEGORIES} for k in range(matrix.offsets[e] + 1)
                ]
                for e in matrix.cohorts
            },
        },
        "snapshot": {
            "observation_year": cfg.observation_year,
            "cohorts": {str(e): {c.value: v[c] for c in CATEGORIES} for e, v in sorted(snapshot.items())},
        },
        "field_completeness": {
            "par": {"present": par_complete.present, "total": par_complete.total,
                    "percentage": par_complete.percentage},
            "chorus": {"present": chorus_complete.present, "total": chorus_complete.total,
                       "percentage": chorus_complete.percentage},
        },
        "probe_summary": summarize_probes(probes),
    }
    _write_json(layout.analysis / "analytics.json", analytics)
    counts = {
        "awards": summary.total_awards,
        **{c.value: summary.counts[c] for c in CATEGORIES},
        "found_in_par": coverage.found_in_par,
        "chorus_only": coverage.chorus_only,
        "untested": coverage.untested,
        "tables": len(manifest["files"]),
    }
    _stage_log("analyze", started, **counts)
    return counts


def stage_render(cfg: PipelineConfig) -> dict[str, Any]:
    started = time.monotonic()
    layout = Layout(cfg.output_dir)
    analytics_path = layout.analysis / "analytics.json"
    if not analytics_path.exists():
        raise ConfigError(f"{analytics_path} not found; run the analyze stage first")
    data = json.loads(analytics_path.read_text(encoding="utf-8"))
    series = tuple(CATEGORY_LABELS[c] for c in CATEGORIES)
    colors = tuple(CATEGORY_COLORS[c] for c in CATEGORIES)

    def labelled(pcts: dict[str, float]) -> dict[str, float]:
        return {CATEGORY_LABELS[Category(k)]: v for k, v in pcts.items()}

    charts = []
    pie = ChartSpec(ChartKind.PIE, "Distribution of references to award numbers", series, colors,
                    data_ref="analysis/coverage_summary.csv")
    charts.append(render_chart(pie, labelled(data["coverage_summary"]["percentages"]),
                               layout.charts / "award_references.svg"))

    years = {}
    for y in data["doi_coverage_by_year"]:
        total = y["found_in_par"] + y["chorus_only"] + y["untested"]
        years[str(y["effective_year"])] = {
            "In CHORUS and PAR": pct(y["found_in_par"], total),
            "CHORUS only": pct(y["chorus_only"], total),
            "Not tested": pct(y["untested"], total),
        }
    if years:
        spec = ChartSpec(ChartKind.STACKED_BAR, "Percentage of DOIs per award effective year",
                         ("In CHORUS and PAR", "CHORUS only", "Not tested"), ("both", "chorus_only", "none"),
                         data_ref="analysis/doi_coverage_by_year.csv", x_label="Award effective year",
                         y_label="Percent of DOIs")
        charts.append(render_chart(spec, years, layout.charts / "doi_coverage_by_year.svg"))

    for cohort, cells in sorted(data["cumulative"]["cohorts"].items()):
        bars = {str(k): labelled(cell) for k, cell in enumerate(cells)}
        spec = ChartSpec(ChartKind.STACKED_BAR, f"Cumulative references, awards effective {cohort}", series,
                         colors, data_ref="analysis/cumulative_matrix.csv", x_label="Years after effective date",
                         y_label="Percent of awards")
        charts.append(render_chart(spec, bars, layout.charts / f"cumulative_{cohort}.svg"))

    if data["snapshot"]["cohorts"]:
        obs = data["snapshot"]["observation_year"]
        bars = {e: labelled(v) for e, v in sorted(data["snapshot"]["cohorts"].items())}
        spec = ChartSpec(ChartKind.STACKED_BAR, f"Reference status in {obs} by award effective year", series,
                         colors, data_ref="analysis/snapshot.csv", x_label="Award effective year",
                         y_label="Percent of awards")
        charts.append(render_chart(spec, bars, layout.charts / f"snapshot_{obs}.svg"))

    lengths = [r.response_length for r in _read_probe_results(layout.probe / "probe_results.csv")
               if r.classification is not Classification.FAILED]
    if lengths:
        spec = ChartSpec(ChartKind.HISTOGRAM, "Probe response lengths (bytes)", ("responses",), ("series",),
                         data_ref="probe/probe_results.csv", x_label="Response length", y_label="Count", bins=60)
        charts.append(render_chart(spec, lengths, layout.charts / "probe_lengths.svg"))

    _stage_log("render", started, charts=len(charts))
    return {"charts": len(charts)}


# --------------------------------------------------------------------------
# plan


def plan(cfg: PipelineConfig, stages: Sequence[str]) -> list[str]:
    layout = Layout(cfg.output_dir)
    lines = [f"config: {cfg.source or '(inline)'}", f"output: {cfg.output_dir}"]
    for n, stage in enumerate(stages, 1):
        if stage == "harvest":
            bases = ", ".join(f"{s}={cfg.services[s].base_url}" for s in ("crossref", "scholix", "datacite", "orcid"))
            lines.append(f"{n}. harvest  funder {cfg.funder_identifier} via {bases} -> {layout.harvest}")
        elif stage == "ingest":
            chorus = cfg.chorus or layout.all_report
            lines.append(f"{n}. ingest   awards {cfg.awards} ({cfg.awards_format.value}), PAR {cfg.par}, "
                         f"CHORUS {chorus} -> {layout.records}")
        elif stage == "probe":
            lines.append(f"{n}. probe    {cfg.services['par'].base_url} thresholds={cfg.probe.mode} "
                         f"concurrency={cfg.probe.concurrency} rate={cfg.services['par'].rate} "
                         f"checkpoint={cfg.checkpoint} -> {layout.probe}")
        elif stage == "analyze":
            lines.append(f"{n}. analyze  periods={[list(p) for p in cfg.periods]} "
                         f"observation_year={cfg.observation_year} -> {layout.analysis}")
        elif stage == "render":
            lines.append(f"{n}. render   -> {layout.charts}")
    return lines


def stages_for_all(cfg: PipelineConfig) -> list[str]:
    stages = ["ingest", "probe", "analyze", "render"]
    return stages if cfg.chorus else ["harvest"] + stages


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grilink", description="Reconcile award records with publication metadata sources.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def with_config(p):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--dry-run", action="store_true", help="print the plan and exit")
        return p

    with_config(sub.add_parser("ingest", help="parse awards, PAR export and CHORUS report into records"))
    with_config(sub.add_parser("harvest", help="fetch the All/Author/Dataset reports from the registries"))
    with_config(sub.add_parser("analyze", help="compute coverage measures from records and probes"))
    with_config(sub.add_parser("render", help="draw SVG charts from the analysis"))
    with_config(sub.add_parser("all", help="run every stage in order"))

    p = sub.add_parser("probe", help="classify (award, DOI) pairs by PAR response length")
    p.add_argument("--config", help="pipeline config JSON (probes the CHORUS pairs from ingest)")
    p.add_argument("--pairs", type=Path, help="CSV/TSV with award_id and doi columns (instead of --config)")
    p.add_argument("--base-url", help="PAR base URL")
    p.add_argument("--rate", type=float, help="requests per second ceiling")
    p.add_argument("--concurrency", type=int, help="parallel probes")
    p.add_argument("--thresholds", default=None, help="paper, calibrate, or a thresholds JSON file")
    p.add_argument("--checkpoint", type=Path, help="checkpoint file (with --pairs)")
    p.add_argument("--out", type=Path, help="directory for probe outputs (with --pairs)")
    p.add_argument("--dry-run", action="store_true", help="print the plan and exit")

    p = sub.add_parser("normalize", help="repair DOIs, one per line: input<TAB>result<TAB>rules")
    p.add_argument("input", nargs="?", type=Path, help="file to read (default: stdin)")
    p = sub.add_parser("extract", help="extract seven-digit award IDs, one grant field per line")
    p.add_argument("input", nargs="?", type=Path, help="file to read (default: stdin)")

    p = sub.add_parser("serve-mock", help="serve a fixture world over HTTP until interrupted")
    p.add_argument("--world", default="reference_tables", help="builtin world name or JSON path")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--fail-every", type=int, default=None, help="answer every Nth request with 503")

    p = sub.add_parser("generate-world", help="write a seeded synthetic world, its input files and a config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--awards", type=int, default=1000)
    p.add_argument("--dois", type=int, default=3000)
    p.add_argument("--injection-rate", type=float, default=0.1)
    p.add_argument("--mix", help='category mix as JSON, e.g. {"ChorusOnly": 36, "ParOnly": 14, "Both": 6, '
                                 '"NoReference": 44}')
    p.add_argument("--base-url", default="http://127.0.0.1:8765", help="mock server URL for the config")
    p.add_argument("--out", type=Path, required=True)
    return parser


# --------------------------------------------------------------------------
# commands


def _lines(path: Path | None):
    if path is None:
        for line in sys.stdin:
            yield line.rstrip("\r\n")
    else:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                yield line.rstrip("\r\n")


def cmd_normalize(args) -> int:
    counts: Counter = Counter()
    out = sys.stdout
    for line in _lines(args.input):
        outcome = normalize_doi(line)
        counts[outcome.failure_class.value] += 1
        result = outcome.result if outcome.ok else outcome.failure_class.value
        out.write(f"{line}\t{result}\t{','.join(outcome.rules_applied)}\n")
    log.info("normalize done", extra={"payload": {"stage": "normalize", "status": "done", **counts}})
    return EXIT_OK


def cmd_extract(args) -> int:
    n = 0
    for line in _lines(args.input):
        sys.stdout.write(f"{line}\t{';'.join(sorted(extract_nsf_award_ids(line)))}\n")
        n += 1
    log.info("extract done", extra={"payload": {"stage": "extract", "status": "done", "lines": n}})
    return EXIT_OK


def cmd_probe(args, inner: Transport | None) -> int:
    if bool(args.config) == bool(args.pairs):
        raise _UsageError("probe needs exactly one of --config or --pairs")
    if args.config:
        cfg = PipelineConfig.load(args.config)
        if args.dry_run:
            print("\n".join(plan(cfg, ["probe"])))
            return EXIT_OK
        results, _ = stage_probe(cfg, inner=inner, base_url=args.base_url, rate=args.rate,
                                 concurrency=args.concurrency, thresholds=args.thresholds)
    else:
        if not args.base_url:
            raise _UsageError("--pairs needs --base-url")
        mode, thresholds_file = _threshold_arg(args.thresholds or "paper")
        concurrency = args.concurrency or 4
        if args.dry_run:
            print(f"probe {args.pairs} against {args.base_url} thresholds={mode} concurrency={concurrency}")
            return EXIT_OK
        started = time.monotonic()
        svc = ServiceConfig(args.base_url, {}, rate=args.rate, max_in_flight=concurrency, retries=1)
        transport = build_service("par", svc, inner=inner).transport
        results, used = run_probes(_read_pairs_file(args.pairs), transport, base_url=args.base_url, mode=mode,
                                   thresholds_file=thresholds_file, concurrency=concurrency,
                                   checkpoint=args.checkpoint, out_dir=args.out)
        _stage_log("probe", started, pairs=len(results), thresholds=used.to_dict(), **summarize_probes(results))
    print(_probe_summary_line(results))
    return EXIT_OK


def cmd_serve_mock(args) -> int:
    from .mockgri import FixtureWorld, serve
    from .mockgri.server import serve_until_signal

    path = Path(args.world)
    world = FixtureWorld.load(path) if path.suffix == ".json" or path.exists() else FixtureWorld.builtin(args.world)
    if args.fail_every is not None:
        world.fail_every = args.fail_every
    handle = serve(world, args.port)
    print(f"serving {args.world} at {handle.url}", flush=True)
    serve_until_signal(handle)
    return EXIT_OK


def mock_config(base_url: str, **extra: Any) -> dict[str, Any]:
    """A pipeline config dict whose services all point at one mock host."""
    base = base_url.rstrip("/")
    services = {
        name: {"base_url": f"{base}/{name}", "rate": None, "backoff": 0.0, "backoff_ceiling": 0.0}
        for name in ("crossref", "scholix", "datacite", "orcid", "par")
    }
    services["par"]["retries"] = 2
    config = {
        "inputs": {"awards": "inputs/awards.xml", "par": "inputs/par_export.csv"},
        "services": services,
        "probe": {"thresholds": "paper", "concurrency": 8},
        "output_dir": "out",
        "checkpoint": "checkpoint/probes.jsonl",
        "periods": [[2000, 2016], [2017, 2023]],
    }
    config.update(extra)
    return config


def cmd_generate_world(args) -> int:
    from .mockgri import generate_world

    mix = json.loads(args.mix) if args.mix else None
    world = generate_world(args.seed, n_awards=args.awards, n_dois=args.dois, mix=mix,
                           injection_rate=args.injection_rate)
    args.out.mkdir(parents=True, exist_ok=True)
    world.save(args.out / "world.json")
    world.write_inputs(args.out / "inputs")
    _write_json(args.out / "config.json", mock_config(args.base_url))
    print(f"wrote {args.out / 'world.json'}, inputs and config.json "
          f"({len(world.awards)} awards, {len(world.articles)} articles, {len(world.par_records)} PAR records)")
    return EXIT_OK


class _UsageError(Exception):
    pass


STAGES: dict[str, Callable[..., Any]] = {
    "harvest": stage_harvest,
    "ingest": stage_ingest,
    "probe": stage_probe,
    "analyze": stage_analyze,
    "render": stage_render,
}


def run(argv: Sequence[str] | None = None, *, inner: Transport | None = None) -> int:
    """Parse ``argv`` and run one subcommand. ``inner`` replaces the network transport (tests)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        if args.command == "normalize":
            return cmd_normalize(args)
        if args.command == "extract":
            return cmd_extract(args)
        if args.command == "probe":
            return cmd_probe(args, inner)
        if args.command == "serve-mock":
            return cmd_serve_mock(args)
        if args.command == "generate-world":
            return cmd_generate_world(args)

        cfg = PipelineConfig.load(args.config)
        stages = stages_for_all(cfg) if args.command == "all" else [args.command]
        if args.dry_run:
            print("\n".join(plan(cfg, stages)))
            return EXIT_OK
        for stage in stages:
            if stage in ("harvest", "probe"):
                STAGES[stage](cfg, inner=inner)
            else:
                STAGES[stage](cfg)
        if "probe" in stages:
            print(_probe_summary_line(_read_probe_results(Layout(cfg.output_dir).probe / "probe_results.csv")))
        return EXIT_OK
    except _UsageError as exc:
        parser.print_help(sys.stderr)
        print(f"grilink: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GrilinkError, OSError, ValueError) as exc:
        log.error("failed", extra={"payload": {"command": args.command, "status": "error", "error": str(exc)}})
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
