"""Machine-readable TSV reports and the Markdown tables rendered from them.

``report.tsv`` layout: ``#`` comment lines echo the setup, then a header
``setup  dataset  seed  metric  value`` and one row per value. ``seed`` is an
integer for per-run values and ``mean``/``stdev``/``n_runs`` for the
aggregates. Auxiliary dev scores use the dataset name ``aux-dev``. Ratios are
stored in [0, 1] as ``repr`` floats; tables render them as percentages with
one decimal.

Markdown tables are produced only from parsed TSV rows, so every rendered
number can be recomputed from the TSV file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .metrics import AuxReport, MetricReport, aggregate_seeds
from .schedule import ExperimentReport

AUX_DATASET = "aux-dev"
HEADER = ("setup", "dataset", "seed", "metric", "value")
METRIC_TITLES = {
    "intent_accuracy": "Intents",
    "slot_f1": "Slots",
    "fully_correct": "Fully correct",
    "slot_precision": "Slot P",
    "slot_recall": "Slot R",
    "las": "LAS",
    "pos_accuracy": "POS",
    "ner_span_f1": "NER",
    "mlm_perplexity": "PPL",
}
TABLE_METRICS = ("intent_accuracy", "slot_f1", "fully_correct")


class ReportFormatError(ValueError):
    pass


def _fmt(value: float) -> str:
    return repr(float(value))


def setup_name(report: ExperimentReport) -> str:
    return report.config.get("name") or report.schedule


def report_rows(report: ExperimentReport) -> list[tuple[str, str, str, str, str]]:
    setup = setup_name(report)
    rows = []
    for name in report.eval_names:
        for run in report.runs:
            m = run.metrics[name]
            for metric in MetricReport.FIELDS:
                rows.append((setup, name, str(run.seed), metric, _fmt(getattr(m, metric))))
            rows.append((setup, name, str(run.seed), "n_sentences", str(m.n_sentences)))
        for metric in MetricReport.FIELDS:
            agg = aggregate_seeds([getattr(r.metrics[name], metric) for r in report.runs])
            rows += [
                (setup, name, "mean", metric, _fmt(agg.mean)),
                (setup, name, "stdev", metric, _fmt(agg.stdev)),
                (setup, name, "n_runs", metric, str(agg.n_runs)),
            ]
    for metric in AuxReport.FIELDS:
        values = [getattr(r.aux, metric) for r in report.runs]
        if any(v is None for v in values):
            continue
        for run, v in zip(report.runs, values):
            rows.append((setup, AUX_DATASET, str(run.seed), metric, _fmt(v)))
        agg = aggregate_seeds(values)
        rows += [
            (setup, AUX_DATASET, "mean", metric, _fmt(agg.mean)),
            (setup, AUX_DATASET, "stdev", metric, _fmt(agg.stdev)),
            (setup, AUX_DATASET, "n_runs", metric, str(agg.n_runs)),
        ]
    return rows


def report_tsv(report: ExperimentReport) -> str:
    lines = [
        f"# setup: {setup_name(report)}",
        f"# schedule: {report.schedule}",
        "# config: " + json.dumps(report.config, sort_keys=True, ensure_ascii=False),
        "\t".join(HEADER),
    ]
    lines += ["\t".join(r) for r in report_rows(report)]
    return "\n".join(lines) + "\n"


@dataclass
class LoadedReport:
    setup: str
    # (dataset, seed, metric) -> value
    values: dict[tuple[str, str, str], float] = field(default_factory=dict)

    @property
    def datasets(self) -> list[str]:
        seen = []
        for d, _, _ in self.values:
            if d not in seen:
                seen.append(d)
        return seen

    def get(self, dataset: str, seed: str, metric: str) -> Optional[float]:
        return self.values.get((dataset, seed, metric))


def parse_report_tsv(text: str) -> LoadedReport:
    setup = None
    values = {}
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line or line.startswith("#"):
            if line.startswith("# setup:"):
                setup = line.split(":", 1)[1].strip()
            continue
        cols = line.split("\t")
        if not header_seen:
            if tuple(cols) != HEADER:
                raise ReportFormatError(f"line {lineno}: expected header {HEADER}")
            header_seen = True
            continue
        if len(cols) != 5:
            raise ReportFormatError(f"line {lineno}: expected 5 columns, got {len(cols)}")
        row_setup, dataset, seed, metric, value = cols
        setup = setup or row_setup
        values[(dataset, seed, metric)] = float(value)
    if setup is None:
        raise ReportFormatError("report has no setup name")
    return LoadedReport(setup, values)


def read_report(path: str | Path) -> LoadedReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.tsv"
    return parse_report_tsv(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# rendering


def pct(value: float) -> str:
    return f"{100 * value:.1f}"


def mean_std(mean: float, std: float, percent: bool = True) -> str:
    if percent:
        return f"{pct(mean)}±{pct(std)}"
    return f"{mean:.1f}±{std:.1f}"


def delta_cell(delta_pp: float) -> str:
    rounded = round(delta_pp, 1)
    if rounded == 0:
        return "0.0"
    return f"{rounded:+.1f}"


def delta_table(
    reports: Sequence[LoadedReport], baseline: str, metrics: Sequence[str] = TABLE_METRICS
) -> dict[str, dict[tuple[str, str], float]]:
    """Differences of mean scores to ``baseline`` in percentage points: setup -> (dataset, metric) -> delta."""
    by_name = {r.setup: r for r in reports}
    if baseline not in by_name:
        raise KeyError(f"baseline {baseline!r} not among reports: {', '.join(by_name)}")
    base = by_name[baseline]
    out = {}
    for r in reports:
        row = {}
        for dataset in base.datasets:
            if dataset == AUX_DATASET:
                continue
            for metric in metrics:
                b, v = base.get(dataset, "mean", metric), r.get(dataset, "mean", metric)
                if b is not None and v is not None:
                    row[(dataset, metric)] = 100 * v - 100 * b
        out[r.setup] = row
    return out


def _md_table(header: list[str], rows: Iterable[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def _datasets(reports: Sequence[LoadedReport]) -> list[str]:
    seen = []
    for r in reports:
        seen += [d for d in r.datasets if d not in seen and d != AUX_DATASET]
    return seen


def render_markdown(reports: Sequence[LoadedReport], baseline: Optional[str] = None) -> str:
    parts = []
    for dataset in _datasets(reports):
        rows = []
        for r in reports:
            cells = []
            for metric in TABLE_METRICS:
                m, s = r.get(dataset, "mean", metric), r.get(dataset, "stdev", metric)
                cells.append(mean_std(m, s) if m is not None else "")
            rows.append([r.setup] + cells)
        parts.append(f"### {dataset}\n\n" + _md_table(["Setup"] + [METRIC_TITLES[m] for m in TABLE_METRICS], rows))
    aux_rows = []
    for r in reports:
        cells = []
        for metric in AuxReport.FIELDS:
            m, s = r.get(AUX_DATASET, "mean", metric), r.get(AUX_DATASET, "stdev", metric)
            if m is None:
                cells.append("")
            else:
                cells.append(mean_std(m, s, percent=metric != "mlm_perplexity"))
        if any(cells):
            aux_rows.append([r.setup] + cells)
    if aux_rows:
        parts.append("### Auxiliary dev scores\n\n" + _md_table(["Setup"] + [METRIC_TITLES[m] for m in AuxReport.FIELDS], aux_rows))
    if baseline is not None:
        deltas = delta_table(reports, baseline)
        cols = [(d, m) for d in _datasets(reports) for m in TABLE_METRICS]
        rows = [[setup] + [delta_cell(row[c]) if c in row else "" for c in cols] for setup, row in deltas.items()]
        header = ["Setup"] + [f"{d} {METRIC_TITLES[m]}" for d, m in cols]
        parts.append(f"### Differences to {baseline} (pp)\n\n" + _md_table(header, rows))
    return "\n\n".join(parts) + "\n"


def render_tsv(reports: Sequence[LoadedReport], baseline: Optional[str] = None) -> str:
    lines = ["\t".join(["setup", "dataset", "metric", "mean", "stdev", "delta_pp"])]
    deltas = delta_table(reports, baseline) if baseline is not None else {}
    for r in reports:
        for dataset in r.datasets:
            metrics = TABLE_METRICS if dataset != AUX_DATASET else AuxReport.FIELDS
            for metric in metrics:
                m, s = r.get(dataset, "mean", metric), r.get(dataset, "stdev", metric)
                if m is None:
                    continue
                percent = metric != "mlm_perplexity"
                mean_s = pct(m) if percent else f"{m:.1f}"
                std_s = pct(s) if percent else f"{s:.1f}"
                d = deltas.get(r.setup, {}).get((dataset, metric))
                lines.append("\t".join([r.setup, dataset, metric, mean_s, std_s, delta_cell(d) if d is not None else ""]))
    return "\n".join(lines) + "\n"


def render_tables(reports: Sequence[LoadedReport], baseline: Optional[str] = None, fmt: str = "md") -> str:
    if fmt == "md":
        return render_markdown(reports, baseline)
    if fmt == "tsv":
        return render_tsv(reports, baseline)
    raise ValueError(f"unknown table format {fmt!r}")


def metric_report_markdown(reports: dict[str, MetricReport]) -> str:
    rows = [[name] + [pct(getattr(r, m)) for m in MetricReport.FIELDS] + [str(r.n_sentences)] for name, r in reports.items()]
    return _md_table(["Dataset"] + [METRIC_TITLES[m] for m in MetricReport.FIELDS] + ["Sentences"], rows) + "\n"


def metric_report_tsv(reports: dict[str, MetricReport]) -> str:
    lines = ["\t".join(["dataset", *MetricReport.FIELDS, "n_sentences"])]
    for name, r in reports.items():
        lines.append("\t".join([name] + [_fmt(getattr(r, m)) for m in MetricReport.FIELDS] + [str(r.n_sentences)]))
    return "\n".join(lines) + "\n"
