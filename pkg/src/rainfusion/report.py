"""Skill reports: CSI/FSS per (lead, category, metric) across models.

The text layout mirrors the usual verification-table shape — one row per
lead/category/metric, one column per model — and the same grid serializes
to CSV.  Undefined scores print as "n/a" unless paper-style zeros are
requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grids import PrecipCategory, RainGrid, read_grid
from .verify import ContingencyTable, FssParams, contingency, csi, fss, fss_components

METRICS = ("CSI", "FSS")
DEFAULT_CATEGORIES = (PrecipCategory.HEAVY, PrecipCategory.VIOLENT)
ALL_RAIN_CATEGORIES = (PrecipCategory.LIGHT, PrecipCategory.MODERATE,
                       PrecipCategory.HEAVY, PrecipCategory.VIOLENT)


@dataclass
class SkillReport:
    """Scores keyed by (lead_minutes, category name, metric, model)."""

    models: tuple[str, ...]
    leads: tuple[int, ...]
    categories: tuple[str, ...]
    scores: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def set(self, lead: int, category: str, metric: str, model: str,
            score: float | None) -> None:
        if score is not None and not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} outside [0, 1] for {model}/{category}/{metric}")
        self.scores[(lead, category, metric, model)] = score

    def get(self, lead: int, category: str, metric: str, model: str):
        return self.scores[(lead, category, metric, model)]

    def _rows(self):
        for lead in self.leads:
            for category in self.categories:
                for metric in METRICS:
                    yield lead, category, metric

    @staticmethod
    def _fmt(score, paper_style: bool, decimals: int) -> str:
        if score is None:
            return f"{0.0:.{decimals}f}" if paper_style else "n/a"
        return f"{score:.{decimals}f}"

    def to_text(self, paper_style: bool = False) -> str:
        lines = [f"# {k}={v}" for k, v in self.metadata.items()]
        header = ["Lead Time", "Category", "Metric", *self.models]
        table = [header]
        for lead, category, metric in self._rows():
            row = [f"{lead} min", category, metric]
            for model in self.models:
                row.append(self._fmt(self.scores.get((lead, category, metric, model)),
                                     paper_style, 3))
            table.append(row)
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        for row in table:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def to_csv(self, paper_style: bool = False) -> str:
        lines = [f"# {k}={v}" for k, v in self.metadata.items()]
        lines.append(",".join(["lead_minutes", "category", "metric", *self.models]))
        for lead, category, metric in self._rows():
            cells = [str(lead), category, metric]
            for model in self.models:
                cells.append(self._fmt(self.scores.get((lead, category, metric, model)),
                                       paper_style, 6))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, text_path, csv_path, paper_style: bool = False) -> None:
        Path(text_path).write_text(self.to_text(paper_style))
        Path(csv_path).write_text(self.to_csv(paper_style))


def evaluate_models(predictors, samples, categories=DEFAULT_CATEGORIES,
                    neighborhood: int = 3, aggregation: str = "pooled",
                    metadata: dict | None = None) -> SkillReport:
    """Score (name, sample -> RainGrid) predictors over a sample list.

    Aggregation "pooled" accumulates contingency counts and FBS/WFBS sums
    over the whole set before forming scores; "per-image" averages
    per-sample scores, skipping not-applicable ones.  Samples must share
    one lead time.
    """
    if aggregation not in ("pooled", "per-image"):
        raise ValueError(f"aggregation must be 'pooled' or 'per-image', got {aggregation!r}")
    if not samples:
        raise ValueError("no samples to evaluate")
    leads = {s.lead_minutes for s in samples}
    if len(leads) > 1:
        raise ValueError(f"samples mix lead times {sorted(leads)}")
    lead = leads.pop()
    samples = sorted(samples, key=lambda s: s.target_timestamp)
    names = tuple(name for name, _ in predictors)
    report = SkillReport(models=names, leads=(lead,),
                         categories=tuple(c.name.title() for c in categories),
                         metadata=dict(metadata or {}))
    report.metadata.setdefault("aggregation", aggregation)
    report.metadata.setdefault("neighborhood", str(neighborhood))
    report.metadata.setdefault("samples", str(len(samples)))
    observations = [read_grid(s.target_path) for s in samples]
    for name, predict in predictors:
        tables = {c: ContingencyTable() for c in categories}
        csis = {c: [] for c in categories}
        fbs_sums = {c: 0.0 for c in categories}
        wfbs_sums = {c: 0.0 for c in categories}
        fss_vals = {c: [] for c in categories}
        for sample, obs in zip(samples, observations):
            pred = predict(sample)
            for c in categories:
                params = FssParams.for_category(c, n=neighborhood)
                if aggregation == "pooled":
                    tables[c] = tables[c] + contingency(pred, obs, c)
                    fbs, wfbs, _ = fss_components(pred, obs, params)
                    fbs_sums[c] += fbs
                    wfbs_sums[c] += wfbs
                else:
                    score = csi(contingency(pred, obs, c))
                    if score is not None:
                        csis[c].append(score)
                    f = fss(pred, obs, params)
                    if f is not None:
                        fss_vals[c].append(f)
        for c in categories:
            if aggregation == "pooled":
                csi_score = csi(tables[c])
                fss_score = (1.0 - fbs_sums[c] / wfbs_sums[c]) if wfbs_sums[c] > 0 else None
            else:
                csi_score = float(np.mean(csis[c])) if csis[c] else None
                fss_score = float(np.mean(fss_vals[c])) if fss_vals[c] else None
            report.set(lead, c.name.title(), "CSI", name, csi_score)
            report.set(lead, c.name.title(), "FSS", name, fss_score)
    return report


def merge_reports(reports) -> SkillReport:
    """Combine single-lead reports (same models/categories) into one table."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to merge")
    first = reports[0]
    for r in reports[1:]:
        if r.models != first.models or r.categories != first.categories:
            raise ValueError("reports disagree on models or categories")
    merged = SkillReport(models=first.models,
                         leads=tuple(sorted({l for r in reports for l in r.leads})),
                         categories=first.categories,
                         metadata=dict(first.metadata))
    for r in reports:
        merged.scores.update(r.scores)
    return merged
