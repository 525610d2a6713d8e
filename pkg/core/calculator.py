"""Evaluation for MoodNet: R² scores, late fusion sweeps and the results report."""
import logging
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill

from .errors import DimensionError, EmptyDataError, TrackSetMismatchError, ZeroVarianceError
from .models import (BlendRow, FusionReport, FusionRow, LabelStats, MoodLabel, PredictionRow,
                     PredictionSet, ReportRow)
from .persistence import ensure_dir, write_report_csv

logger = logging.getLogger(__name__)

FUSION_WEIGHTS = tuple(float(w) for w in np.round(np.arange(11) * 0.1, 1))
SELECTIONS = ("validation", "test")
DIMENSIONS = ("valence", "arousal")


def r2_score(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Coefficient of determination 1 - SS_res/SS_tot, SS_tot taken about the truth mean."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size:
        raise DimensionError(f"R² needs equal lengths, got {pred.size} predictions and {truth.size} labels")
    if truth.size < 2:
        raise EmptyDataError(f"R² needs at least 2 tracks, got {truth.size}")
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVarianceError("R² is undefined for constant labels")
    ss_res = float(np.sum((pred - truth) ** 2))
    return 1.0 - ss_res / ss_tot


def r2_pair(predictions: PredictionSet) -> tuple[float, float]:
    """(valence R², arousal R²) of a prediction set."""
    pred, true = predictions.arrays()
    return r2_score(pred[:, 0], true[:, 0]), r2_score(pred[:, 1], true[:, 1])


def late_fusion(a: PredictionSet, b: PredictionSet, weight: float) -> PredictionSet:
    """Per track and dimension ``weight * a + (1 - weight) * b``; labels and order come from ``a``."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"Fusion weight must lie in [0, 1], got {weight}")
    difference = a.track_ids ^ b.track_ids
    if difference:
        raise TrackSetMismatchError(difference)
    other = b.by_id()
    rows = []
    for row in a.rows:
        o = other[row.msd_id]
        rows.append(PredictionRow(
            row.msd_id, row.split,
            weight * row.valence_pred + (1.0 - weight) * o.valence_pred,
            weight * row.arousal_pred + (1.0 - weight) * o.arousal_pred,
            row.valence_true, row.arousal_true,
        ))
    return PredictionSet(rows, name=f"{a.name}*{weight:.1f}+{b.name}")


def with_truth(predictions: PredictionSet, truth: Mapping[str, MoodLabel]) -> PredictionSet:
    """Replace the true labels of every row by those in ``truth``."""
    missing = predictions.track_ids - set(truth)
    if missing:
        raise TrackSetMismatchError(missing)
    rows = [PredictionRow(r.msd_id, r.split, r.valence_pred, r.arousal_pred,
                          truth[r.msd_id].valence, truth[r.msd_id].arousal)
            for r in predictions.rows]
    return PredictionSet(rows, predictions.name)


def _split_or_all(predictions: PredictionSet, split: str) -> tuple[PredictionSet, str]:
    part = predictions.subset(split)
    if part.rows:
        return part, split
    return predictions, "all"


def fusion_grid_search(a: PredictionSet, b: PredictionSet,
                       truth: Optional[Mapping[str, MoodLabel]] = None,
                       selection: str = "validation",
                       weights: Sequence[float] = FUSION_WEIGHTS) -> FusionReport:
    """Sweep the late-fusion weight of ``a`` over 0.0..1.0.

    Every row reports R² on the test rows (all rows when none are tagged test).
    With ``selection="validation"`` the best weight per dimension is chosen on the
    valid rows instead; ties go to the smallest weight.
    """
    if selection not in SELECTIONS:
        raise ValueError(f"Unknown fusion selection {selection!r}; expected one of {SELECTIONS}")
    if truth is not None:
        a = with_truth(a, truth)
    difference = a.track_ids ^ b.track_ids
    if difference:
        raise TrackSetMismatchError(difference)

    _, evaluation_split = _split_or_all(a, "test")
    selection_split = evaluation_split
    if selection == "validation":
        if a.subset("valid").rows:
            selection_split = "valid"
        else:
            logger.warning("No valid rows in %r; selecting the fusion weight on %s rows", a.name, evaluation_split)

    def scores(fused: PredictionSet, split: str) -> tuple[float, float]:
        return r2_pair(fused if split == "all" else fused.subset(split))

    rows, selected = [], []
    for w in weights:
        fused = late_fusion(a, b, w)
        valence, arousal = scores(fused, evaluation_split)
        rows.append(FusionRow(w, valence, arousal))
        selected.append((valence, arousal) if selection_split == evaluation_split
                        else scores(fused, selection_split))

    selected = np.array(selected)
    best_valence = float(weights[int(np.argmax(selected[:, 0]))])
    best_arousal = float(weights[int(np.argmax(selected[:, 1]))])
    logger.info("Fusion %s + %s: best weight valence %.1f, arousal %.1f (chosen on %s, scored on %s)",
                a.name, b.name, best_valence, best_arousal, selection_split, evaluation_split)
    return FusionReport(rows, best_valence, best_arousal, selection_split, evaluation_split)


def select_best_variant(candidates: Mapping[str, PredictionSet], split: str = "valid") -> tuple[str, float]:
    """Name and mean (valence, arousal) R² of the best candidate on ``split``."""
    if not candidates:
        raise EmptyDataError("No candidate prediction sets")
    best_name, best_score = None, -np.inf
    for name in sorted(candidates):
        part, used = _split_or_all(candidates[name], split)
        if used != split:
            logger.warning("Candidate %s has no %s rows; scoring all rows", name, split)
        score = float(np.mean(r2_pair(part)))
        logger.info("Candidate %s: mean R² %.4f on %s", name, score, used)
        if score > best_score:
            best_name, best_score = name, score
    return best_name, best_score


def blend_report(pairs: Mapping[str, tuple[PredictionSet, PredictionSet]], dimension: str = "valence",
                 selection: str = "validation") -> list[BlendRow]:
    """Weighted mean of classical and deep predictions per modality.

    ``pairs`` maps a modality to ``(classical, deep)``; the weight is the share of
    the deep prediction.
    """
    if dimension not in DIMENSIONS:
        raise ValueError(f"Unknown dimension {dimension!r}")
    out = []
    for modality, (classical, deep) in pairs.items():
        report = fusion_grid_search(deep, classical, selection=selection)
        best = report.best_valence_weight if dimension == "valence" else report.best_arousal_weight
        blended, classical_r2, deep_r2 = (getattr(report.row(w), f"r2_{dimension}") for w in (best, 0.0, 1.0))
        out.append(BlendRow(modality, best, blended, classical_r2, deep_r2))
    return out


# =============================================================================
# Results report
# =============================================================================

class ReportPaths(NamedTuple):
    csv: Path
    text: Path
    xlsx: Path


def report_rows(entries: Iterable[tuple[str, str, PredictionSet]], split: str = "test") -> list[ReportRow]:
    """One row per (mode, model), sorted by (mode, model)."""
    rows = []
    for mode, model, predictions in entries:
        part, used = _split_or_all(predictions, split)
        if used != split:
            logger.warning("%s/%s has no %s rows; scoring all rows", mode, model, split)
        valence, arousal = r2_pair(part)
        rows.append(ReportRow(mode, model, valence, arousal))
    return sorted(rows, key=lambda r: (r.mode, r.model))


def _footnote(stats: Optional[LabelStats]) -> list[str]:
    if stats is None:
        return ["R² computed on normalized labels; no normalization statistics were supplied."]
    return [
        f"R² computed on normalized labels (statistics from the {stats.source} split).",
        f"valence = z * {stats.valence_std:.6g} + {stats.valence_mean:.6g}",
        f"arousal = z * {stats.arousal_std:.6g} + {stats.arousal_mean:.6g}",
    ]


def format_report(rows: Sequence[ReportRow], stats: Optional[LabelStats] = None,
                  blends: Sequence[BlendRow] = ()) -> str:
    """Plain-text table: mode / model / valence / arousal, plus the denormalization footnote."""
    width_mode = max([len("Mode")] + [len(r.mode) for r in rows])
    width_model = max([len("Model")] + [len(r.model) for r in rows])
    lines = [f"{'Mode':<{width_mode}}  {'Model':<{width_model}}  {'Valence':>8}  {'Arousal':>8}"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append(f"{r.mode:<{width_mode}}  {r.model:<{width_model}}  {r.r2_valence:>8.3f}  {r.r2_arousal:>8.3f}")
    if blends:
        lines.append("")
        lines.append(f"{'Modality':<10}  {'Weight':>6}  {'Blended':>8}  {'Classical':>9}  {'Deep':>8}")
        for b in blends:
            lines.append(f"{b.modality:<10}  {b.best_weight:>6.1f}  {b.blended_r2:>8.3f}  "
                         f"{b.classical_r2:>9.3f}  {b.deep_r2:>8.3f}")
    lines.append("")
    lines.extend(_footnote(stats))
    return "\n".join(lines) + "\n"


def _style_header(ws, columns: Sequence[str], row: int = 1) -> None:
    header_font = Font(bold=True, color='FFFFFF')
    header_fill = PatternFill(start_color='4472C4', end_color='4472C4', fill_type='solid')
    for col, header in enumerate(columns, 1):
        cell = ws.cell(row=row, column=col, value=header)
        cell.font = header_font
        cell.fill = header_fill
        cell.alignment = Alignment(horizontal='center')


def _autosize(ws) -> None:
    for col in ws.columns:
        max_length = max((len(str(cell.value)) for cell in col if cell.value is not None), default=0)
        ws.column_dimensions[col[0].column_letter].width = min(max_length + 2, 30)


def export_report_excel(rows: Sequence[ReportRow], path: Union[str, Path], stats: Optional[LabelStats] = None,
                        blends: Sequence[BlendRow] = ()) -> None:
    """Workbook with a Results sheet (and a Blends sheet when given)."""
    wb = Workbook()
    ws = wb.active
    ws.title = "Results"
    _style_header(ws, ['Mode', 'Model', 'R² Valence', 'R² Arousal'])
    for row_idx, r in enumerate(rows, 2):
        for col_idx, value in enumerate([r.mode, r.model, round(r.r2_valence, 6), round(r.r2_arousal, 6)], 1):
            cell = ws.cell(row=row_idx, column=col_idx, value=value)
            if col_idx > 2:
                cell.alignment = Alignment(horizontal='right')
    _autosize(ws)

    summary_row = len(rows) + 3
    ws.cell(row=summary_row, column=1, value="Models:").font = Font(bold=True)
    ws.cell(row=summary_row, column=2, value=len(rows))
    for offset, line in enumerate(_footnote(stats), 1):
        ws.cell(row=summary_row + offset, column=1, value=line)

    if blends:
        ws2 = wb.create_sheet("Blends")
        _style_header(ws2, ['Modality', 'Deep Weight', 'Blended R²', 'Classical R²', 'Deep R²'])
        for row_idx, b in enumerate(blends, 2):
            values = [b.modality, b.best_weight, round(b.blended_r2, 6), round(b.classical_r2, 6),
                      round(b.deep_r2, 6)]
            for col_idx, value in enumerate(values, 1):
                cell = ws2.cell(row=row_idx, column=col_idx, value=value)
                if col_idx > 1:
                    cell.alignment = Alignment(horizontal='right')
        _autosize(ws2)

    wb.save(path)


def emit_report(entries: Iterable[tuple[str, str, PredictionSet]], out_dir: Union[str, Path],
                stats: Optional[LabelStats] = None, split: str = "test",
                blends: Sequence[BlendRow] = ()) -> ReportPaths:
    """Write report.csv, report.txt and report.xlsx under ``out_dir``."""
    rows = report_rows(entries, split)
    if not rows:
        raise EmptyDataError("A report needs at least one prediction set")
    out_dir = ensure_dir(out_dir)
    paths = ReportPaths(out_dir / "report.csv", out_dir / "report.txt", out_dir / "report.xlsx")
    write_report_csv(rows, paths.csv)
    paths.text.write_text(format_report(rows, stats, blends), encoding='utf-8')
    export_report_excel(rows, paths.xlsx, stats, blends)
    logger.info("Report of %d model(s) written to %s", len(rows), out_dir)
    return paths


class ReportBuilder:
    """Collects prediction sets and blends for one results report."""

    def __init__(self, stats: Optional[LabelStats] = None, split: str = "test"):
        self.stats = stats
        self.split = split
        self.entries: list[tuple[str, str, PredictionSet]] = []
        self.blends: list[BlendRow] = []

    def add(self, mode: str, model: str, predictions: PredictionSet) -> None:
        """Register the predictions of one mode/model pair."""
        self.entries.append((mode, model, predictions))

    def add_blends(self, blends: Iterable[BlendRow]) -> None:
        self.blends.extend(blends)

    def rows(self) -> list[ReportRow]:
        return report_rows(self.entries, self.split)

    def emit(self, out_dir: Union[str, Path]) -> ReportPaths:
        """Write report.csv, the text table and report.xlsx into ``out_dir``."""
        return emit_report(self.entries, out_dir, self.stats, self.split, self.blends)
