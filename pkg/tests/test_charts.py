from core.charts import plot_fusion_report, plot_history
from core.models import FusionReport, FusionRow


def _is_png(path):
    return path.exists() and path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_fusion_chart(tmp_path):
    rows = [FusionRow(w / 10, 0.1 + w / 100, 0.3 - w / 100) for w in range(11)]
    report = FusionReport(rows, best_valence_weight=1.0, best_arousal_weight=0.0)
    path = plot_fusion_report(report, tmp_path / "fusion.png", title="audio + lyrics")
    assert _is_png(path)


def test_history_chart_and_empty_placeholders(tmp_path):
    assert _is_png(plot_history([(1, 2.0, 2.5), (2, 1.0, 1.8), (3, 0.5, 1.9)], tmp_path / "h.png", best_epoch=2))
    assert _is_png(plot_history([], tmp_path / "empty.png"))
    assert _is_png(plot_fusion_report(FusionReport([], 0.0, 0.0), tmp_path / "none.png"))
