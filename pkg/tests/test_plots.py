import re

import pytest

from retinafuse import fusion
from retinafuse.errors import RetinaFuseError
from retinafuse.metrics import roc_auc
from retinafuse.plots import LEFT, TOP, H, W, plot_curves, ratio_label


def _write_roc(path, curve):
    lines = ["fpr,tpr,threshold"] + [f"{a},{b},{t}" for a, b, t in
                                     zip(curve.fpr, curve.tpr, curve.thresholds)]
    path.write_text("\n".join(lines) + "\n")


def _points(svg):
    pts = re.search(r'class="series"[^>]*points="([^"]+)"', svg).group(1)
    return [tuple(map(float, p.split(","))) for p in pts.split()]


class TestPlots:
    def test_perfect_roc_through_top_left(self, tmp_path):
        _write_roc(tmp_path / "roc.csv", roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]))
        (svg,) = plot_curves(tmp_path / "out", roc=tmp_path / "roc.csv")
        # data (0, 1) sits at the top-left corner of the plot area
        corner = (float(f"{LEFT:.2f}"), float(f"{TOP:.2f}"))
        assert corner in _points(svg.read_text())

    def test_empty_file_writes_nothing(self, tmp_path):
        (tmp_path / "roc.csv").write_text("fpr,tpr,threshold\n")
        with pytest.raises(RetinaFuseError, match="no data rows"):
            plot_curves(tmp_path / "out", roc=tmp_path / "roc.csv")
        assert not (tmp_path / "out").exists()

    def test_bad_report_blocks_all_outputs(self, tmp_path):
        _write_roc(tmp_path / "roc.csv", roc_auc([0.1, 0.9], [0, 1]))
        (tmp_path / "pr.csv").write_text("recall,precision\nx,1\n")
        with pytest.raises(RetinaFuseError, match="malformed"):
            plot_curves(tmp_path / "out", roc=tmp_path / "roc.csv", pr=tmp_path / "pr.csv")
        assert not (tmp_path / "out").exists()

    def test_sweep_bars(self, tmp_path):
        rows = [fusion.RatioSweepRow(w, "rbf", a) for w, a in
                zip(fusion.DEFAULT_GRID, (0.5, 0.6, 0.7, 0.8, 0.9))]
        fusion.write_sweep_csv(rows, tmp_path / "s.csv")
        (svg,) = plot_curves(tmp_path / "out", sweep=tmp_path / "s.csv")
        text = svg.read_text()
        assert text.count('class="bar"') == 5
        labels = re.findall(r'class="bar-label"[^>]*>([^<]+)<', text)
        assert labels == ["0%:100%", "40%:60%", "50%:50%", "60%:40%", "100%:0%"]

    def test_loss_plot(self, tmp_path):
        (tmp_path / "l.csv").write_text("epoch,loss\n1,0.9\n2,0.5\n3,0.4\n")
        (svg,) = plot_curves(tmp_path / "out", loss=tmp_path / "l.csv")
        assert len(_points(svg.read_text())) == 3

    def test_standalone_svg(self, tmp_path):
        _write_roc(tmp_path / "roc.csv", roc_auc([0.1, 0.9], [0, 1]))
        (svg,) = plot_curves(tmp_path / "out", roc=tmp_path / "roc.csv")
        text = svg.read_text()
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
        assert f'width="{W}"' in text and f'height="{H}"' in text

    def test_missing_report(self, tmp_path):
        with pytest.raises(RetinaFuseError, match="not found"):
            plot_curves(tmp_path / "out", loss=tmp_path / "none.csv")

    def test_nothing_requested(self, tmp_path):
        with pytest.raises(RetinaFuseError):
            plot_curves(tmp_path / "out")


def test_ratio_label():
    assert ratio_label(0.6) == "60%:40%"
    assert ratio_label(1.0) == "100%:0%"
