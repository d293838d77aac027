import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from wlssgan.nn import ContractError
from wlssgan.plotting import HEIGHT, LEFT, RIGHT, TOP, BOTTOM, WIDTH, plot_curves, plot_signals, render_svg

GOLDEN = Path(__file__).parent / "data" / "curves_golden.svg"
NS = "{http://www.w3.org/2000/svg}"
GOLDEN_SERIES = {"train <a>": [1.0, 0.5, 0.25, float("nan"), 0.125], "test": [0.9]}


def test_matches_golden_file():
    assert render_svg(GOLDEN_SERIES, "loss & acc", "epoch", "value") == GOLDEN.read_text()


def test_well_formed_and_escaped():
    root = ET.fromstring(render_svg(GOLDEN_SERIES, "loss & acc"))
    texts = [t.text for t in root.iter(NS + "text")]
    assert "loss & acc" in texts and "train <a>" in texts
    assert len(root.findall(NS + "polyline")) == 1
    assert len(root.findall(NS + "circle")) == 1


def test_polyline_maps_extremes_to_plot_corners():
    root = ET.fromstring(render_svg({"a": [0.0, 2.0, 1.0]}))
    pts = [tuple(map(float, p.split(","))) for p in root.find(NS + "polyline").get("points").split()]
    right, bottom = WIDTH - RIGHT, HEIGHT - BOTTOM
    assert pts[0] == (LEFT, bottom)
    assert pts[1] == ((LEFT + right) / 2, TOP)
    assert pts[2] == (right, (TOP + bottom) / 2)


def test_nan_points_are_skipped():
    root = ET.fromstring(render_svg({"a": [1.0, float("nan"), 3.0]}))
    assert len(root.find(NS + "polyline").get("points").split()) == 2


def test_empty_series_rejected():
    with pytest.raises(ContractError):
        render_svg({})
    with pytest.raises(ContractError):
        render_svg({"a": [float("nan")]})


def test_files_written(tmp_path):
    p = plot_curves({"x": [1, 2]}, tmp_path / "c.svg", title="t")
    assert p.read_text().startswith("<svg")
    q = plot_signals([[0.0, 1.0, -1.0]], tmp_path / "s.svg")
    assert "Doppler bin" in q.read_text()
