import re
import xml.etree.ElementTree as ET

import pytest

from secureabm.plotting import emit_svg_plot

NS = "{http://www.w3.org/2000/svg}"


def _points(svg):
    root = ET.fromstring(svg)
    return [[tuple(map(float, p.split(","))) for p in pl.get("points").split()]
            for pl in root.iter(f"{NS}polyline")]


def test_flat_zero_series_draws_baseline():
    svg = emit_svg_plot({"zero": [0, 0, 0, 0]})
    (pts,) = _points(svg)
    assert len(pts) == 4
    assert len({y for _, y in pts}) == 1  # all on the x axis


def test_four_curves_with_legend():
    series = {f"alpha = {a}": [a, 2 * a, a] for a in (0.0, 0.25, 0.5, 0.75)}
    svg = emit_svg_plot(series, title="sweep")
    assert len(_points(svg)) == 4
    for label in series:
        assert f">{label}</text>" in svg


def test_values_are_normalized_to_plot_box():
    svg = emit_svg_plot([[1, 5, 2], [0, 10, 3]])
    ys = [y for pts in _points(svg) for _, y in pts]
    assert min(ys) == pytest.approx(50) and max(ys) == pytest.approx(350)


def test_writes_file_and_escapes(tmp_path):
    path = tmp_path / "p.svg"
    svg = emit_svg_plot({"a<b & c": [1, 2]}, path, title="x > y")
    assert path.read_text() == svg
    assert "a&lt;b &amp; c" in svg and "x &gt; y" in svg
    ET.fromstring(svg)


def test_deterministic():
    assert emit_svg_plot([[1, 2, 3]]) == emit_svg_plot([[1, 2, 3]])


def test_custom_x_values():
    svg = emit_svg_plot({"d": [0, 1, 0]}, x_values=[0.0, 0.75, 1.5], x_label="beta")
    assert re.search(r">1\.5</text>", svg) and ">beta</text>" in svg


@pytest.mark.parametrize("bad", [{}, [[]], [[1, 2], [1]]])
def test_invalid_series(bad):
    with pytest.raises(ValueError):
        emit_svg_plot(bad)


def test_label_count_must_match():
    with pytest.raises(ValueError):
        emit_svg_plot([[1], [2]], labels=["only one"])
