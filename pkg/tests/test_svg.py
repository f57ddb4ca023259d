import xml.etree.ElementTree as ET

import pytest

from tanglepick.svg import bar_plot, scatter_plot

NS = "{http://www.w3.org/2000/svg}"


def test_bar_plot_is_valid_svg_with_error_bars():
    root = ET.fromstring(bar_plot(["I", "V", "IV"], [0.5, 0.9, 0.7], [0.1, 0.0, 0.05], title="a & b"))
    assert root.tag == f"{NS}svg"
    bars = [r for r in root.iter(f"{NS}rect") if r.get("fill") != "white"]
    assert len(bars) == 3
    # axes, one line per tick, then 3 lines per whisker; the zero-std bar has none
    lines = list(root.iter(f"{NS}line"))
    ticks = len([t for t in root.iter(f"{NS}text") if t.get("text-anchor") == "end"])
    assert len(lines) - 2 - ticks == 6


def test_scatter_plot_with_line_and_band():
    text = scatter_plot([12, 60, 120], [5, 20, 40], [1, 2, 3], line=([12, 120], [4, 41]),
                        band=([12, 120], [2, 38], [6, 44]))
    root = ET.fromstring(text)
    assert len(list(root.iter(f"{NS}circle"))) == 3
    assert len(list(root.iter(f"{NS}polygon"))) == 1
    assert len(list(root.iter(f"{NS}polyline"))) == 1


def test_plot_input_validation():
    with pytest.raises(ValueError):
        bar_plot([], [], [])
    with pytest.raises(ValueError):
        scatter_plot([1, 2], [1], [1])
