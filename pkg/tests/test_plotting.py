"""SVG 图像测试."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest
from conftest import SVG_NS
from conftest import collection_markers
from lcg.core.exceptions import DataError
from lcg.core.numkernel import make_rng
from lcg.core.plotting import heatmap_svg
from lcg.core.plotting import scatter_svg


class TestScatter:
    """潜变量散点图."""

    def test_one_marker_per_sample(self, quadrants, tmp_path):
        latents = make_rng(1).standard_normal((50, 2)) * 2.0
        drawn = scatter_svg(tmp_path / "s.svg", quadrants, latents)
        assert drawn == 50
        assert collection_markers(tmp_path / "s.svg") == 50

    def test_repeated_render_is_identical(self, axes8d, tmp_path):
        latents = make_rng(2).standard_normal((30, 8))
        scatter_svg(tmp_path / "a.svg", axes8d, latents, axes=(0, 2))
        scatter_svg(tmp_path / "b.svg", axes8d, latents, axes=(0, 2))
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_empty(self, quadrants, tmp_path):
        with pytest.raises(DataError):
            scatter_svg(tmp_path / "s.svg", quadrants, np.zeros((0, 2)))


class TestHeatmap:
    """相关性热力图."""

    def test_writes_svg(self, tmp_path):
        heatmap_svg(tmp_path / "h.svg", ["A", "B"], np.array([[1.0, 0.6], [0.6, 1.0]]))
        assert ET.parse(tmp_path / "h.svg").getroot().tag == f"{SVG_NS}svg"

    def test_shape_mismatch(self, tmp_path):
        with pytest.raises(DataError):
            heatmap_svg(tmp_path / "h.svg", ["A"], np.eye(2))
