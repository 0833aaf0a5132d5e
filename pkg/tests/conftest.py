"""pytest 配置文件与共享 fixture."""

import os
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

# 添加 src 目录到 sys.path, 无需安装即可导入
project_root = os.path.join(os.path.dirname(__file__), "..", "src")
sys.path.insert(0, project_root)
# 下面的辅助函数由测试模块以 `conftest` 导入
sys.path.insert(0, os.path.dirname(__file__))

from lcg.core.classifiers import LatentClassifier  # noqa: E402
from lcg.core.diffusion import Denoiser  # noqa: E402
from lcg.core.diffusion import make_schedule  # noqa: E402
from lcg.core.diffusion import train_denoiser  # noqa: E402
from lcg.core.numkernel import Mlp  # noqa: E402
from lcg.core.numkernel import make_rng  # noqa: E402
from lcg.core.types import Activation  # noqa: E402
from lcg.core.world import sample_dataset  # noqa: E402
from lcg.core.world import standard_world  # noqa: E402


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """所有元素中最大的 |a - n| / max(floor, |a|, |n|)."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / scale))


def ideal_classifiers(world, sharpness: float = 3.0):
    """沿世界精确半空间法向的线性分类器."""
    return {
        a.name: LatentClassifier.linear(a.name, sharpness * np.asarray(a.normal), sharpness * a.offset)
        for a in world.attributes
    }


SVG_NS = "{http://www.w3.org/2000/svg}"


def collection_markers(path) -> int:
    """散点集合绘制的标记数, 不论输出为 <use> 还是 <path>."""
    root = ET.parse(path).getroot()
    count = 0
    for group in root.iter(f"{SVG_NS}g"):
        if not group.get("id", "").startswith("PathCollection"):
            continue
        uses = list(group.iter(f"{SVG_NS}use"))
        if uses:
            count += len(uses)
        else:
            defs = {id(p) for d in group.iter(f"{SVG_NS}defs") for p in d.iter(f"{SVG_NS}path")}
            count += sum(1 for p in group.iter(f"{SVG_NS}path") if id(p) not in defs)
    return count


def zero_denoiser(latent_dim: int) -> Denoiser:
    """噪声预测恒为零的去噪器."""
    sizes = [latent_dim + 16, 8, latent_dim]
    mlp = Mlp(
        weights=[np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
        biases=[np.zeros(o) for o in sizes[1:]],
        activation=Activation.TANH,
    )
    return Denoiser(mlp=mlp, latent_dim=latent_dim)


@pytest.fixture
def quadrants():
    return standard_world("quadrants2d")


@pytest.fixture
def axes8d():
    return standard_world("axes8d")


@pytest.fixture
def schedule():
    return make_schedule(100, 1e-3, 0.2)


@pytest.fixture(scope="session")
def trained_quadrants():
    """在象限世界上训练的去噪器, 供较慢的测试共享."""
    world = standard_world("quadrants2d")
    data = sample_dataset(world, 8000, make_rng(11, "world"))
    s = make_schedule(100, 1e-3, 0.2)
    rng = make_rng(11, "train")
    net = Denoiser.create(2, rng, hidden=(64, 64))
    result = train_denoiser(s, data, net, steps=4000, batch=256, lr=2e-3, rng=rng, log_every=0)
    return world, data, s, result


@pytest.fixture(scope="session")
def trained_axes8d():
    """在八维坐标轴世界上训练的去噪器."""
    world = standard_world("axes8d")
    data = sample_dataset(world, 8000, make_rng(12, "world"))
    s = make_schedule(100, 1e-3, 0.2)
    rng = make_rng(12, "train")
    net = Denoiser.create(8, rng, hidden=(64, 64))
    result = train_denoiser(s, data, net, steps=4000, batch=256, lr=2e-3, rng=rng, log_every=0)
    return world, data, s, result
