import numpy as np
import pytest

from dgiga.assembly import DGSpace
from dgiga.geometry import build_layout, build_meshes


def make_space(domain, boxes, degrees, elements, nuclei=None, **kw):
    """DG space from per-patch degrees and element counts (scalars broadcast)."""
    layout = build_layout(domain, boxes, nuclei)
    n = len(boxes)
    deg = degrees if isinstance(degrees, list) else [degrees] * n
    ele = elements if isinstance(elements, list) else [elements] * n
    return DGSpace(layout, build_meshes(layout, deg, ele), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
