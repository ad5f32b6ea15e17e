import numpy as np
import pytest

from drillvox.volume import LabeledVolume, Segment, SegmentTable


def make_table(sensitive_label=None):
    table = SegmentTable()
    table.add(1, Segment("Bone", (0.8, 0.8, 0.7), False))
    table.add(2, Segment("Facial Nerve", (1.0, 1.0, 0.0), sensitive_label == 2))
    table.add(3, Segment("Sigmoid Sinus", (0.0, 0.0, 1.0), sensitive_label == 3))
    return table


def make_volume(dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
                labels=None, table=None):
    if labels is None:
        labels = np.zeros(dims, dtype=np.uint16)
    if table is None:
        table = make_table()
    return LabeledVolume(tuple(dims), spacing, origin, labels, table)


@pytest.fixture
def solid_cube():
    dims = (16, 16, 16)
    return make_volume(dims, labels=np.ones(dims, dtype=np.uint16))


@pytest.fixture
def bone_and_nerve():
    """16^3 grid: bone everywhere, a sensitive nerve column at i in [6,9]."""
    dims = (16, 16, 16)
    labels = np.ones(dims, dtype=np.uint16)
    labels[6:10, 6:10, :] = 2
    return make_volume(dims, labels=labels, table=make_table(sensitive_label=2))
