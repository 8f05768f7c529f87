import numpy as np
import pytest

from tractshape.geometry import FiberCluster


def line_streamline(start, end, n=2):
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return start + t * (end - start)


def quarter_circle(radius=10.0, n=1000):
    theta = np.linspace(0.0, np.pi / 2, n)
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta),
                            np.zeros_like(theta)])


@pytest.fixture
def simple_cluster():
    return FiberCluster(
        id="c0",
        subject_id="s0",
        streamlines=[line_streamline((0, 0, 0), (3, 4, 0)),
                     line_streamline((0, 0, 0), (2, 0, 0), n=3)],
    )


def random_cluster(rng, n_streamlines=5, n_points=20, scale=30.0):
    streamlines = []
    for _ in range(n_streamlines):
        start = rng.uniform(-scale, scale, 3)
        steps = rng.normal(0, 1.0, (n_points - 1, 3))
        streamlines.append(np.vstack([start, start + np.cumsum(steps, axis=0)]))
    return FiberCluster(id="rand", subject_id="s", streamlines=streamlines)
