import numpy as np
import pytest

pytest.importorskip("matplotlib")

from afred import plotting  # noqa: E402
from afred.models import make_classical_parabola, make_toy_shrink  # noqa: E402
from afred.reduction import reduce_grid, regularity_profile  # noqa: E402


def test_plot_grid_and_save(tmp_path):
    res = reduce_grid(make_toy_shrink(), [np.array([0.25, 0.01]), np.array([0.0, 0.01])],
                      [[k] for k in np.linspace(-0.04, 0.04, 5)])
    ax = plotting.plot_grid(res)
    assert len(ax.lines) == 3
    path = plotting.save(ax, tmp_path / "grid.png")
    assert path.stat().st_size > 0


def test_plot_profile(tmp_path):
    rep = regularity_profile(make_classical_parabola(), [(), ()], [[0.0], [0.05]], order=1)
    ax = plotting.plot_profile(rep)
    assert len(ax.lines) == len(rep.details["columns"])
    plotting.save(ax, tmp_path / "profile.png")
