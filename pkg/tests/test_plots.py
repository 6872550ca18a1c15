# tests/test_plots.py
import math

import numpy as np
import pandas as pd
import pytest

from pani_lab import plots
from pani_lab.common.utils import write_csv_with_echo


def _csv(tmp_path, name, frame):
    return write_csv_with_echo(frame, tmp_path / name, "0" * 64)


def test_landscape_1d_and_2d(tmp_path):
    """Both action dimensions render to PNG."""
    a = np.linspace(-1, 1, 11)
    one = _csv(tmp_path, "l1.csv", pd.DataFrame({"a1": a, "q": -(a**2)}))
    aa, bb = np.meshgrid(a, a, indexing="ij")
    two = _csv(tmp_path, "l2.csv", pd.DataFrame({"a1": aa.ravel(), "a2": bb.ravel(), "q": -(aa**2 + bb**2).ravel()}))

    for src in (one, two):
        out = plots.plot_landscape(src, tmp_path / "fig" / f"{src.stem}.png")
        assert out.is_file() and out.stat().st_size > 0


def test_modes_metrics_and_sweep(tmp_path):
    modes = _csv(
        tmp_path,
        "modes.csv",
        pd.DataFrame({"family": ["gaussian"] * 3, "variance": [0.5, 0.75, 1.0], "modes": [2, 2, 1]}),
    )
    metrics = _csv(
        tmp_path,
        "metrics.csv",
        pd.DataFrame(
            {
                "step": [5, 10],
                "critic_loss": [1.0, 0.5],
                "actor_loss": [math.nan, -0.2],
                "value_loss": [math.nan, math.nan],
                "eval_return": [0.1, 0.3],
            }
        ),
    )
    sweep = _csv(
        tmp_path,
        "summary.csv",
        pd.DataFrame(
            {
                "family": ["gaussian", "gaussian", "hybrid"],
                "log_sigma": [-1.0, -5.0, -1.0],
                "mean_return": [0.5, 0.4, 0.6],
                "se_return": [0.01, math.nan, 0.02],
            }
        ),
    )

    assert plots.plot_modes(modes, tmp_path / "modes.png").is_file()
    assert plots.plot_metrics(metrics, tmp_path / "metrics.png").is_file()
    assert plots.plot_sweep(sweep, tmp_path / "sweep.png").is_file()


def test_missing_columns_are_reported(tmp_path):
    src = _csv(tmp_path, "bad.csv", pd.DataFrame({"a1": [0.0]}))

    with pytest.raises(ValueError, match="missing columns: q"):
        plots.plot_landscape(src, tmp_path / "bad.png")
