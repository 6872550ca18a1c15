from pathlib import Path

from loguru import logger
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import typer

from pani_lab.common.utils import read_echo_csv
from pani_lab.config import FIGURES_DIR

app = typer.Typer(help="Render exported CSVs as PNG figures.", no_args_is_help=True)

LOSS_COLUMNS = ("critic_loss", "actor_loss", "value_loss")


def _require(frame: pd.DataFrame, columns: list[str], path: Path) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} is missing columns: {', '.join(missing)}")


def _save(fig, output_path: Path) -> Path:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(output_path, dpi=150)
    plt.close(fig)
    logger.success(f"Figure written to {output_path}")
    return output_path


def plot_landscape(input_path: Path, output_path: Path) -> Path:
    """Q over the action grid: a curve for 1-D actions, filled contours for 2-D."""
    frame = read_echo_csv(input_path)
    _require(frame, ["a1", "q"], input_path)
    fig, ax = plt.subplots(figsize=(5, 4))
    if "a2" in frame.columns:
        contour = ax.tricontourf(frame["a1"], frame["a2"], frame["q"], levels=30, cmap="viridis")
        fig.colorbar(contour, ax=ax, label="Q")
        ax.set_xlabel("a1")
        ax.set_ylabel("a2")
    else:
        ordered = frame.sort_values("a1")
        ax.plot(ordered["a1"], ordered["q"])
        ax.set_xlabel("action")
        ax.set_ylabel("Q")
    ax.set_title("Q landscape")
    return _save(fig, output_path)


def plot_modes(input_path: Path, output_path: Path) -> Path:
    frame = read_echo_csv(input_path)
    _require(frame, ["family", "variance", "modes"], input_path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for family, block in frame.groupby("family", sort=True):
        ax.plot(block["variance"], block["modes"], marker="o", label=str(family))
    ax.set_xlabel("noise variance")
    ax.set_ylabel("modes of noised behaviour density")
    ax.yaxis.get_major_locator().set_params(integer=True)
    ax.legend()
    return _save(fig, output_path)


def plot_metrics(input_path: Path, output_path: Path) -> Path:
    frame = read_echo_csv(input_path)
    _require(frame, ["step"], input_path)
    losses = [c for c in LOSS_COLUMNS if c in frame.columns and frame[c].notna().any()]
    has_return = "eval_return" in frame.columns and frame["eval_return"].notna().any()
    fig, axes = plt.subplots(1, 2 if has_return else 1, figsize=(10 if has_return else 5, 3.5), squeeze=False)
    for column in losses:
        axes[0, 0].plot(frame["step"], frame[column], label=column)
    axes[0, 0].set_xlabel("step")
    axes[0, 0].set_yscale("symlog")
    axes[0, 0].legend()
    if has_return:
        axes[0, 1].plot(frame["step"], frame["eval_return"])
        axes[0, 1].set_xlabel("step")
        axes[0, 1].set_ylabel("discounted return")
    return _save(fig, output_path)


def plot_sweep(input_path: Path, output_path: Path) -> Path:
    """Mean return with standard-error bars against log sigma, one line per family."""
    frame = read_echo_csv(input_path)
    _require(frame, ["family", "log_sigma", "mean_return", "se_return"], input_path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for family, block in frame.groupby("family", sort=True):
        block = block.sort_values("log_sigma")
        ax.errorbar(block["log_sigma"], block["mean_return"], yerr=np.nan_to_num(block["se_return"]),
                    marker="o", capsize=3, label=str(family))
    ax.set_xlabel("log sigma")
    ax.set_ylabel("mean discounted return")
    ax.legend()
    return _save(fig, output_path)


@app.command()
def landscape(input_path: Path, output_path: Path = FIGURES_DIR / "landscape.png"):
    plot_landscape(input_path, output_path)


@app.command()
def modes(input_path: Path, output_path: Path = FIGURES_DIR / "modes.png"):
    plot_modes(input_path, output_path)


@app.command()
def metrics(input_path: Path, output_path: Path = FIGURES_DIR / "metrics.png"):
    plot_metrics(input_path, output_path)


@app.command()
def sweep(input_path: Path, output_path: Path = FIGURES_DIR / "sweep.png"):
    plot_sweep(input_path, output_path)


if __name__ == "__main__":
    app()
