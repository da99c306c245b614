"""Optional figures next to the CSV outputs; needs the ``plot`` extra."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("figures need matplotlib: pip install 'hirdiff[plot]'") from exc
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "hirdiff"
    import matplotlib.pyplot as plt

    return plt


_NO_STAMPS = {".png": {"Software": None}, ".svg": {"Date": None}, ".pdf": {"CreationDate": None}}


def _save(fig, path) -> None:
    # drop timestamps and version stamps so repeated writes are byte-identical
    fig.savefig(path, dpi=120, metadata=_NO_STAMPS.get(Path(path).suffix.lower()))


def plot_schedules(schedules: Mapping[str, Sequence[tuple[int, float]]], path, log: bool = True) -> None:
    """alpha_bar against step for each named schedule."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, rows in schedules.items():
        t, a = zip(*rows)
        ax.plot(t, a, marker=".", label=name)
    if log:
        ax.set_yscale("log")
    ax.set_xlabel("step t")
    ax.set_ylabel("cumulative alpha_bar")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_loss(losses: Sequence[float], path) -> None:
    """Guidance loss per reverse step, in the order the steps were taken."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    n = len(losses)
    ax.plot(range(n, 0, -1), losses, marker=".")
    ax.invert_xaxis()
    ax.set_yscale("log")
    ax.set_xlabel("step t (reverse order)")
    ax.set_ylabel("guidance loss")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
