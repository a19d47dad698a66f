import io
import logging
from pathlib import Path
from typing import Dict, Optional, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.ticker import FuncFormatter
import numpy as np

from config import config
from storage.snapshots import read_timeseries

logger = logging.getLogger(__name__)

# Стиль графика
plt.rcParams.update({
    "figure.facecolor": "#1a1a2e",
    "axes.facecolor": "#16213e",
    "axes.edgecolor": "#e94560",
    "axes.labelcolor": "#eee",
    "text.color": "#eee",
    "xtick.color": "#aaa",
    "ytick.color": "#aaa",
    "grid.color": "#333",
    "grid.alpha": 0.3,
    "font.size": 10,
})

ENERGY_COLUMNS = {
    "kinetic": "#00d2ff",
    "pressure_potential": "#ffcc00",
    "polymer": "#00ff88",
    "stress_trace": "#e94560",
}
DISSIPATION_COLUMNS = {
    "eta_dissipation": "#00ff88",
    "viscous_dissipation": "#00d2ff",
    "barrier_dissipation": "#ffcc00",
    "stress_relaxation": "#e94560",
}


def _sci_formatter(x, pos):
    """Компактная запись на оси Y"""
    if x == 0:
        return "0"
    if 1e-2 <= abs(x) < 1e4:
        return f"{x:.3g}"
    return f"{x:.1e}"


def _plot_group(ax, data: Dict[str, np.ndarray], columns: Dict[str, str], title: str):
    t = data["time"]
    for name, color in columns.items():
        if name in data:
            ax.plot(t, data[name], color=color, linewidth=2, label=name)
    ax.set_title(title, fontsize=12, fontweight="bold")
    ax.yaxis.set_major_formatter(FuncFormatter(_sci_formatter))
    ax.legend(loc="best", fontsize=8, framealpha=0.7, facecolor="#1a1a2e", edgecolor="#444")
    ax.grid(True, alpha=0.2)


def render_timeseries(data: Dict[str, np.ndarray], title: str = "Energy ledger") -> io.BytesIO:
    """
    Четыре панели: энергия, диссипация, мониторы положительности
    и (для двойного прогона) относительная энтропия.
    Возвращает BytesIO с PNG.
    """
    fig, axes = plt.subplots(2, 2, figsize=(13, 8), sharex=True)
    _plot_group(axes[0, 0], data, ENERGY_COLUMNS, "Energy")
    _plot_group(axes[0, 1], data, DISSIPATION_COLUMNS, "Dissipation")

    ax = axes[1, 0]
    t = data["time"]
    ax.plot(t, data["min_eig_T"], color="#e94560", linewidth=2, label="min eig T")
    ax.plot(t, data["min_rho"], color="#00d2ff", linewidth=1.5, label="min rho")
    ax.plot(t, data["min_eta"], color="#00ff88", linewidth=1.5, label="min eta")
    ax.plot(t, data["max_div_u_b"], color="#ffcc00", linewidth=1.5, linestyle="--", label="b·max|div u|")
    ax.axhline(y=0.0, color="#888", linewidth=1, linestyle=":", alpha=0.5)
    ax.axhline(y=1.0, color="#ffcc00", linewidth=1, linestyle=":", alpha=0.5)
    ax.set_title("Admissibility", fontsize=12, fontweight="bold")
    ax.legend(loc="best", fontsize=8, framealpha=0.7, facecolor="#1a1a2e", edgecolor="#444")
    ax.grid(True, alpha=0.2)

    ax = axes[1, 1]
    if "total" in data:
        total = np.maximum(data["total"], np.finfo(float).tiny)
        ax.semilogy(t, total, color="#00d2ff", linewidth=2, label="E1 + E2 + stress gap")
        ax.set_title("Relative entropy", fontsize=12, fontweight="bold")
    else:
        ax.plot(t, data["dt_used"], color="#00d2ff", linewidth=2, label="dt used")
        ax.set_title("Time step", fontsize=12, fontweight="bold")
        ax.yaxis.set_major_formatter(FuncFormatter(_sci_formatter))
    ax.legend(loc="best", fontsize=8, framealpha=0.7, facecolor="#1a1a2e", edgecolor="#444")
    ax.grid(True, alpha=0.2)

    for ax in axes[1]:
        ax.set_xlabel("t")
    fig.suptitle(title, fontsize=15, fontweight="bold")
    plt.tight_layout()

    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=config.chart.dpi, bbox_inches="tight")
    buf.seek(0)
    plt.close(fig)
    return buf


def plot_timeseries(csv_path: Union[str, Path], png_path: Optional[Union[str, Path]] = None) -> Path:
    csv_path = Path(csv_path)
    png_path = Path(png_path) if png_path is not None else csv_path.with_suffix(".png")
    data = read_timeseries(csv_path)
    if data["time"].size == 0:
        logger.warning(f"{csv_path} has no rows, chart will be empty")
    buf = render_timeseries(data, title=csv_path.parent.name or "Energy ledger")
    png_path.write_bytes(buf.getvalue())
    logger.info(f"Chart saved to {png_path}")
    return png_path
