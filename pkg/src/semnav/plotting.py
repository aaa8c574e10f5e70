"""Static figures: trajectories over the explored grid, policy comparisons, field heatmaps."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .world import FREE, OCCUPIED  # noqa: E402

# PNG metadata off so repeated renders are byte-stable
_SAVE = {"dpi": 110, "metadata": {"Software": None}}


def _grid_image(grid) -> np.ndarray:
    img = np.full(grid.cells.shape, 0.55)
    img[grid.cells == FREE] = 1.0
    img[grid.cells == OCCUPIED] = 0.1
    return img


def plot_trajectory(result, path, scene=None, title: str | None = None) -> Path:
    """Agent path over the final explored grid with frontier scores colormapped."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    if result.grid is not None:
        g = result.grid
        ax.imshow(_grid_image(g), cmap="gray", vmin=0, vmax=1, origin="lower",
                  extent=(0, g.width * g.resolution, 0, g.height * g.resolution), interpolation="nearest")
    traj = np.asarray(result.trajectory, dtype=float)
    if len(traj):
        ax.plot(traj[:, 0], traj[:, 1], color="tab:blue", lw=1.4, label="agent")
        ax.plot(traj[0, 0], traj[0, 1], "o", color="tab:green", ms=6, label="start")
        ax.plot(traj[-1, 0], traj[-1, 1], "s", color="tab:red", ms=6, label="end")
    if result.final_frontiers:
        fr = np.asarray(result.final_frontiers, dtype=float)
        sc = ax.scatter(fr[:, 0], fr[:, 1], c=fr[:, 2], cmap="viridis", s=36, edgecolors="k",
                        linewidths=0.5, vmin=0.0, vmax=max(1e-9, float(fr[:, 2].max())), zorder=3)
        fig.colorbar(sc, ax=ax, label="frontier score")
    if scene is not None:
        for obj in scene.objects:
            x0, y0, x1, y1 = obj.box()
            ax.add_patch(plt.Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, lw=0.8, ec="tab:orange"))
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title or f"{result.episode_id} ({result.policy}): {result.outcome}")
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_policy_comparison(named_metrics: dict, path) -> Path:
    """Grouped SR / SPL bars per policy."""
    path = Path(path)
    names = list(named_metrics)
    sr = [named_metrics[n].sr for n in names]
    spl = [named_metrics[n].spl for n in names]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(names), 3.6))
    ax.bar(x - 0.18, sr, 0.36, label="SR", color="tab:blue")
    ax.bar(x + 0.18, spl, 0.36, label="SPL", color="tab:orange")
    ax.set_xticks(x, names)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def field_to_pixels(field: np.ndarray, vmax: float) -> np.ndarray:
    """Fixed-scale 8-bit quantisation, flipped so +y points up in the image."""
    if not vmax > 0:
        raise ValueError("vmax must be positive")
    scaled = np.clip(field / vmax, 0.0, 1.0)
    return np.flipud(np.round(scaled * 255.0).astype(np.uint8))


def write_pgm(path, pixels: np.ndarray) -> Path:
    """Binary greyscale PGM (P5); byte-identical for identical input."""
    path = Path(path)
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
