"""Report figures: median delay-ratio bars per grid point and space-time
density heatmaps with CAV trajectories."""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .ctm import RoadParams  # noqa: E402
from .harness import ALL_CASES, BatchResult, ControlCase, RunRecord  # noqa: E402

CASE_COLORS = {
    ControlCase.PREDEFINED: "tab:blue",
    ControlCase.ADAPTIVE: "tab:green",
    ControlCase.ALL_CAVS: "tab:orange",
    ControlCase.FULL_INFO: "tab:red",
}
ROLE_COLORS = {"inactive": "black", "probe": "green", "actuator": "red"}


def plot_batch(result: BatchResult, path: str) -> None:
    """One panel per G; grouped bars of the median delay ratio over p_p."""
    spec = result.spec
    cases = [c for c in ALL_CASES if c in CASE_COLORS and c in spec.cases]
    n = len(spec.G_values)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), sharey=True, squeeze=False)
    width = 0.8 / max(len(cases), 1)
    x = np.arange(len(spec.p_p_values))
    for ax, G in zip(axes[0], spec.G_values):
        for k, case in enumerate(cases):
            med = [result.median(case, G, pp) for pp in spec.p_p_values]
            med = [np.nan if m is None else m for m in med]
            ax.bar(x + (k - (len(cases) - 1) / 2) * width, med, width,
                   color=CASE_COLORS[case], label=case.value)
        ax.axhline(1.0, color="grey", lw=0.8, ls="--")
        ax.set_xticks(x)
        ax.set_xticklabels([f"{pp:g}" for pp in spec.p_p_values])
        ax.set_xlabel("$p_p$")
        ax.set_title(f"G = {G:g} km")
    axes[0][0].set_ylabel("median delay ratio")
    axes[0][0].legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _heatmap(ax, matrix, params: RoadParams, title: str):
    n_steps = matrix.shape[0] - 1
    im = ax.imshow(matrix.T, origin="lower", aspect="auto", vmin=0, vmax=params.P,
                   extent=[0, n_steps * params.T, 0, params.length], cmap="viridis")
    ax.set_xlabel("t (h)")
    ax.set_ylabel("x (km)")
    ax.set_title(title, fontsize=9)
    return im


def _trajectories(ax, cav_trace, params: RoadParams):
    """Actuators in red, probes in green, temporarily activated CAVs dashed."""
    tracks = {}
    for t, cavs in enumerate(cav_trace, start=1):
        for cid, pos, role, _cmd, sensing in cavs:
            tr = tracks.setdefault(cid, (role, [], [], []))
            tr[1].append(t * params.T)
            tr[2].append(pos)
            tr[3].append(sensing)
    for role, ts, ys, sensing in tracks.values():
        if role != "inactive":
            ax.plot(ts, ys, "-", color=ROLE_COLORS[role], lw=0.5, alpha=0.7)
            continue
        on = np.asarray(sensing)
        if on.any() and not on.all():
            y = np.where(on, ys, np.nan)
            ax.plot(ts, y, "--", color="lime", lw=0.8)


def plot_run(record: RunRecord, path: str, params: Optional[RoadParams] = None) -> None:
    """True density (and the estimate, when one exists) over space and time."""
    p = params or RoadParams()
    if record.rho_trace is None:
        raise ValueError("record has no density trace; run with keep_trace=True")
    has_hat = record.rho_hat_trace is not None and not np.isnan(record.rho_hat_trace[1:]).all()
    ncols = 2 if has_hat and record.case is not ControlCase.FULL_INFO else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5.5 * ncols, 3.6), squeeze=False, layout="constrained")
    im = _heatmap(axes[0][0], record.rho_trace, p, f"{record.case.value}: density")
    if record.cav_trace:
        _trajectories(axes[0][0], record.cav_trace, p)
    if ncols == 2:
        _heatmap(axes[0][1], record.rho_hat_trace, p, f"{record.case.value}: reconstruction")
    fig.colorbar(im, ax=axes[0].tolist(), label="density (veh/km)")
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_runs(records: Sequence[RunRecord], path: str, params: Optional[RoadParams] = None) -> None:
    """Side-by-side true-density heatmaps of several cases on one scenario."""
    p = params or RoadParams()
    n = len(records)
    fig, axes = plt.subplots(1, n, figsize=(3.6 * n, 3.2), squeeze=False, layout="constrained")
    im = None
    for ax, rec in zip(axes[0], records):
        im = _heatmap(ax, rec.rho_trace, p, rec.case.value)
        if rec.cav_trace:
            _trajectories(ax, rec.cav_trace, p)
    if im is not None:
        fig.colorbar(im, ax=axes[0].tolist(), label="density (veh/km)")
    fig.savefig(path, dpi=110)
    plt.close(fig)
