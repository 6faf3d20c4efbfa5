"""Offline report figures rendered from the CSV/JSON artifacts of a run."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}


def read_csv(path):
    """Column dict of floats (empty cells become nan, non-numeric columns stay strings)."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    cols = {}
    for key in (rows[0] if rows else {}):
        vals = [r[key] for r in rows]
        try:
            cols[key] = np.array([float(v) if v != "" else np.nan for v in vals])
        except ValueError:
            cols[key] = np.array(vals)
    return cols


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path.name


def plot_rms(out):
    d = read_csv(out / "rms_per_step.csv")
    fig, ax = plt.subplots(figsize=(4.5, 3))
    for k, v in d.items():
        if k != "step":
            ax.plot(d["step"], v, label=k.replace("_rms", "").replace("agent", "agent "))
    ax.set_xlabel("prediction step")
    ax.set_ylabel("RMS error")
    ax.legend()
    return _save(fig, out / "rms_per_step.png")


def plot_prediction(out):
    d = read_csv(out / "prediction_example.csv")
    agents = sorted({k.split("_")[0] for k in d if k.startswith("agent")})
    fig, axes = plt.subplots(len(agents), 1, figsize=(5, 2.2 * len(agents)), sharex=True, squeeze=False)
    for ax, a in zip(axes[:, 0], agents):
        for c, color in ((1, "C0"), (2, "C1")):
            ax.plot(d["step"], d[f"{a}_true_x{c}"], color=color, label=f"x{c} true")
            ax.plot(d["step"], d[f"{a}_pred_x{c}"], color=color, ls="--", label=f"x{c} model")
        ax.set_ylabel(a.replace("agent", "agent "))
    axes[0, 0].legend(ncol=2)
    axes[-1, 0].set_xlabel("step")
    return _save(fig, out / "prediction_example.png")


def plot_growth(out):
    d = read_csv(out / "transient_growth.csv")
    fig, ax = plt.subplots(figsize=(4.5, 3))
    for k, v in d.items():
        if k != "k":
            ax.semilogy(d["k"], v, label=k)
    ax.set_xlabel("k")
    ax.set_ylabel(r"$\|A^k\|_2$")
    ax.legend()
    return _save(fig, out / "transient_growth.png")


def plot_objectives(out):
    s = json.loads((out / "control.json").read_text())
    agents = [a for a in s["agents"] if a["optimum"] is not None]
    if not agents:
        return None
    fig, ax = plt.subplots(figsize=(4.5, 3))
    width = 0.25
    x = np.arange(len(agents))
    for k, key in enumerate(("baseline", "equilibrium", "optimum")):
        ax.bar(x + (k - 1) * width, [a[key] for a in agents], width, label=key)
    ax.set_xticks(x, [f"agent {i + 1}" for i in range(len(agents))])
    ax.set_ylabel("mean objective")
    ax.legend()
    return _save(fig, out / "control_objectives.png")


def plot_control_example(out):
    p_opt, p_eq = out / "control_example_optimum.csv", out / "control_example_equilibrium.csv"
    if not (p_opt.exists() and p_eq.exists()):
        return None
    opt, eq = read_csv(p_opt), read_csv(p_eq)
    agents = sorted({k.split("_")[0] for k in opt if k.startswith("agent")})
    fig, axes = plt.subplots(2, len(agents), figsize=(4 * len(agents), 4.5), sharex=True, squeeze=False)
    for c, a in enumerate(agents):
        for key in (k for k in opt if k.startswith(a + "_x")):
            line, = axes[0, c].plot(opt["t"], opt[key], label=f"{key.split('_')[1]} optimum")
            axes[0, c].plot(eq["t"], eq[key], ls="--", color=line.get_color(), label=f"{key.split('_')[1]} equilibrium")
        for key in (k for k in opt if k.startswith(a + "_u")):
            axes[1, c].step(opt["t"], opt[key], where="post", label="optimum")
            axes[1, c].step(eq["t"], eq[key], where="post", ls="--", label="equilibrium")
        axes[0, c].set_title(a.replace("agent", "agent "))
        axes[1, c].set_xlabel("t (slow steps)")
    axes[0, 0].set_ylabel("state")
    axes[1, 0].set_ylabel("control")
    axes[0, 0].legend(fontsize=7)
    axes[1, 0].legend(fontsize=7)
    return _save(fig, out / "control_example.png")


def render_report(out):
    """Render every figure whose input artifact exists; returns the file names written."""
    out = Path(out)
    made = []
    with plt.rc_context(STYLE):
        for name, fn, needs in (("rms", plot_rms, "rms_per_step.csv"),
                                ("prediction", plot_prediction, "prediction_example.csv"),
                                ("growth", plot_growth, "transient_growth.csv"),
                                ("objectives", plot_objectives, "control.json"),
                                ("control", plot_control_example, "control_example_optimum.csv")):
            if (out / needs).exists():
                f = fn(out)
                if f:
                    made.append(f)
    return made
