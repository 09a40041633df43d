"""PNG summaries of check records, written next to the JSONL/CSV results."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _find(checks, module, name):
    return [c for c in checks if c["module"] == module and c["name"] == name and c["metrics"]]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_eigen(check: dict, path: Path) -> Path:
    m = check["metrics"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(m["N"], m["scaled_gap"], "o-", label="2dN^2(1 - lambda_N)")
    ax.axhline(m["target"], color="k", ls="--", label="pi^2")
    ax.axhline(m["limit"], color="C1", ls=":", label=f"extrapolated {m['limit']:.3f}")
    ax.set_xlabel("N")
    ax.legend()
    return _save(fig, path)


def plot_coupling(checks: list[dict], path: Path) -> Path:
    rows = sorted((c for c in checks), key=lambda c: c["N"])
    Ns = [c["N"] for c in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, label in (("frequency", "both inclusions"), ("left_frequency", "left"),
                       ("right_frequency", "right"), ("chain_left_frequency", "chain-level left"),
                       ("chain_right_frequency", "chain-level right")):
        ax.plot(Ns, [c["metrics"][key] for c in rows], "o-", label=label)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("N")
    ax.set_ylabel("frequency")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_confinement(check: dict, path: Path) -> Path:
    m = check["metrics"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key in ("ball", "annulus"):
        fit = m[key]
        x = [t / fit["size"] ** 2 for t in fit["T"]]
        ax.semilogy(x, [max(s, 1e-6) for s in fit["survival"]], "o", label=f"{key} MC")
        ax.semilogy(x, fit["exact"], "-", label=f"{key} exact")
    ax.set_xlabel("T / size^2")
    ax.set_ylabel("survival")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_gambler(check: dict, path: Path) -> Path:
    m = check["metrics"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(m["N"], m["deviation"], "o-")
    ax.axhline(0.25, color="k", ls="--")
    ax.set_xlabel("N")
    ax.set_ylabel("relative deviation from radial formula")
    return _save(fig, path)


def write_plots(checks: list[dict], out_dir: str | Path, prefix: str = "") -> list[Path]:
    """Write every plot the given check records support; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for c in _find(checks, "spectrum", "eigen_asymptotic"):
        written.append(plot_eigen(c, out / f"{prefix}eigen_asymptotic.png"))
    coupling = [c for c in _find(checks, "couple", "inclusion_frequency")
                if not math.isnan(c["metrics"].get("frequency") or math.nan)]
    if coupling:
        written.append(plot_coupling(coupling, out / f"{prefix}coupling_frequency.png"))
    for c in _find(checks, "estimates", "confinement_decay"):
        written.append(plot_confinement(c, out / f"{prefix}confinement_decay.png"))
    for c in _find(checks, "estimates", "gambler_ruin"):
        written.append(plot_gambler(c, out / f"{prefix}gambler_ruin.png"))
    return written
