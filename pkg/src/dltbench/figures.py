"""Figure rendering for the report path.

Every CSV the CLI writes gets a figure next to it: per-node traffic and CPU
for single runs, throughput-vs-managers for sweeps, and the per-platform
emission bars for the carbon table. PNG output is deterministic for a fixed
matplotlib version, which keeps report regeneration idempotent.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import CarbonRow, MetricsReport


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def render_run_figures(report: MetricsReport, outdir: Path) -> List[Path]:
    nodes = sorted(report.nodes)
    sent = [report.nodes[n].bytes_sent / 1024.0 for n in nodes]
    recv = [report.nodes[n].bytes_received / 1024.0 for n in nodes]
    x = range(len(nodes))

    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.4
    ax.bar([i - width / 2 for i in x], sent, width, label="sent")
    ax.bar([i + width / 2 for i in x], recv, width, label="received")
    ax.set_xticks(list(x))
    ax.set_xticklabels(nodes, rotation=30, ha="right")
    ax.set_ylabel("traffic [KiB]")
    ax.set_title(f"{report.platform}: per-node traffic ({report.scenario_name})")
    ax.legend()
    fig.tight_layout()
    paths = [_save(fig, outdir / "figures" / "bytes_per_node.png")]

    fig, ax = plt.subplots(figsize=(7, 4))
    cpu = [100.0 * report.nodes[n].cpu_fraction for n in nodes]
    ax.bar(list(x), cpu, color="tab:orange")
    ax.set_xticks(list(x))
    ax.set_xticklabels(nodes, rotation=30, ha="right")
    ax.set_ylabel("CPU usage [%]")
    ax.set_title(f"{report.platform}: per-node CPU ({report.scenario_name})")
    fig.tight_layout()
    paths.append(_save(fig, outdir / "figures" / "cpu_per_node.png"))
    return paths


def render_sweep_figure(rows: Sequence, outdir: Path) -> Path:
    loads = sorted({r.load_tps for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for load in loads:
        pts = sorted((r.managers, r.validated_tps) for r in rows if r.load_tps == load)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{load:g} tps in")
    ax.set_xlabel("managers")
    ax.set_ylabel("validated tps")
    ax.set_title("validated throughput vs manager count")
    ax.legend()
    fig.tight_layout()
    return _save(fig, outdir / "figures" / "tps_vs_managers.png")


def render_carbon_figure(rows: Sequence[CarbonRow], outdir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    platforms = [r.platform for r in rows]
    micro = [r.ghg_kg * 1e6 for r in rows]
    ax.bar(platforms, micro, color="tab:green")
    ax.set_yscale("log")
    ax.set_ylabel("GHG emission [1e-6 kg CO2-eq / h]")
    ax.set_title("carbon footprint per platform")
    fig.tight_layout()
    return _save(fig, outdir / "figures" / "ghg_per_platform.png")
