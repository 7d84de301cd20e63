"""Writers for run artifacts: delimited output plus plain-text summary.

A run directory holds the raw metrics (JSON), the derived CSV tables, a
summary, the echoed effective config, and rendered figures. Regenerating
from unchanged raw metrics reproduces every derived file byte for byte.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import List, Optional, Sequence

import yaml

from .metrics import CarbonRow, MetricsReport, overhead_per_tx, round_micro
from .netsim import SweepRow


def _f(x: float, places: int = 6) -> str:
    return f"{x:.{places}f}"


def run_csv(report: MetricsReport) -> str:
    overhead = overhead_per_tx(report, report.finalized)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        [
            "scenario",
            "platform",
            "managers",
            "clients",
            "duration_s",
            "seed",
            "generated",
            "finalized",
            "invalidated",
            "pending",
            "validated_tps",
            "mean_latency_ms",
            "p50_latency_ms",
            "p99_latency_ms",
            "manager_bytes_per_tx",
            "client_bytes_per_tx",
            "total_energy_kwh",
            "total_ghg_kg",
        ]
    )
    lat = report.latency
    w.writerow(
        [
            report.scenario_name,
            report.platform,
            report.managers,
            report.clients,
            _f(report.duration_s, 3),
            report.seed,
            report.generated,
            report.finalized,
            report.invalidated,
            report.pending,
            _f(report.validated_tps),
            _f(lat.mean_ms) if lat else "",
            _f(lat.p50_ms) if lat else "",
            _f(lat.p99_ms) if lat else "",
            _f(overhead["manager"]) if overhead["manager"] is not None else "",
            _f(overhead["client"]) if overhead["client"] is not None else "",
            _f(report.total_energy_nkwh() / 1e9, 9),
            _f(report.total_ghg_nkg() / 1e9, 9),
        ]
    )
    return buf.getvalue()


def nodes_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        [
            "node_id",
            "role",
            "bytes_sent",
            "bytes_received",
            "cpu_fraction",
            "cpu_saturated",
            "energy_kwh",
            "ghg_kg",
        ]
    )
    for nid in sorted(report.nodes):
        nm = report.nodes[nid]
        w.writerow(
            [
                nid,
                nm.role,
                nm.bytes_sent,
                nm.bytes_received,
                _f(nm.cpu_fraction),
                int(nm.cpu_saturated),
                _f(nm.energy_kwh, 9),
                _f(nm.ghg_kg, 9),
            ]
        )
    return buf.getvalue()


def summary_text(report: MetricsReport) -> str:
    overhead = overhead_per_tx(report, report.finalized)
    lines = [
        f"scenario {report.scenario_name} | platform {report.platform} | seed {report.seed}",
        f"managers {report.managers} | clients {report.clients} | duration {_f(report.duration_s, 3)} s",
        (
            f"transactions: generated {report.generated}, finalized {report.finalized}, "
            f"invalidated {report.invalidated}, pending {report.pending}"
        ),
        f"validated tps: {_f(report.validated_tps)}",
    ]
    if report.latency:
        lines.append(
            "latency ms: mean "
            + _f(report.latency.mean_ms)
            + " | p50 "
            + _f(report.latency.p50_ms)
            + " | p99 "
            + _f(report.latency.p99_ms)
        )
    else:
        lines.append("latency ms: no finalized transactions")
    if overhead["manager"] is not None:
        lines.append(
            "bytes per finalized tx: manager "
            + _f(overhead["manager"])
            + " | client "
            + _f(overhead["client"])
        )
    lines.append(
        "energy total " + _f(report.total_energy_nkwh() / 1e9, 9) + " kWh | "
        "ghg total " + _f(report.total_ghg_nkg() / 1e9, 9) + " kg CO2-eq"
    )
    lines.append("per node:")
    for nid in sorted(report.nodes):
        nm = report.nodes[nid]
        lines.append(
            f"  {nid} ({nm.role}): sent {nm.bytes_sent} B, recv {nm.bytes_received} B, "
            f"cpu {_f(nm.cpu_fraction)}"
            + (" (saturated)" if nm.cpu_saturated else "")
            + f", energy {_f(nm.energy_kwh, 9)} kWh, ghg {_f(nm.ghg_kg, 9)} kg"
        )
    return "\n".join(lines) + "\n"


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        [
            "platform",
            "managers",
            "clients",
            "load_tps",
            "validated_tps",
            "mean_latency_ms",
            "p99_latency_ms",
            "manager_bytes_per_tx",
            "client_bytes_per_tx",
        ]
    )
    for r in rows:
        w.writerow(
            [
                r.platform,
                r.managers,
                r.clients,
                _f(r.load_tps, 3),
                _f(r.validated_tps),
                _f(r.mean_latency_ms),
                _f(r.p99_latency_ms),
                _f(r.manager_bytes_per_tx),
                _f(r.client_bytes_per_tx),
            ]
        )
    return buf.getvalue()


def carbon_csv(rows: Sequence[CarbonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        [
            "platform",
            "power_kw",
            "energy_avg_kwh",
            "cpu_percent",
            "energy_blockchain_kwh",
            "intensity_kg_per_kwh",
            "ghg_kg",
            "ghg_micro_kg",
        ]
    )
    for r in rows:
        w.writerow(
            [
                r.platform,
                _f(r.power_kw, 3),
                _f(r.energy_avg_kwh, 3),
                _f(r.cpu_percent, 4),
                _f(r.energy_blockchain_kwh, 9),
                _f(r.intensity, 3),
                _f(r.ghg_kg, 9),
                round_micro(r.ghg_kg),
            ]
        )
    return buf.getvalue()


def agreements_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["agreement_id", "machine_id", "customer", "t_matched", "t_settled", "amount"])
    for agreement_id, machine_id, customer, t_matched, t_settled, amount in rows:
        w.writerow(
            [
                agreement_id,
                machine_id,
                customer,
                t_matched,
                "" if t_settled is None else t_settled,
                "" if amount is None else amount,
            ]
        )
    return buf.getvalue()


def channels_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel_id", "seq", "balance_a", "balance_b", "time_ms"])
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def write_run_dir(
    outdir: Path,
    report: MetricsReport,
    effective_config: dict,
    agreements: Optional[list] = None,
    channels: Optional[list] = None,
    figures: bool = True,
) -> List[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str) -> None:
        path = outdir / name
        path.write_text(text)
        written.append(path)

    put("raw_metrics.json", report.to_json() + "\n")
    put("effective_config.yaml", yaml.safe_dump(effective_config, sort_keys=True))
    put("report.csv", run_csv(report))
    put("nodes.csv", nodes_csv(report))
    put("summary.txt", summary_text(report))
    if agreements is not None:
        put("marketplace_agreements.csv", agreements_csv(agreements))
    if channels is not None:
        put("marketplace_channels.csv", channels_csv(channels))
    if figures:
        from .figures import render_run_figures

        written.extend(render_run_figures(report, outdir))
    return written


def regenerate_run_dir(outdir: Path, figures: bool = True) -> List[Path]:
    """Re-derive CSVs, summary, and figures from stored raw metrics."""
    raw = outdir / "raw_metrics.json"
    report = MetricsReport.from_json(raw.read_text())
    written = []
    for name, text in (
        ("report.csv", run_csv(report)),
        ("nodes.csv", nodes_csv(report)),
        ("summary.txt", summary_text(report)),
    ):
        path = outdir / name
        path.write_text(text)
        written.append(path)
    if figures:
        from .figures import render_run_figures

        written.extend(render_run_figures(report, outdir))
    return written
