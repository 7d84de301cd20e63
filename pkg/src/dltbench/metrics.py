"""Run metrics: throughput, latency, communication overhead, energy, carbon.

Energy and greenhouse-gas figures are computed on an exact integer grid
(nano-kWh / nano-kg) so golden-value comparisons and long accumulations are
drift-free; floats only appear at the display edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional

from .consensus import WorkLedger

NANO = 10**9


class MetricsError(Exception):
    pass


class OutOfRangeCpu(MetricsError):
    pass


def _frac(x) -> Fraction:
    """Exact decimal reading of a float/str/int (0.06 -> 3/50, not the
    binary float neighbourhood of 0.06)."""
    if isinstance(x, Fraction):
        return x
    return Fraction(str(x))


@dataclass(frozen=True)
class CarbonParams:
    """Electric power draw, grid carbon intensity, and accounting horizon."""

    machine_power_kw: float = 0.06
    ghg_intensity: float = 0.540  # kg CO2-eq per kWh
    horizon_hours: float = 1.0

    def __post_init__(self) -> None:
        if self.machine_power_kw <= 0 or self.ghg_intensity <= 0 or self.horizon_hours <= 0:
            raise ValueError("carbon parameters must be strictly positive")


def energy_nanokwh(params: CarbonParams, cpu_fraction) -> int:
    """Exact energy on the nano-kWh grid: power x horizon x cpu share."""
    cpu = _frac(cpu_fraction)
    if cpu < 0 or cpu > 1:
        raise OutOfRangeCpu(f"cpu fraction {cpu_fraction} outside [0, 1]")
    exact = _frac(params.machine_power_kw) * _frac(params.horizon_hours) * cpu * NANO
    return _round_half_up(exact)


def energy_for_operation(params: CarbonParams, cpu_fraction) -> float:
    """Energy in kWh for one node over the horizon at the given CPU share."""
    return energy_nanokwh(params, cpu_fraction) / NANO


def ghg_nanokg(energy_nkwh: int, intensity) -> int:
    """Exact emission on the nano-kg grid from nano-kWh energy."""
    if energy_nkwh < 0:
        raise ValueError("energy must be non-negative")
    return _round_half_up(Fraction(energy_nkwh) * _frac(intensity))


def ghg_emission(energy_kwh, intensity) -> float:
    """kg CO2-eq for the given energy and grid intensity."""
    e = _frac(energy_kwh)
    if e < 0:
        raise ValueError("energy must be non-negative")
    return ghg_nanokg(_round_half_up(e * NANO), intensity) / NANO


def _round_half_up(x: Fraction) -> int:
    num, den = x.numerator, x.denominator
    q, r = divmod(num, den)
    return q + (1 if 2 * r >= den else 0)


def round_micro(value: float) -> int:
    """Half-up rounding to integer micro-units, as the reported tables use."""
    return _round_half_up(_frac(value) * 10**6)


@dataclass(frozen=True)
class CpuUsage:
    fraction: float
    saturated: bool = False


def cpu_fraction_from_work(
    work: WorkLedger, node_id: str, cpu_capacity: float, duration_s: float
) -> CpuUsage:
    """Charged work over available work; clamped to 1 with a saturation flag."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    available = cpu_capacity * duration_s
    raw = work.units(node_id) / available if available > 0 else 0.0
    if raw > 1.0:
        return CpuUsage(fraction=1.0, saturated=True)
    return CpuUsage(fraction=raw, saturated=False)


@dataclass
class NodeMetrics:
    role: str  # "manager" | "client"
    bytes_sent: int = 0
    bytes_received: int = 0
    cpu_fraction: float = 0.0
    cpu_saturated: bool = False
    energy_nkwh: int = 0
    ghg_nkg: int = 0

    @property
    def energy_kwh(self) -> float:
        return self.energy_nkwh / NANO

    @property
    def ghg_kg(self) -> float:
        return self.ghg_nkg / NANO


@dataclass
class LatencyStats:
    mean_ms: float
    p50_ms: float
    p99_ms: float


def latency_stats(latencies_ms: List[float]) -> Optional[LatencyStats]:
    if not latencies_ms:
        return None
    ordered = sorted(latencies_ms)
    n = len(ordered)

    def nearest_rank(q: Fraction) -> float:
        idx = -(-(q * n) // 1)  # ceil on exact rationals
        return ordered[max(0, min(n - 1, int(idx) - 1))]

    return LatencyStats(
        mean_ms=sum(ordered) / n,
        p50_ms=nearest_rank(Fraction(1, 2)),
        p99_ms=nearest_rank(Fraction(99, 100)),
    )


@dataclass
class MetricsReport:
    """Everything one simulated run produced, ready for CSV/JSON export."""

    scenario_name: str
    platform: str
    managers: int
    clients: int
    duration_s: float
    seed: int
    generated: int
    finalized: int
    invalidated: int
    pending: int
    validated_tps: float
    latency: Optional[LatencyStats]
    nodes: Dict[str, NodeMetrics] = field(default_factory=dict)

    # -- totals (exact sums of parts) -----------------------------------------

    def total_bytes_sent(self) -> int:
        return sum(n.bytes_sent for n in self.nodes.values())

    def total_bytes_received(self) -> int:
        return sum(n.bytes_received for n in self.nodes.values())

    def total_energy_nkwh(self) -> int:
        return sum(n.energy_nkwh for n in self.nodes.values())

    def total_ghg_nkg(self) -> int:
        return sum(n.ghg_nkg for n in self.nodes.values())

    def role_bytes(self, role: str) -> int:
        return sum(
            n.bytes_sent + n.bytes_received for n in self.nodes.values() if n.role == role
        )

    def to_json(self) -> str:
        doc = {
            "scenario_name": self.scenario_name,
            "platform": self.platform,
            "managers": self.managers,
            "clients": self.clients,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "generated": self.generated,
            "finalized": self.finalized,
            "invalidated": self.invalidated,
            "pending": self.pending,
            "validated_tps": self.validated_tps,
            "latency": None
            if self.latency is None
            else {
                "mean_ms": self.latency.mean_ms,
                "p50_ms": self.latency.p50_ms,
                "p99_ms": self.latency.p99_ms,
            },
            "nodes": {
                nid: {
                    "role": nm.role,
                    "bytes_sent": nm.bytes_sent,
                    "bytes_received": nm.bytes_received,
                    "cpu_fraction": nm.cpu_fraction,
                    "cpu_saturated": nm.cpu_saturated,
                    "energy_nkwh": nm.energy_nkwh,
                    "ghg_nkg": nm.ghg_nkg,
                }
                for nid, nm in sorted(self.nodes.items())
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        lat = doc.get("latency")
        return cls(
            scenario_name=doc["scenario_name"],
            platform=doc["platform"],
            managers=doc["managers"],
            clients=doc["clients"],
            duration_s=doc["duration_s"],
            seed=doc["seed"],
            generated=doc["generated"],
            finalized=doc["finalized"],
            invalidated=doc["invalidated"],
            pending=doc["pending"],
            validated_tps=doc["validated_tps"],
            latency=None
            if lat is None
            else LatencyStats(lat["mean_ms"], lat["p50_ms"], lat["p99_ms"]),
            nodes={
                nid: NodeMetrics(
                    role=nm["role"],
                    bytes_sent=nm["bytes_sent"],
                    bytes_received=nm["bytes_received"],
                    cpu_fraction=nm["cpu_fraction"],
                    cpu_saturated=nm["cpu_saturated"],
                    energy_nkwh=nm["energy_nkwh"],
                    ghg_nkg=nm["ghg_nkg"],
                )
                for nid, nm in doc["nodes"].items()
            },
        )


def overhead_per_tx(report: MetricsReport, finalized_count: int) -> Dict[str, Optional[float]]:
    """Role-summed bytes per finalized transaction; absent when nothing
    finalized rather than infinite."""
    if finalized_count < 0:
        raise ValueError("finalized count cannot be negative")
    out: Dict[str, Optional[float]] = {}
    for role in ("manager", "client"):
        if finalized_count == 0:
            out[role] = None
        else:
            out[role] = report.role_bytes(role) / finalized_count
    return out


def apply_carbon(report: MetricsReport, params: CarbonParams) -> None:
    """Fill per-node energy and emission from their CPU fractions."""
    for nm in report.nodes.values():
        nm.energy_nkwh = energy_nanokwh(params, nm.cpu_fraction)
        nm.ghg_nkg = ghg_nanokg(nm.energy_nkwh, params.ghg_intensity)


@dataclass(frozen=True)
class CarbonRow:
    platform: str
    power_kw: float
    energy_avg_kwh: float
    cpu_percent: float
    energy_blockchain_kwh: float
    intensity: float
    ghg_kg: float


def carbon_table(
    cpu_percent_by_platform: Dict[str, float], params: CarbonParams
) -> List[CarbonRow]:
    """The full footprint pipeline: CPU share -> kWh -> kg CO2-eq per platform."""
    rows = []
    for platform in sorted(cpu_percent_by_platform):
        pct = cpu_percent_by_platform[platform]
        cpu = _frac(pct) / 100
        e_nkwh = energy_nanokwh(params, cpu)
        g_nkg = ghg_nanokg(e_nkwh, params.ghg_intensity)
        rows.append(
            CarbonRow(
                platform=platform,
                power_kw=params.machine_power_kw,
                energy_avg_kwh=params.machine_power_kw * params.horizon_hours,
                cpu_percent=pct,
                energy_blockchain_kwh=e_nkwh / NANO,
                intensity=params.ghg_intensity,
                ghg_kg=g_nkg / NANO,
            )
        )
    return rows
