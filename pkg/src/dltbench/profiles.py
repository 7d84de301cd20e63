"""Platform profiles: one bundle per supported DLT platform.

A profile carries the consensus engine kind, the transaction wire-size
model, block/slot cadence, communication constants, and the work-unit cost
table used by the CPU model. The numeric calibration lives in the JSON
files next to this module, not in code; see those files and the README for
how the constants were chosen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional

from .ledger import TxKind, WireSizeModel

PLATFORM_NAMES = ("ethereum", "quorum", "fabric", "iota", "solana")


class UnknownPlatform(Exception):
    pass


_KIND_BY_NAME = {k.name.lower(): k for k in TxKind}


@dataclass(frozen=True)
class PlatformProfile:
    name: str
    consensus: str  # pow | voting | endorse-order-validate | tangle | poh
    wire: WireSizeModel
    block_interval_ms: float
    max_block_txs: int
    latency_target_ms: float
    throughput_target_tps: float
    table3_cpu_percent: float
    pow_difficulty_bits: int = 0
    hash_rate_per_s: float = 0.0  # sustained mining attempts/s per manager
    confirm_weight: int = 0  # tangle: descendants needed for confirmation
    tick_rate_per_s: float = 0.0  # poh: sequential hash ticks per second
    endorser_count: int = 0
    comm: Dict[str, float] = field(default_factory=dict)
    timing: Dict[str, float] = field(default_factory=dict)
    work: Dict[str, float] = field(default_factory=dict)


def _wire_from_dict(platform: str, spec: dict) -> WireSizeModel:
    per_kind = {
        _KIND_BY_NAME[name]: int(extra)
        for name, extra in spec.get("per_kind_bytes", {}).items()
    }
    return WireSizeModel(
        platform=platform,
        base_bytes=int(spec["base_bytes"]),
        per_kind_bytes=per_kind,
        metadata_cap_bytes=spec.get("metadata_cap_bytes"),
    )


def _profile_from_dict(raw: dict) -> PlatformProfile:
    return PlatformProfile(
        name=raw["name"],
        consensus=raw["consensus"],
        wire=_wire_from_dict(raw["name"], raw["wire"]),
        block_interval_ms=float(raw["block_interval_ms"]),
        max_block_txs=int(raw["max_block_txs"]),
        latency_target_ms=float(raw["latency_target_ms"]),
        throughput_target_tps=float(raw["throughput_target_tps"]),
        table3_cpu_percent=float(raw["table3_cpu_percent"]),
        pow_difficulty_bits=int(raw.get("pow_difficulty_bits", 0)),
        hash_rate_per_s=float(raw.get("hash_rate_per_s", 0.0)),
        confirm_weight=int(raw.get("confirm_weight", 0)),
        tick_rate_per_s=float(raw.get("tick_rate_per_s", 0.0)),
        endorser_count=int(raw.get("endorser_count", 0)),
        comm={k: float(v) for k, v in raw.get("comm", {}).items()},
        timing={k: float(v) for k, v in raw.get("timing", {}).items()},
        work={k: float(v) for k, v in raw.get("work", {}).items()},
    )


def _read_profile_json(name: str) -> dict:
    ref = resources.files("dltbench").joinpath(f"profiles/{name}.json")
    with ref.open("r", encoding="utf-8") as fh:
        return json.load(fh)


def load_profile(name: str, overrides: Optional[dict] = None) -> PlatformProfile:
    """Load a named profile, optionally merging top-level overrides."""
    key = name.lower()
    if key not in PLATFORM_NAMES:
        raise UnknownPlatform(
            f"unknown platform {name!r}; choose one of {', '.join(PLATFORM_NAMES)}"
        )
    raw = _read_profile_json(key)
    if overrides:
        for k, v in overrides.items():
            if isinstance(v, dict) and isinstance(raw.get(k), dict):
                raw[k] = {**raw[k], **v}
            else:
                raw[k] = v
    return _profile_from_dict(raw)


def all_profiles() -> List[PlatformProfile]:
    return [load_profile(name) for name in PLATFORM_NAMES]


def table3_cpu_defaults() -> Dict[str, float]:
    """Bundled per-platform CPU percentages for the carbon pipeline."""
    return {name: load_profile(name).table3_cpu_percent for name in PLATFORM_NAMES}
