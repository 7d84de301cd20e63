"""Scenario files: YAML in, Scenario out, with errors that name the field."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import yaml

from .netsim import (
    DEFAULT_CLIENT_LINK,
    DEFAULT_MANAGER_LINK,
    LinkSpec,
    MachineScript,
    MarketplaceScript,
    RentalScript,
    Scenario,
)


class ConfigError(Exception):
    """Bad or missing configuration; the message names the offending field."""


_SCENARIO_KEYS = {
    "name",
    "platform",
    "managers",
    "clients",
    "input_tps",
    "tps_is_total",
    "duration_s",
    "seed",
    "arrival",
    "payload_bytes",
    "block_interval_ms",
    "links",
    "capacity",
    "profile_overrides",
    "marketplace",
    "sweep",
}


def _require(doc: dict, key: str, typ, default=None, where: str = ""):
    if key not in doc:
        if default is not None:
            return default
        raise ConfigError(f"missing field {where}{key}")
    value = doc[key]
    if typ is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, typ):
        raise ConfigError(f"field {where}{key} must be {typ.__name__}, got {type(value).__name__}")
    return value


def load_scenario(path: str) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"scenario file {path} must hold a mapping")
    return scenario_from_dict(doc, default_name=p.stem)


def scenario_from_dict(doc: dict, default_name: str = "scenario") -> Scenario:
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown field {sorted(unknown)[0]}")

    links = doc.get("links", {}) or {}
    manager_link = LinkSpec(
        latency_ms=float(links.get("manager_latency_ms", DEFAULT_MANAGER_LINK.latency_ms)),
        bandwidth_bytes_per_s=float(
            links.get("manager_bandwidth_bytes_per_s", DEFAULT_MANAGER_LINK.bandwidth_bytes_per_s)
        ),
    )
    client_link = LinkSpec(
        latency_ms=float(links.get("client_latency_ms", DEFAULT_CLIENT_LINK.latency_ms)),
        bandwidth_bytes_per_s=float(
            links.get("client_bandwidth_bytes_per_s", DEFAULT_CLIENT_LINK.bandwidth_bytes_per_s)
        ),
    )
    capacity = doc.get("capacity", {}) or {}

    marketplace: Optional[MarketplaceScript] = None
    if doc.get("marketplace"):
        mdoc = doc["marketplace"]
        machines = tuple(
            MachineScript(
                machine_id=_require(m, "machine_id", str, where="marketplace.machines."),
                capabilities=tuple(m.get("capabilities", [])),
                owner=_require(m, "owner", str, where="marketplace.machines."),
            )
            for m in mdoc.get("machines", [])
        )
        rentals = tuple(
            RentalScript(
                request_id=_require(r, "request_id", str, where="marketplace.rentals."),
                customer=_require(r, "customer", str, where="marketplace.rentals."),
                capabilities=tuple(r.get("capabilities", [])),
                start_ms=int(_require(r, "start_ms", int, where="marketplace.rentals.")),
                end_ms=int(_require(r, "end_ms", int, where="marketplace.rentals.")),
                price=int(_require(r, "price", int, where="marketplace.rentals.")),
                submit_at_ms=float(r.get("submit_at_ms", 100.0)),
                progress_reports=int(r.get("progress_reports", 4)),
                use_channel=bool(r.get("use_channel", True)),
            )
            for r in mdoc.get("rentals", [])
        )
        marketplace = MarketplaceScript(machines=machines, rentals=rentals)

    return Scenario(
        name=str(doc.get("name", default_name)),
        platform=str(doc.get("platform", "quorum")),
        managers=int(doc.get("managers", 2)),
        clients=int(doc.get("clients", 2)),
        input_tps=float(doc.get("input_tps", 10.0)),
        tps_is_total=bool(doc.get("tps_is_total", False)),
        duration_s=float(doc.get("duration_s", 60.0)),
        seed=int(doc.get("seed", 42)),
        arrival=str(doc.get("arrival", "fixed")),
        payload_bytes=int(doc.get("payload_bytes", 32)),
        block_interval_ms=(
            float(doc["block_interval_ms"]) if doc.get("block_interval_ms") is not None else None
        ),
        manager_link=manager_link,
        client_link=client_link,
        manager_capacity=float(capacity.get("manager_work_per_s", 2_000_000)),
        client_capacity=float(capacity.get("client_work_per_s", 150_000)),
        profile_overrides=doc.get("profile_overrides", {}) or {},
        marketplace=marketplace,
    )


def load_sweep_grid(path: str):
    """Optional `sweep:` section of a scenario file: (managers, loads) lists,
    either may be None. Flags beat these, these beat the built-in grid."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    doc = yaml.safe_load(p.read_text()) or {}
    section = doc.get("sweep") or {}
    managers = section.get("managers")
    loads = section.get("loads")
    if managers is not None and not isinstance(managers, list):
        raise ConfigError("field sweep.managers must be a list")
    if loads is not None and not isinstance(loads, list):
        raise ConfigError("field sweep.loads must be a list")
    return (
        [int(m) for m in managers] if managers is not None else None,
        [float(x) for x in loads] if loads is not None else None,
    )


def scenario_to_dict(sc: Scenario) -> dict:
    doc = {
        "name": sc.name,
        "platform": sc.platform,
        "managers": sc.managers,
        "clients": sc.clients,
        "input_tps": sc.input_tps,
        "tps_is_total": sc.tps_is_total,
        "duration_s": sc.duration_s,
        "seed": sc.seed,
        "arrival": sc.arrival,
        "payload_bytes": sc.payload_bytes,
        "block_interval_ms": sc.block_interval_ms,
        "links": {
            "manager_latency_ms": sc.manager_link.latency_ms,
            "manager_bandwidth_bytes_per_s": sc.manager_link.bandwidth_bytes_per_s,
            "client_latency_ms": sc.client_link.latency_ms,
            "client_bandwidth_bytes_per_s": sc.client_link.bandwidth_bytes_per_s,
        },
        "capacity": {
            "manager_work_per_s": sc.manager_capacity,
            "client_work_per_s": sc.client_capacity,
        },
        "profile_overrides": sc.profile_overrides,
    }
    if sc.marketplace:
        doc["marketplace"] = {
            "machines": [
                {
                    "machine_id": m.machine_id,
                    "capabilities": list(m.capabilities),
                    "owner": m.owner,
                }
                for m in sc.marketplace.machines
            ],
            "rentals": [
                {
                    "request_id": r.request_id,
                    "customer": r.customer,
                    "capabilities": list(r.capabilities),
                    "start_ms": r.start_ms,
                    "end_ms": r.end_ms,
                    "price": r.price,
                    "submit_at_ms": r.submit_at_ms,
                    "progress_reports": r.progress_reports,
                    "use_channel": r.use_channel,
                }
                for r in sc.marketplace.rentals
            ],
        }
    return doc
