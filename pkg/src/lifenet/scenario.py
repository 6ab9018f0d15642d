"""Scenario files: TOML validated against a bundled JSON schema."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .model import Client, CloudScenario, ModelError, NetworkGraph, UnitSystem, undirected_graph

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUILTIN = {"abilene": "abilene.toml"}


class ConfigError(ValueError):
    """Unreadable, schema-violating or inconsistent scenario/config."""


@dataclass
class LoadedScenario:
    scenario: CloudScenario
    units: UnitSystem
    run: dict = field(default_factory=dict)
    path: str = ""
    sha256: str = ""
    raw: dict = field(default_factory=dict)

    def native_v(self) -> float:
        """V in flow units; ``V_native`` wins over the reference-scale ``V``."""
        if "V_native" in self.run:
            return float(self.run["V_native"])
        return self.units.scale_v(float(self.run.get("V", 0.0)))


def schema() -> dict:
    return json.loads(resources.files("lifenet").joinpath("data", "scenario.schema.json").read_text())


def read_text(path_or_name: str) -> tuple[str, str]:
    """(text, resolved path); built-in names resolve to packaged files."""
    if path_or_name in BUILTIN:
        res = resources.files("lifenet").joinpath("data", BUILTIN[path_or_name])
        return res.read_text(), f"builtin:{path_or_name}"
    p = Path(path_or_name)
    if not p.is_file() and p.stem in BUILTIN and p.name == BUILTIN[p.stem]:
        # bare "abilene.toml" falls back to the packaged copy
        return read_text(p.stem)
    if not p.is_file():
        raise ConfigError(f"scenario file not found: {path_or_name}")
    return p.read_text(), str(p)


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from None


def load(path_or_name: str) -> LoadedScenario:
    text, resolved = read_text(path_or_name)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{resolved}: {exc}") from None
    validate(doc)
    try:
        sc, units = from_dict(doc)
    except ModelError as exc:
        raise ConfigError(f"{resolved}: {exc}") from None
    return LoadedScenario(sc, units, dict(doc.get("run", {})), resolved,
                          hashlib.sha256(text.encode()).hexdigest(), doc)


def from_dict(doc: dict) -> tuple[CloudScenario, UnitSystem]:
    u = doc.get("units", {})
    units = UnitSystem(u.get("flow_unit_mbps", 10), u.get("slot_seconds", 1.0))
    net = doc["network"]
    n = net["num_nodes"]
    base = net.get("index_base", 0)

    def node(v):
        i = int(v) - base
        if not 0 <= i < n:
            raise ModelError(f"node {v} out of range")
        return i

    labels = net.get("labels") or ([str(i + 1) for i in range(n)] if base == 1 else None)
    cap0 = net.get("capacity_mbps")
    cost0 = net.get("cost_per_gb", 0.0)
    links = net.get("links", [])
    edges = net.get("edges", [])
    if not links and not edges:
        raise ModelError("network has no links or edges")
    if links and cap0 is None:
        raise ModelError("links need network.capacity_mbps")
    if links and not edges and net.get("undirected", True):
        graph = undirected_graph(n, [(node(i), node(j)) for i, j in links], units.to_units(float(cap0)),
                                 units.link_cost(cost0), labels)
    else:
        pairs, caps, costs = [], [], []
        undirected = net.get("undirected", True)
        for i, j in links:
            for a, b in ((i, j), (j, i)) if undirected else ((i, j),):
                pairs.append((node(a), node(b)))
                caps.append(units.to_units(float(cap0)))
                costs.append(units.link_cost(cost0))
        for e in edges:
            c = e.get("capacity_mbps", cap0)
            if c is None:
                raise ModelError("edge without capacity and no network default")
            pairs.append((node(e["src"]), node(e["dst"])))
            caps.append(units.to_units(float(c)))
            costs.append(units.link_cost(e.get("cost_per_gb", cost0)))
        graph = NetworkGraph(n, tuple(pairs), np.array(caps), np.array(costs), tuple(labels) if labels else None)

    comp = doc.get("compute", {})
    S = comp.get("chain_length", 0)
    budget = _per_node(comp.get("budget", 0.0), n, "budget")
    cpu_cost = _per_node(comp.get("cost", 0.0), n, "cost")
    cpu_rate = units.to_units(float(comp.get("cpu_rate_mbps", 0.0))) if "cpu_rate_mbps" in comp else 0.0
    clients = []
    for idx, c in enumerate(doc["clients"]):
        split = None
        if "lifetimes" in c:
            split = {int(k): float(v) for k, v in c["lifetimes"].items()}
            if any(not 1 <= l <= c["L"] for l in split):
                raise ModelError(f"client {idx + 1}: lifetime split outside 1..L")
        clients.append(Client(node(c["source"]), node(c["destination"]), float(c["gamma"]),
                              units.to_units(float(c["rate_mbps"])), int(c["L"]), split,
                              c.get("name", f"client{idx + 1}")))
    a_max_factor = float(doc.get("run", {}).get("a_max_factor", 20.0))
    sc = CloudScenario(graph, budget, cpu_cost, cpu_rate, S, tuple(clients), a_max_factor, doc.get("name", ""))
    for c in clients:
        c.rates_by_lifetime()
    return sc, units


def _per_node(v, n, what):
    if isinstance(v, list):
        if len(v) != n:
            raise ModelError(f"compute {what} needs {n} entries, got {len(v)}")
        return np.array(v, dtype=float)
    return np.full(n, float(v))
