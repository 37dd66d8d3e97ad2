"""Packaged plant description and loaders for the shipped data files."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

from .control import ControlConfig
from .plant import PlantTopology, load_topology


def data_dir() -> Path:
    """Directory holding the packaged JSON data files."""
    return Path(str(resources.files("waditwin").joinpath("data")))


def load_json(name: str) -> dict[str, Any]:
    text = resources.files("waditwin").joinpath("data", name).read_text("utf-8")
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError(f"data file {name!r} must hold a JSON object")
    return doc


def default_doc() -> dict[str, Any]:
    """The shipped plant description, parsed but not validated."""
    return load_json("wadi.json")


def default_topology() -> PlantTopology:
    """The shipped three-stage water distribution plant."""
    return load_topology(default_doc())


def default_control() -> ControlConfig:
    """Controller wiring matching :func:`default_topology`."""
    section = default_doc().get("control")
    if section is None:
        raise ValueError("shipped plant description lacks a control section")
    return ControlConfig.from_doc(section)


def scenario_names() -> list[str]:
    """Names of the packaged scenarios, without the .json suffix."""
    base = resources.files("waditwin").joinpath("data", "scenarios")
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def load_scenario_doc(name: str) -> dict[str, Any]:
    if name.endswith(".json") or "/" in name or "\\" in name:
        path = Path(name)
        doc = json.loads(path.read_text("utf-8"))
    else:
        doc = load_json(f"scenarios/{name}.json")
    if not isinstance(doc, dict):
        raise ValueError(f"scenario {name!r} must hold a JSON object")
    return doc


def attack_names() -> list[str]:
    base = resources.files("waditwin").joinpath("data", "attacks")
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def load_attack_doc(name: str) -> dict[str, Any]:
    if name.endswith(".json") or "/" in name or "\\" in name:
        doc = json.loads(Path(name).read_text("utf-8"))
    else:
        doc = load_json(f"attacks/{name}.json")
    if not isinstance(doc, dict):
        raise ValueError(f"attack {name!r} must hold a JSON object")
    return doc


def load_invariants_doc() -> list[dict[str, Any]]:
    text = resources.files("waditwin").joinpath("data", "invariants.json").read_text("utf-8")
    doc = json.loads(text)
    if not isinstance(doc, list):
        raise ValueError("invariants.json must hold a JSON array of rules")
    return doc
