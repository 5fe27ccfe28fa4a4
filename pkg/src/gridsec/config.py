"""TOML run configuration with a strict schema.

Unknown keys, wrong types and missing required fields raise ``ConfigError``
naming the offending field; TOML syntax errors carry the line and column.
The schema itself is documented in ``gridsec.cli``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .errors import ConfigError
from .model import GlobalSystemModel, ieee14_default
from .simnet.scenario import AttackSpec, Baselines, MisbehaviorSpec, Scenario

PRESETS = {"ieee14": ieee14_default}

_NUM = (int, float)

MODEL_KEYS = {
    "preset": str, "name": str, "n_buses": int, "A": list, "a_diag": list, "H": list,
    "sigma_v2": _NUM, "sigma_w2": _NUM, "partition": list, "x0": list,
}
DETECTION_KEYS = {"alpha": _NUM, "L_target": _NUM, "h": _NUM, "outlier_alpha": _NUM}
LEDGER_KEYS = {"M": int, "difficulty": int, "n_miners": int}
SCENARIO_KEYS = {
    "T": int, "seed": int, "on_alarm": str, "investigation_delay": int, "hacked_vote": str,
    "cross_policy": str, "baselines": list, "attacks": list, "misbehaviors": list,
}
ATTACK_KEYS = {"targets": list, "onset": int, "magnitude": _NUM, "kind": str}
MISBEHAVIOR_KEYS = {"node": int, "onset": int, "magnitude": _NUM, "behavior": str}
OUTPUT_KEYS = {"dir": str, "prefix": str, "csv": bool, "json": bool, "ledger": bool}
TOP_KEYS = {"model": dict, "detection": dict, "ledger": dict, "scenario": dict, "output": dict}


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    prefix: str = "run"
    csv: bool = True
    json: bool = True
    ledger: bool = True


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    output: OutputConfig = field(default_factory=OutputConfig)


def _check(table: dict, schema: dict, where: str) -> None:
    for key, value in table.items():
        if key not in schema:
            raise ConfigError(f"{where}.{key}: unknown key")
        want = schema[key]
        # bool is an int subclass; never accept it for numbers
        if isinstance(value, bool) and want is not bool:
            raise ConfigError(f"{where}.{key}: expected {_tname(want)}, got bool")
        if not isinstance(value, want):
            raise ConfigError(f"{where}.{key}: expected {_tname(want)}, got {type(value).__name__}")


def _tname(t) -> str:
    return "number" if t is _NUM else t.__name__


def _matrix(value, where: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric array ({exc})") from None
    if arr.ndim != ndim:
        raise ConfigError(f"{where}: expected a {ndim}-d array, got {arr.ndim}-d")
    return arr


def build_model(table: dict) -> GlobalSystemModel:
    _check(table, MODEL_KEYS, "model")
    if "preset" in table:
        extra = set(table) - {"preset", "sigma_v2", "sigma_w2"}
        if extra:
            raise ConfigError(f"model: {sorted(extra)} cannot be combined with preset")
        name = table["preset"]
        if name not in PRESETS:
            raise ConfigError(f"model.preset: unknown preset {name!r} (known: {sorted(PRESETS)})")
        base = PRESETS[name]()
        if "sigma_v2" in table or "sigma_w2" in table:
            base = GlobalSystemModel(
                n_buses=base.n_buses, A=base.A, H=base.H,
                sigma_v2=table.get("sigma_v2", base.sigma_v2),
                sigma_w2=table.get("sigma_w2", base.sigma_w2),
                partition=base.partition, x0=base.x0, name=base.name,
            )
        return base
    for key in ("H", "sigma_v2", "sigma_w2", "partition"):
        if key not in table:
            raise ConfigError(f"model.{key}: required for an inline model")
    H = _matrix(table["H"], "model.H", 2)
    n = H.shape[1]
    if "A" in table and "a_diag" in table:
        raise ConfigError("model: give A or a_diag, not both")
    if "A" in table:
        A = _matrix(table["A"], "model.A", 2)
    else:
        A = np.diag(_matrix(table.get("a_diag", [1.0] * n), "model.a_diag", 1))
    x0 = _matrix(table.get("x0", [0.0] * n), "model.x0", 1)
    partition = []
    for i, part in enumerate(table["partition"]):
        if not isinstance(part, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in part):
            raise ConfigError(f"model.partition[{i}]: expected a list of 1-based sensor indices")
        if any(k < 1 for k in part):
            raise ConfigError(f"model.partition[{i}]: sensor indices are 1-based")
        partition.append(tuple(k - 1 for k in part))
    return GlobalSystemModel(
        n_buses=table.get("n_buses", 0), A=A, H=H,
        sigma_v2=table["sigma_v2"], sigma_w2=table["sigma_w2"],
        partition=tuple(partition), x0=x0, name=table.get("name", "custom"),
    )


def build_config(doc: dict) -> RunConfig:
    _check(doc, TOP_KEYS, "config")
    model = build_model(doc.get("model", {"preset": "ieee14"}))
    det = doc.get("detection", {})
    _check(det, DETECTION_KEYS, "detection")
    led = doc.get("ledger", {})
    _check(led, LEDGER_KEYS, "ledger")
    sc = doc.get("scenario", {})
    _check(sc, SCENARIO_KEYS, "scenario")
    out = doc.get("output", {})
    _check(out, OUTPUT_KEYS, "output")

    attacks = []
    for i, a in enumerate(sc.get("attacks", [])):
        where = f"scenario.attacks[{i}]"
        if not isinstance(a, dict):
            raise ConfigError(f"{where}: expected a table")
        _check(a, ATTACK_KEYS, where)
        for key in ("targets", "onset", "magnitude"):
            if key not in a:
                raise ConfigError(f"{where}.{key}: required")
        attacks.append(AttackSpec(tuple(a["targets"]), a["onset"], float(a["magnitude"]), a.get("kind", "fdi-uniform")))
    misbehaviors = []
    for i, m in enumerate(sc.get("misbehaviors", [])):
        where = f"scenario.misbehaviors[{i}]"
        if not isinstance(m, dict):
            raise ConfigError(f"{where}: expected a table")
        _check(m, MISBEHAVIOR_KEYS, where)
        for key in ("node", "onset"):
            if key not in m:
                raise ConfigError(f"{where}.{key}: required")
        misbehaviors.append(MisbehaviorSpec(m["node"], m["onset"], float(m.get("magnitude", 0.0)), m.get("behavior", "silent-fdi")))

    names = sc.get("baselines", ["centralized", "robust", "nominal"])
    bad = [b for b in names if b not in ("centralized", "robust", "nominal")]
    if bad:
        raise ConfigError(f"scenario.baselines: unknown baseline(s) {bad}")

    kw = {}
    if "h" in det:
        kw["h"] = float(det["h"])
        kw["L_target"] = None
    elif "L_target" in det:
        kw["L_target"] = float(det["L_target"])
    for key in ("alpha", "outlier_alpha"):
        if key in det:
            kw[key] = float(det[key])
    kw.update({k: led[k] for k in LEDGER_KEYS if k in led})
    kw.update({k: sc[k] for k in ("T", "seed", "on_alarm", "investigation_delay", "hacked_vote", "cross_policy") if k in sc})
    scenario = Scenario(
        model=model, attacks=tuple(attacks), misbehaviors=tuple(misbehaviors),
        baselines=Baselines(*(b in names for b in ("centralized", "robust", "nominal"))),
        **kw,
    )
    return RunConfig(scenario, OutputConfig(**out))


def parse_value(text: str):
    """A TOML value (``50``, ``1e-3``, ``"halt"``, ``[1, 2]``); bare words fall back to strings."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    """Apply ``dotted.key=value`` in place; integer path parts index arrays."""
    if "=" not in assignment:
        raise ConfigError(f"--set {assignment!r}: expected key=value")
    path, text = assignment.split("=", 1)
    parts = path.strip().split(".")
    if not all(parts):
        raise ConfigError(f"--set {assignment!r}: malformed key")
    node = doc
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            node = _index(node, part, parts[:i + 1])
        else:
            node = node.setdefault(part, {})
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"--set {path}: {'.'.join(parts[:i + 1])} is not a table")
    value = parse_value(text.strip())
    if isinstance(node, list):
        node[_index(node, parts[-1], parts, idx_only=True)] = value
    else:
        node[parts[-1]] = value


def _index(seq: list, part: str, parts, idx_only=False):
    try:
        i = int(part)
        seq[i]
    except (ValueError, IndexError):
        raise ConfigError(f"--set: {'.'.join(parts)} is not a valid array index") from None
    return i if idx_only else seq[i]


def load_config(path, overrides=()) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    for item in overrides:
        apply_override(doc, item)
    cfg = build_config(doc)
    if not math.isfinite(cfg.scenario.threshold):
        raise ConfigError("detection threshold is not finite")
    return cfg
