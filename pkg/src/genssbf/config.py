"""Experiment configuration: a strict JSON schema with defaults and dotted overrides.

A config file is a JSON object with these keys (all optional except
``scenario.id``)::

    {
      "scenario":   {"id": "indoor_nlos", "num_samples": 4000},
      "array":      {"num_antennas": 16, "element_spacing": 0.5, "carrier_freq_ghz": 28.0},
      "probe_counts": [2, 4, 6, 8, 10, 12],
      "methods":    ["optimal", "genssbf_multi", "genssbf_single", "regression", "dft_sweep"],
      "K": 5,
      "diffusion":  {... DiffusionConfig fields ...},
      "regression": {... RegressionConfig fields ...},
      "seed": 0,
      "output_dir": "runs/default"
    }

Unknown keys at any level are rejected. Validation collects every problem
before raising, so one run reports them all.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import RegressionConfig
from .diffusion import DiffusionConfig
from .neuralnet import ACTIVATIONS
from .sitechannel import ArrayConfig, ScenarioId

METHODS = ("optimal", "genssbf_multi", "genssbf_single", "regression", "dft_sweep")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violation found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    scenario_id: ScenarioId = ScenarioId.indoor_nlos
    num_samples: int = 4000
    array: ArrayConfig = field(default_factory=ArrayConfig)
    probe_counts: tuple[int, ...] = (2, 4, 6, 8, 10, 12)
    methods: tuple[str, ...] = METHODS
    K: int = 5
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        """The config in file form, with every default filled in."""
        return {
            "scenario": {"id": self.scenario_id.name, "num_samples": self.num_samples},
            "array": dataclasses.asdict(self.array),
            "probe_counts": list(self.probe_counts),
            "methods": list(self.methods),
            "K": self.K,
            "diffusion": dataclasses.asdict(self.diffusion),
            "regression": dataclasses.asdict(self.regression),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }


def default_document() -> dict:
    return ExperimentConfig().to_dict()


# ---------------------------------------------------------------------------
# Validation


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


def _check_keys(obj, allowed, where, problems) -> None:
    for k in obj:
        if k not in allowed:
            problems.append(f"unknown key '{where}{k}'")


def _section(doc, key, problems) -> dict:
    sub = doc.get(key, {})
    if not isinstance(sub, dict):
        problems.append(f"'{key}' must be an object")
        return {}
    return sub


def _typed(sub, key, where, default, kind, problems):
    """Fetch sub[key] (or default) and type-check it against 'int', 'num', 'str'."""
    if key not in sub:
        return default
    v = sub[key]
    ok = {"int": _is_int, "num": _is_num, "str": lambda x: isinstance(x, str)}[kind](v)
    if not ok:
        problems.append(f"'{where}{key}' must be {'an integer' if kind == 'int' else 'a number' if kind == 'num' else 'a string'}, got {v!r}")
        return default
    return float(v) if kind == "num" else v


def _dataclass_section(doc, key, cls, problems):
    sub = _section(doc, key, problems)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(sub, fields, f"{key}.", problems)
    base = cls()
    values = {}
    for name in fields:
        d = getattr(base, name)
        kind = "str" if isinstance(d, str) else "int" if _is_int(d) else "num"
        values[name] = _typed(sub, name, f"{key}.", d, kind, problems)
    return values


def _range(cond: bool, msg: str, problems: list[str]) -> None:
    if not cond:
        problems.append(msg)


def validate(doc) -> ExperimentConfig:
    """Turn a parsed JSON document into an :class:`ExperimentConfig` or raise ConfigError."""
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])
    _check_keys(doc, default_document(), "", problems)

    sc = _section(doc, "scenario", problems)
    _check_keys(sc, ("id", "num_samples"), "scenario.", problems)
    scenario_id = ScenarioId.indoor_nlos
    if "id" not in sc:
        problems.append("missing required key 'scenario.id'")
    elif sc["id"] not in ScenarioId.__members__:
        problems.append(f"'scenario.id' must be one of {sorted(ScenarioId.__members__)}, got {sc['id']!r}")
    else:
        scenario_id = ScenarioId[sc["id"]]
    num_samples = _typed(sc, "num_samples", "scenario.", 4000, "int", problems)
    _range(num_samples >= 1, "'scenario.num_samples' must be >= 1", problems)

    arr = _section(doc, "array", problems)
    _check_keys(arr, ("num_antennas", "element_spacing", "carrier_freq_ghz"), "array.", problems)
    n = _typed(arr, "num_antennas", "array.", 16, "int", problems)
    spacing = _typed(arr, "element_spacing", "array.", 0.5, "num", problems)
    carrier = _typed(arr, "carrier_freq_ghz", "array.", 28.0, "num", problems)
    _range(n >= 2, "'array.num_antennas' must be >= 2", problems)
    _range(spacing > 0, "'array.element_spacing' must be > 0", problems)
    _range(carrier > 0, "'array.carrier_freq_ghz' must be > 0", problems)

    probe_counts = doc.get("probe_counts", [2, 4, 6, 8, 10, 12])
    if not isinstance(probe_counts, list) or not probe_counts or not all(map(_is_int, probe_counts)):
        problems.append("'probe_counts' must be a non-empty list of integers")
        probe_counts = [1]
    else:
        bad = [m for m in probe_counts if not 1 <= m <= n]
        if bad:
            problems.append(f"'probe_counts' entries must lie in [1, {n}], got {bad}")
        if any(a >= b for a, b in zip(probe_counts, probe_counts[1:])):
            problems.append("'probe_counts' must be strictly ascending")

    methods = doc.get("methods", list(METHODS))
    if not isinstance(methods, list) or not methods or not all(isinstance(m, str) for m in methods):
        problems.append("'methods' must be a non-empty list of strings")
        methods = list(METHODS)
    else:
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            problems.append(f"'methods' has unknown entries {unknown}; allowed {list(METHODS)}")
        if len(set(methods)) != len(methods):
            problems.append("'methods' has duplicate entries")

    k = _typed(doc, "K", "", 5, "int", problems)
    _range(k >= 1, "'K' must be >= 1", problems)
    seed = _typed(doc, "seed", "", 0, "int", problems)
    _range(0 <= seed < 2 ** 64, "'seed' must be a 64-bit unsigned integer", problems)
    output_dir = _typed(doc, "output_dir", "", "runs/default", "str", problems)
    _range(bool(output_dir), "'output_dir' must be non-empty", problems)

    dv = _dataclass_section(doc, "diffusion", DiffusionConfig, problems)
    _range(dv["T"] >= 1, "'diffusion.T' must be >= 1", problems)
    _range(0 < dv["beta_start"] <= dv["beta_end"] < 1,
           "'diffusion.beta_start'/'diffusion.beta_end' need 0 < start <= end < 1", problems)
    for key in ("hidden", "depth", "time_embed_dim", "prompt_embed_dim", "batch_size", "steps",
                "log_every"):
        _range(dv[key] >= 1, f"'diffusion.{key}' must be >= 1", problems)
    _range(dv["activation"] in ACTIVATIONS, f"'diffusion.activation' must be one of {list(ACTIVATIONS)}",
           problems)
    _range(dv["lr"] > 0 and dv["lr_final"] > 0, "'diffusion.lr' and 'diffusion.lr_final' must be > 0",
           problems)
    _range(0 <= dv["ema_decay"] < 1, "'diffusion.ema_decay' must lie in [0, 1)", problems)

    rv = _dataclass_section(doc, "regression", RegressionConfig, problems)
    for key in ("hidden", "depth", "batch_size", "max_epochs", "patience"):
        _range(rv[key] >= 1, f"'regression.{key}' must be >= 1", problems)
    _range(rv["activation"] in ACTIVATIONS,
           f"'regression.activation' must be one of {list(ACTIVATIONS)}", problems)
    _range(rv["lr"] > 0, "'regression.lr' must be > 0", problems)

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        scenario_id=scenario_id,
        num_samples=num_samples,
        array=ArrayConfig(n, spacing, carrier),
        probe_counts=tuple(probe_counts),
        methods=tuple(methods),
        K=k,
        diffusion=DiffusionConfig(**dv),
        regression=RegressionConfig(**rv),
        seed=seed,
        output_dir=output_dir,
    )


# ---------------------------------------------------------------------------
# Overrides and loading


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` strings; values are parsed as JSON when possible."""
    doc = copy.deepcopy(doc)
    problems = []
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            problems.append(f"override {item!r} is not of the form key=value")
            continue
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                problems.append(f"override {key!r}: '{p}' is not an object")
                break
            node = nxt
        else:
            node[parts[-1]] = _parse_value(raw)
    if problems:
        raise ConfigError(problems)
    return doc


def read_document(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError([f"cannot read config {path}: {err.strerror or err}"]) from err
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError([f"malformed JSON in {path}: {err}"]) from err


def load_config(path, overrides=()) -> ExperimentConfig:
    return validate(apply_overrides(read_document(path), overrides))
