"""YAML experiment configs with position-aware validation errors."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

INSTANTIATIONS = ("factor", "gmm", "contrastive", "counterexample")
ERM_METHODS = ("fast_rate_ols", "truncated_projected")
CHECK_KINDS = ("slope", "benefit", "aux_max", "failure_frequency")


class ConfigError(ValueError):
    """Invalid config; ``path`` is the dotted key, ``line``/``column`` 1-based when known."""

    def __init__(self, message, path="", line=None, column=None, source=None):
        where = f"{source or '<config>'}"
        if line is not None:
            where += f":{line}:{column}"
        key = f" [{path}]" if path else ""
        super().__init__(f"{where}{key}: {message}")
        self.path, self.line, self.column = path, line, column


def _marks(node, prefix="", out=None):
    """Map dotted key paths to (line, column) of their values in the YAML source."""
    out = {} if out is None else out
    out[prefix] = (node.start_mark.line + 1, node.start_mark.column + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _marks(v, f"{prefix}.{k.value}" if prefix else str(k.value), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _marks(v, f"{prefix}[{i}]", out)
    return out


DEFAULTS = {
    "experiment_id": None,
    "instantiation": None,
    "master_seed": 0,
    "trials": 1,
    "sweep": {"m": [1000], "n": [100]},
    "erm_method": "fast_rate_ols",
    "mc_count": 100_000,
    "aux_mc_count": 2000,
    "baseline": True,
    "truth": {},
    "optimizer": {},
    "checks": [],
    "out": "results",
}


@dataclass
class ExperimentConfig:
    experiment_id: str
    instantiation: str
    master_seed: int
    trials: int
    m_values: list
    n_values: list
    erm_method: str = "fast_rate_ols"
    mc_count: int = 100_000
    aux_mc_count: int = 2000
    baseline: bool = True
    truth: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    out: str = "results"
    raw: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "instantiation": self.instantiation,
            "master_seed": self.master_seed,
            "trials": self.trials,
            "sweep": {"m": list(self.m_values), "n": list(self.n_values)},
            "erm_method": self.erm_method,
            "mc_count": self.mc_count,
            "aux_mc_count": self.aux_mc_count,
            "baseline": self.baseline,
            "truth": self.truth,
            "optimizer": self.optimizer,
            "checks": self.checks,
            "out": self.out,
        }

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of everything that affects the rows."""
        body = self.to_dict()
        body.pop("out")
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, seed=None, trials=None, mc_count=None, out=None) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        if seed is not None:
            cfg.master_seed = _check_int(seed, "master_seed", {}, None, minimum=0)
        if trials is not None:
            cfg.trials = _check_int(trials, "trials", {}, None, minimum=1)
        if mc_count is not None:
            cfg.mc_count = _check_int(mc_count, "mc_count", {}, None, minimum=1)
        if out is not None:
            cfg.out = str(out)
        return cfg


def _err(msg, path, marks, source):
    line, col = (marks or {}).get(path, (None, None))
    return ConfigError(msg, path, line, col, source)


def _check_int(value, path, marks, source, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise _err(f"expected an integer, got {value!r}", path, marks, source)
    if minimum is not None and value < minimum:
        raise _err(f"must be >= {minimum}, got {value}", path, marks, source)
    return value


def _check_counts(values, path, marks, source):
    if not isinstance(values, list) or not values:
        raise _err("expected a non-empty list of positive integers", path, marks, source)
    for i, v in enumerate(values):
        _check_int(v, f"{path}[{i}]", marks, source, minimum=1)
    return list(values)


def parse_config(data: dict, marks: dict | None = None, source: str | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise _err("top level must be a mapping", "", marks, source)
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise _err(f"unknown key {unknown[0]!r}", unknown[0], marks, source)
    merged = {**copy.deepcopy(DEFAULTS), **copy.deepcopy(data)}

    inst = merged["instantiation"]
    if inst not in INSTANTIATIONS:
        raise _err(f"instantiation must be one of {INSTANTIATIONS}, got {inst!r}", "instantiation", marks, source)
    exp_id = merged["experiment_id"] or inst
    if not isinstance(exp_id, str):
        raise _err("experiment_id must be a string", "experiment_id", marks, source)
    seed = _check_int(merged["master_seed"], "master_seed", marks, source, minimum=0)
    if seed >= 2 ** 64:
        raise _err("master_seed must fit in 64 bits", "master_seed", marks, source)
    trials = _check_int(merged["trials"], "trials", marks, source, minimum=1)
    sweep = merged["sweep"]
    if not isinstance(sweep, dict) or set(sweep) - {"m", "n"}:
        raise _err("sweep must be a mapping with keys m and n", "sweep", marks, source)
    sweep = {**DEFAULTS["sweep"], **sweep}
    m_values = _check_counts(sweep["m"], "sweep.m", marks, source)
    n_values = _check_counts(sweep["n"], "sweep.n", marks, source)
    if merged["erm_method"] not in ERM_METHODS:
        raise _err(f"erm_method must be one of {ERM_METHODS}", "erm_method", marks, source)
    mc = _check_int(merged["mc_count"], "mc_count", marks, source, minimum=1)
    aux = _check_int(merged["aux_mc_count"], "aux_mc_count", marks, source, minimum=0)
    if not isinstance(merged["baseline"], bool):
        raise _err("baseline must be true or false", "baseline", marks, source)
    for key in ("truth", "optimizer"):
        if not isinstance(merged[key], dict):
            raise _err(f"{key} must be a mapping", key, marks, source)
    checks = merged["checks"]
    if not isinstance(checks, list):
        raise _err("checks must be a list", "checks", marks, source)
    for i, chk in enumerate(checks):
        path = f"checks[{i}]"
        if not isinstance(chk, dict) or chk.get("kind") not in CHECK_KINDS:
            raise _err(f"each check needs kind in {CHECK_KINDS}", path, marks, source)
        if chk["kind"] == "slope":
            if chk.get("axis") not in ("m", "n"):
                raise _err("slope check needs axis m or n", f"{path}.axis", marks, source)
            rng = chk.get("target_range")
            if not (isinstance(rng, list) and len(rng) == 2 and rng[0] <= rng[1]):
                raise _err("target_range must be [low, high]", f"{path}.target_range", marks, source)
    return ExperimentConfig(exp_id, inst, seed, trials, m_values, n_values, merged["erm_method"], mc, aux,
                            merged["baseline"], merged["truth"], merged["optimizer"], checks, str(merged["out"]),
                            raw=data)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(str(exc.problem), "", mark.line + 1 if mark else None,
                          mark.column + 1 if mark else None, str(path)) from exc
    marks = _marks(node) if node is not None else {}
    return parse_config(data or {}, marks, str(path))
