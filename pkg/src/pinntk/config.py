"""Experiment configuration: JSON schema, defaults and validation.

A config is a JSON object::

    {
      "command": "spectrum",            # kernel | spectrum | converge | train | ratio
      "seed": 0,
      "dim": 1,
      "n": 1000,                        # sample count
      "operators": ["id", "dxx"],       # presets or [{"coeff": c, "index": [..]}, ...]
      "activations": ["tanh"],          # spectrum sweeps these
      "network": {"widths": [1, 1024, 1], "activation": "tanh",
                  "use_bias": false, "parameterization": "ntk"},
      "kernel": {"depth": 1, "activation": "tanh", "order": 4, "nodes": 128},
      "converge": {"widths": [256, 1024], "seeds": [0, 1], "grid": 21},
      "train": {"mode": "adam", "variant": "L1", "a": [1, 5], "w": 0.5,
                "lr": 1e-5, "steps": 1000, "normalization": "mean",
                "betas": [0.9, 0.999], "eps": 1e-8, "grid": 101,
                "seeds": [0]},
      "ratio": {"grid": 200, "count": 20, "c_t": 0.10132, "slack": 0.1,
                "operator": "neg_dxx"},
      "kernel_grid": {"grid": 21, "operator": "id"},
      "svg": true,
      "out": "results/run"
    }

Only the blocks the command reads need to be present.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .activations import ACTIVATIONS, get_activation
from .multiindex import PRESETS, DiffOperator, preset

COMMANDS = ("kernel", "spectrum", "converge", "train", "ratio")

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "dim": 1,
    "n": 100,
    "operators": ["id"],
    "svg": False,
    "network": {"widths": None, "activation": "tanh", "use_bias": False, "parameterization": "ntk"},
    "kernel": {"depth": 1, "activation": "tanh", "order": None, "nodes": 128},
    "converge": {"widths": [256, 1024, 4096, 16384], "seeds": list(range(10)), "grid": 21},
    "train": {
        "mode": "adam",
        "variant": "L1",
        "a": [1.0],
        "w": 0.5,
        "lr": 1e-5,
        "steps": 1000,
        "normalization": "mean",
        "betas": [0.9, 0.999],
        "eps": 1e-8,
        "grid": 101,
        "seeds": [0],
        "checkpoints": None,
    },
    "ratio": {"grid": 200, "count": 20, "c_t": None, "slack": 0.1, "operator": "neg_dxx"},
    "kernel_grid": {"grid": 21, "operator": "id"},
}


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, data: dict, command: str | None = None) -> "ExperimentConfig":
        data = dict(data)
        if command is not None:
            data.setdefault("command", command)
        return cls(_merge(DEFAULTS, data))

    @classmethod
    def load(cls, path, command: str | None = None) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()), command)

    def __getitem__(self, key):
        return self.raw[key]

    def get(self, key, default=None):
        return self.raw.get(key, default)

    @property
    def command(self) -> str:
        return self.raw.get("command")

    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def operator_order(self, spec) -> int:
        return _operator(spec, self.raw["dim"]).order


def _operator(spec, dim: int) -> DiffOperator:
    if isinstance(spec, str):
        return preset(spec, dim)
    return DiffOperator.from_records(dim, list(spec))


def _check_operator(spec, dim, field, violations) -> DiffOperator | None:
    if isinstance(spec, str):
        if spec not in PRESETS:
            violations.append(f"{field}: unknown operator preset {spec!r}")
            return None
    elif isinstance(spec, list):
        for r in spec:
            if not isinstance(r, dict) or "coeff" not in r or "index" not in r:
                violations.append(f"{field}: operator records need 'coeff' and 'index'")
                return None
            if len(r["index"]) != dim:
                violations.append(f"{field}: index {r['index']} does not have length dim={dim}")
                return None
            if any(int(i) < 0 for i in r["index"]):
                violations.append(f"{field}: index entries must be non-negative")
                return None
    else:
        violations.append(f"{field}: operator must be a preset name or a list of records")
        return None
    try:
        return _operator(spec, dim)
    except (ValueError, KeyError) as exc:
        violations.append(f"{field}: {exc}")
        return None


def _check_activation(name, field, violations):
    try:
        return get_activation(name)
    except (KeyError, AttributeError):
        violations.append(f"{field}: unknown activation {name!r} (known: {sorted(ACTIVATIONS)})")
        return None


def _positive_int(v, field, violations, minimum=1):
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        violations.append(f"{field}: must be an integer >= {minimum}")
        return False
    return True


def validate(config: ExperimentConfig | dict) -> list[str]:
    """Every violated precondition as ``"field: constraint"``; empty when runnable."""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    c = config.raw
    v: list[str] = []
    cmd = c.get("command")
    if cmd not in COMMANDS:
        v.append(f"command: must be one of {COMMANDS}")
        return v
    if not isinstance(c.get("seed"), int) or isinstance(c.get("seed"), bool):
        v.append("seed: must be an explicit integer")
    dim_ok = _positive_int(c.get("dim"), "dim", v)
    dim = c["dim"] if dim_ok else 1
    _positive_int(c.get("n"), "n", v)

    net = c["network"]
    k = c["kernel"]

    ops = []
    if cmd in ("spectrum", "converge") or (cmd == "train" and c["train"]["mode"] == "compare"):
        if not isinstance(c.get("operators"), list) or not c["operators"]:
            v.append("operators: need a non-empty list")
        else:
            for i, spec in enumerate(c["operators"]):
                op = _check_operator(spec, dim, f"operators[{i}]", v)
                if op is not None:
                    ops.append(op)
    max_order = max((op.order for op in ops), default=0)
    order = k.get("order")
    if order is not None:
        if not isinstance(order, int) or isinstance(order, bool) or order < 0:
            v.append("kernel.order: must be a non-negative integer")
        elif max_order > order:
            v.append(f"kernel.order: operator order {max_order} exceeds kernel derivative order k={order}")

    if cmd in ("kernel", "converge", "ratio"):
        _positive_int(k.get("depth"), "kernel.depth", v)
        act = _check_activation(k.get("activation"), "kernel.activation", v)
        if not isinstance(k.get("nodes"), int) or k["nodes"] < 20:
            v.append("kernel.nodes: must be an integer >= 20")
        if act is not None and order is not None and isinstance(order, int) and order + 1 > act.max_derivative:
            v.append(f"kernel.activation: {act.name} does not support derivative order {order}")

    if cmd in ("spectrum", "converge", "train"):
        widths = net.get("widths")
        if widths is not None:
            if not isinstance(widths, list) or len(widths) < 3 or any(
                not isinstance(m, int) or m < 1 for m in widths
            ):
                v.append("network.widths: need a list of >= 3 positive integers")
            else:
                if widths[0] != dim:
                    v.append(f"network.widths: first width must equal dim={dim}")
                if widths[-1] != 1:
                    v.append("network.widths: last width must be 1")
        if net.get("parameterization") not in ("ntk", "standard"):
            v.append("network.parameterization: must be 'ntk' or 'standard'")
        acts = c.get("activations") or [net.get("activation")]
        for i, name in enumerate(acts):
            act = _check_activation(name, f"activations[{i}]" if c.get("activations") else "network.activation", v)
            # backward pass composes sigma' to the operator order
            if act is not None and max_order + 1 > act.max_derivative:
                v.append(f"network.activation: {act.name} cannot support operator order {max_order}")

    if cmd == "converge":
        cv = c["converge"]
        if not isinstance(cv.get("widths"), list) or not cv["widths"] or any(
            not isinstance(m, int) or m < 1 for m in cv["widths"]
        ):
            v.append("converge.widths: need a non-empty list of positive integers")
        if not isinstance(cv.get("seeds"), list) or not cv["seeds"] or any(
            not isinstance(s, int) for s in cv["seeds"]
        ):
            v.append("converge.seeds: need an explicit non-empty list of integer seeds")
        _positive_int(cv.get("grid"), "converge.grid", v)

    if cmd == "train":
        t = c["train"]
        if t.get("mode") not in ("adam", "gd", "compare"):
            v.append("train.mode: must be 'adam', 'gd' or 'compare'")
        if t.get("variant") not in ("plain", "L1", "L2", "L3"):
            v.append("train.variant: must be one of plain, L1, L2, L3")
        if t.get("variant") == "L3":
            w = t.get("w")
            if not isinstance(w, (int, float)) or not 0.0 < w < 1.0:
                v.append("train.w: w must lie in (0,1)")
        if t.get("variant") in ("L1", "L2", "L3") and dim != 1:
            v.append("dim: losses L1-L3 are defined on [0, 1] (dim=1)")
        if not isinstance(t.get("lr"), (int, float)) or not t["lr"] > 0:
            v.append("train.lr: must be > 0")
        if not isinstance(t.get("steps"), int) or t["steps"] < 0:
            v.append("train.steps: must be a non-negative integer")
        a = t.get("a")
        if not isinstance(a, list) or not a or any(not isinstance(x, (int, float)) for x in a):
            v.append("train.a: need a non-empty list of frequencies")
        if t.get("normalization") not in ("mean", "half"):
            v.append("train.normalization: must be 'mean' or 'half'")
        if not isinstance(t.get("seeds"), list) or not t["seeds"]:
            v.append("train.seeds: need an explicit non-empty list of integer seeds")
        if t.get("mode") == "compare":
            if t.get("normalization") != "half":
                v.append("train.normalization: compare mode needs 'half' (1/(2n)) to match the kernel flow")
            if net.get("use_bias") or net.get("parameterization") != "ntk":
                v.append("network: compare mode needs the bias-free NTK parameterization")
            if t.get("variant") != "plain":
                v.append("train.variant: compare mode uses the plain operator loss")
        elif net.get("widths") is None:
            v.append("network.widths: required for training")

    if cmd == "ratio":
        r = c["ratio"]
        if dim != 1:
            v.append("dim: the ratio check runs on [0, 1]")
        _positive_int(r.get("grid"), "ratio.grid", v, minimum=2)
        if _positive_int(r.get("count"), "ratio.count", v) and isinstance(r.get("grid"), int):
            if r["count"] > r["grid"]:
                v.append("ratio.count: cannot exceed ratio.grid")
        if not isinstance(r.get("slack"), (int, float)) or r["slack"] < 0:
            v.append("ratio.slack: must be >= 0")
        op = _check_operator(r.get("operator"), dim, "ratio.operator", v)
        order = k.get("order")
        if op is not None and isinstance(order, int) and op.order > order:
            v.append(f"kernel.order: operator order {op.order} exceeds kernel derivative order k={order}")

    if cmd == "kernel":
        kg = c["kernel_grid"]
        _positive_int(kg.get("grid"), "kernel_grid.grid", v)
        op = _check_operator(kg.get("operator"), dim, "kernel_grid.operator", v)
        order = k.get("order")
        if op is not None and isinstance(order, int) and op.order > order:
            v.append(f"kernel.order: operator order {op.order} exceeds kernel derivative order k={order}")
    return v
