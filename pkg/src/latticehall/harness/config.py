"""Experiment configuration: YAML parsing, overrides and static validation.

Grammar (YAML)::

    kind: chern            # spectrum | chern | kubo-vs-time | gap-scan | locality | corr-decay
    model:
      preset: hofstadter   # any name in latticehall.models.PRESETS
      params: {L1: 6, L2: 3, flux: [1, 3], N: 6}
    # or an explicit model:
    #   lattice: [4, 2]
    #   N: 2
    #   hoppings: [{to: [1, 0], from: [0, 0], t: [-1.0, 0.0]}, ...]
    #   interactions: [{sites: [[0, 0], [1, 0]], U: 2.0}, ...]
    params: {...}          # kind-specific, see KIND_DEFAULTS
    output: out/run1
    cache: true
    workers: 1

Overrides are ``dotted.key=value`` strings; the value is parsed as YAML.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..lattice import LatticeSpec, wrap
from ..manybody import HermiticityError, HoppingSet, InteractionSet
from ..models import PRESETS, HamiltonianSpec, _flux
from ..spectra import DENSE_THRESHOLD

KINDS = ("spectrum", "chern", "kubo-vs-time", "gap-scan", "locality", "corr-decay")

KIND_DEFAULTS = {
    "spectrum": {"phi": [0.0, 0.0], "levels": 8, "q_hint": None},
    "chern": {"grid": 12, "q_hint": None, "refine": True, "k1": 0, "k2": 0, "mix_seed": None,
              "sigma_point": [0.3, 0.7], "fd_step": 1e-4, "alphas": [], "alpha_site": [0, 0],
              "deformed_cut": None, "gauge_moves": 0},
    "kubo-vs-time": {"phi": [0.0, 0.0], "q_hint": None, "eta": [0.1, 0.05], "T": [50.0, 100.0],
                     "window": None, "region": None, "anchor": [0, 0], "fd_step": 1e-4},
    "gap-scan": {"grid": 12, "q_hint": None},
    "locality": {"omega": [0, 1, 2, 3], "site": 2, "t_max": 2.0, "samples": 21,
                 "lr_sites": 8, "lr_t_max": 3.0, "lr_samples": 31},
    "corr-decay": {"source": [0, 0], "phi": [0.0, 0.0], "q_hint": None},
}

NEEDS_FULL = {"kubo-vs-time", "corr-decay"}


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = diagnostics
        super().__init__("; ".join(d["message"] for d in diagnostics if d["level"] == "error"))


@dataclass
class ExperimentConfig:
    kind: str
    model: dict
    params: dict
    output: str = "out"
    cache: bool = True
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    tolerances: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def content_hash(self) -> str:
        payload = {k: v for k, v in self.raw.items() if k not in ("output", "workers", "cache")}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _set_dotted(data: dict, key: str, value):
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([{"level": "error", "field": key, "message": f"cannot override into {p!r}"}])
    node[parts[-1]] = value


def apply_overrides(data: dict, overrides) -> dict:
    data = copy.deepcopy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError([{"level": "error", "field": item,
                                "message": f"override {item!r} is not of the form key=value"}])
        key, value = item.split("=", 1)
        _set_dotted(data, key.strip(), yaml.safe_load(value))
    return data


def load_raw(path: str | Path, overrides=()) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError([{"level": "error", "field": "path", "message": f"cannot read config: {err}"}])
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        raise ConfigError([{"level": "error", "field": "path", "message": f"malformed YAML: {err}"}])
    if not isinstance(data, dict):
        raise ConfigError([{"level": "error", "field": "path", "message": "config must be a mapping"}])
    return apply_overrides(data, overrides)


def _diag(out, level, fld, msg):
    out.append({"level": level, "field": fld, "message": msg})


def build_model(block: dict) -> HamiltonianSpec:
    """Model from a config block (preset or explicit lists)."""
    if "preset" in block:
        name = block["preset"]
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        params = dict(block.get("params") or {})
        if name == "well_insulator" and "wells" in params:
            params["wells"] = tuple(tuple(w) for w in params["wells"])
        return PRESETS[name](**params)
    L1, L2 = block["lattice"]
    spec = LatticeSpec(int(L1), int(L2))
    pairs = {}
    for h in block.get("hoppings", []):
        t = h["t"]
        amp = complex(t[0], t[1]) if isinstance(t, (list, tuple)) else complex(t)
        pairs[(wrap(h["to"], spec), wrap(h["from"], spec))] = amp
    hops = HoppingSet.from_pairs(spec, pairs, block.get("R_hop"))
    terms = []
    for term in block.get("interactions", []):
        terms.append((tuple(spec.index(s) for s in term["sites"]), term["U"]))
    return HamiltonianSpec(spec, hops, InteractionSet(tuple(terms)), block.get("N"), "explicit",
                           {"lattice": [L1, L2], "N": block.get("N")})


def _model_dims(block: dict):
    if "preset" in block:
        p = block.get("params") or {}
        if block["preset"] == "chain":
            return p.get("L"), 1
        return p.get("L1"), p.get("L2")
    lat = block.get("lattice") or [None, None]
    return lat[0], lat[1]


def validate(data: dict) -> list[dict]:
    """Aggregate every problem with a raw config; never stops at the first."""
    diags: list[dict] = []
    kind = data.get("kind")
    if kind not in KINDS:
        _diag(diags, "error", "kind", f"kind must be one of {KINDS}, got {kind!r}")
    block = data.get("model")
    if not isinstance(block, dict):
        _diag(diags, "error", "model", "missing model block")
        return diags
    params = dict(KIND_DEFAULTS.get(kind, {}))
    unknown = set(data.get("params") or {}) - set(params)
    for key in sorted(unknown):
        _diag(diags, "error", f"params.{key}", f"unknown parameter {key!r} for kind {kind!r}")
    params.update(data.get("params") or {})
    L1, L2 = _model_dims(block)
    chainlike = block.get("preset") == "chain"
    for name, L in (("L1", L1), ("L2", L2)):
        if not isinstance(L, int) or L < 1:
            _diag(diags, "error", f"model.{name}", f"{name} must be a positive integer, got {L!r}")
    if isinstance(L1, int) and L1 % 2 and not chainlike:
        _diag(diags, "error", "model.L1", f"L1={L1} is odd: lattice sizes must be positive even integers")
    if isinstance(L2, int) and L2 % 2 and not chainlike:
        _diag(diags, "warning", "model.L2",
              f"L2={L2} is odd: lattice sizes are nominally even; accepted for desk-scale runs")
    if block.get("preset") in ("hofstadter", "hofstadter_hubbard"):
        p = block.get("params") or {}
        try:
            alpha = _flux(p.get("flux", (0, 1) if block["preset"] == "hofstadter" else (1, 4)))
            if isinstance(L1, int) and (L1 * alpha).denominator != 1:
                _diag(diags, "error", "model.params.flux",
                      f"flux {alpha} is incommensurate with L1={L1}: need m | L1")
        except (TypeError, ValueError, ZeroDivisionError) as err:
            _diag(diags, "error", "model.params.flux", f"bad flux: {err}")
    model = None
    if not any(d["level"] == "error" for d in diags):
        try:
            model = build_model(block)
        except HermiticityError as err:
            _diag(diags, "error", "model.hoppings", f"hoppings are not Hermitian: {err}")
        except (TypeError, ValueError, KeyError) as err:
            _diag(diags, "error", "model", f"cannot build model: {err}")
    if model is None and isinstance(L1, int) and isinstance(L2, int) and kind in NEEDS_FULL:
        N = (block.get("params") or {}).get("N") if "preset" in block else block.get("N")
        if isinstance(N, int) and 0 <= N <= L1 * L2 and math.comb(L1 * L2, N) > DENSE_THRESHOLD:
            _diag(diags, "error", "model",
                  f"{kind} needs the full spectrum but the basis has dimension {math.comb(L1 * L2, N)} "
                  f"> dense_threshold={DENSE_THRESHOLD}")
    if model is not None:
        lat = model.lattice
        for key, bound in (("k1", lat.L1), ("k2", lat.L2)):
            if key in params and not 0 <= int(params[key]) < bound:
                _diag(diags, "error", f"params.{key}", f"cut position {params[key]} outside [0, {bound})")
        if "anchor" in params:
            k, l = params["anchor"]
            if not (0 <= k < lat.L1 and 0 <= l < lat.L2):
                _diag(diags, "error", "params.anchor", f"anchor {params['anchor']} outside the lattice")
        if kind != "locality":
            if model.N is None:
                _diag(diags, "error", "model.N", "particle number N is required")
            else:
                dim = math.comb(lat.n_sites, model.N)
                full = kind in NEEDS_FULL
                if full and dim > DENSE_THRESHOLD:
                    _diag(diags, "error", "model",
                          f"{kind} needs the full spectrum but the basis has dimension {dim} "
                          f"> dense_threshold={DENSE_THRESHOLD}")
        if kind == "locality":
            if lat.n_sites > 12 or int(params.get("lr_sites", 8)) > 12:
                _diag(diags, "error", "model", "locality runs use the full Fock space: at most 12 sites")
            if not set([params["site"]]) <= set(params["omega"]):
                _diag(diags, "error", "params.omega", "site must lie inside omega")
    for key in ("grid",):
        if key in params and (not isinstance(params[key], int) or params[key] < 2):
            _diag(diags, "error", f"params.{key}", "grid must be an integer >= 2")
    if kind == "kubo-vs-time":
        if params.get("window") is not None and params["window"] < 0:
            _diag(diags, "error", "params.window", "window half-width must be nonnegative")
        if params.get("region") is not None and model is not None:
            side = 2 * params["region"] + 1
            if side > min(model.lattice.dims):
                _diag(diags, "error", "params.region",
                      f"region side {side} exceeds the lattice {model.lattice.dims}")
    w = data.get("workers")
    if w is not None and (not isinstance(w, int) or w < 1):
        _diag(diags, "error", "workers", "workers must be a positive integer")
    return diags


def load_config(path: str | Path, overrides=()) -> ExperimentConfig:
    data = load_raw(path, overrides)
    diags = validate(data)
    if any(d["level"] == "error" for d in diags):
        raise ConfigError(diags)
    params = dict(KIND_DEFAULTS[data["kind"]])
    params.update(data.get("params") or {})
    base = Path(path).parent
    out = data.get("output", "out")
    out = str(out if Path(out).is_absolute() else base / out)
    return ExperimentConfig(data["kind"], data["model"], params, out, bool(data.get("cache", True)),
                            int(data.get("workers") or (os.cpu_count() or 1)),
                            dict(data.get("tolerances") or {}), data)
