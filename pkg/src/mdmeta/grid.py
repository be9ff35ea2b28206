"""Scenario-grid configuration: JSON schema, presets and expansion.

A config holds grid blocks. Each block crosses its lists

    K, n_equal, n_unequal, q, sigma2 ([sigma2_c, sigma2_t] pairs), tau2, mu

and top-level values of those keys act as defaults for every block. ``tau2``
is a list of values, a ``{"start", "stop", "step"}`` range (inclusive), or a
list mixing both. Run settings live at the top level only: ``reps``,
``seed``, ``level``, ``output`` and ``methods``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .errors import ConfigError, ValidationError
from .sim import Scenario, resolve_methods

GRID_KEYS = ("K", "n_equal", "n_unequal", "q", "sigma2", "tau2", "mu")
RUN_KEYS = ("reps", "seed", "level", "output", "methods")
TOP_KEYS = set(GRID_KEYS) | set(RUN_KEYS) | {"blocks", "name"}

UNEQUAL_PATTERNS = [
    [12, 16, 18, 20, 84],
    [24, 32, 36, 40, 168],
    [64, 72, 76, 80, 208],
    [124, 132, 136, 140, 268],
]
_FINE = {"start": 0.0, "stop": 0.1, "step": 0.01}
_COARSE = {"start": 0.0, "stop": 1.0, "step": 0.1}

PRESETS = {
    "table2": {
        "name": "table2",
        "K": [5, 10, 30],
        "n_equal": [20, 40, 100, 250],
        "n_unequal": UNEQUAL_PATTERNS,
        "q": [0.5, 0.75],
        "mu": [0.0],
        "reps": 10000,
        "seed": 20240101,
        "blocks": [
            {"sigma2": [[1, 1], [1, 2]], "tau2": [_FINE, _COARSE]},
            {"sigma2": [[10, 10], [10, 20]], "tau2": [_COARSE]},
        ],
    },
    "table2-small": {
        "name": "table2-small",
        "K": [5, 10, 30],
        "n_equal": [20, 40, 100, 250],
        "n_unequal": [],
        "q": [0.5, 0.75],
        "sigma2": [[1, 1], [1, 2]],
        "tau2": [_FINE, _COARSE],
        "mu": [0.0],
        "reps": 100,
        "seed": 20240101,
    },
}


def tau2_range(start: float, stop: float, step: float) -> list[float]:
    """Inclusive arithmetic grid, rounded so 0.1 from either series is one value."""
    if not step > 0 or stop < start:
        raise ConfigError(f"bad tau2 range start={start} stop={stop} step={step}")
    n = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + k * step, 12) for k in range(n + 1)]


def _tau2_values(spec) -> list[float]:
    items = spec if isinstance(spec, list) else [spec]
    out = []
    for item in items:
        if isinstance(item, dict):
            extra = set(item) - {"start", "stop", "step"}
            if extra or len(item) != 3:
                raise ConfigError(f"tau2 range needs exactly start/stop/step, got {sorted(item)}")
            out.extend(tau2_range(float(item["start"]), float(item["stop"]), float(item["step"])))
        elif isinstance(item, (int, float)) and not isinstance(item, bool):
            out.append(float(item))
        else:
            raise ConfigError(f"tau2 entries must be numbers or ranges, got {item!r}")
    return sorted(set(out))


def _num_list(block, key, cast=float):
    val = block.get(key)
    if val is None:
        raise ConfigError(f"missing grid key {key!r}")
    if not isinstance(val, list):
        val = [val]
    try:
        return [cast(v) for v in val]
    except (TypeError, ValueError):
        raise ConfigError(f"{key!r} must hold numbers, got {val!r}") from None


def load_config(source) -> dict:
    """Parse a config from a preset name, a JSON file path or a dict."""
    if isinstance(source, dict):
        cfg = json.loads(json.dumps(source))
    elif str(source) in PRESETS:
        cfg = json.loads(json.dumps(PRESETS[str(source)]))
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"no config file or preset named {str(source)!r}; presets: {', '.join(PRESETS)}")
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for block in cfg.get("blocks", []):
        if not isinstance(block, dict):
            raise ConfigError("each block must be a JSON object")
        bad = set(block) - set(GRID_KEYS)
        if bad:
            raise ConfigError(f"unknown block keys: {', '.join(sorted(bad))}")
    reps = cfg.get("reps", 1000)
    if isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
        raise ConfigError(f"reps must be a positive integer, got {reps!r}")
    seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    level = cfg.get("level", 0.95)
    if not isinstance(level, (int, float)) or not 0 < level < 1:
        raise ConfigError(f"level must lie in (0, 1), got {level!r}")
    if "methods" in cfg:
        if not isinstance(cfg["methods"], list):
            raise ConfigError("methods must be a list of tags")
        resolve_methods(cfg["methods"])
    expand_grid(cfg)


def expand_grid(cfg: dict) -> list[Scenario]:
    """Cross product of every block, deduplicated and in stable key order."""
    blocks = cfg.get("blocks") or [{}]
    reps = cfg.get("reps", 1000)
    seed = cfg.get("seed", 0)
    seen = {}
    for block in blocks:
        merged = {k: cfg[k] for k in GRID_KEYS if k in cfg}
        merged.update(block)
        Ks = _num_list(merged, "K", int)
        patterns = [[int(n)] for n in merged.get("n_equal", [])]
        unequal = merged.get("n_unequal", [])
        if not isinstance(unequal, list) or not all(isinstance(p, list) and p for p in unequal):
            raise ConfigError("n_unequal must be a list of size lists")
        patterns += [[int(n) for n in p] for p in unequal]
        if not patterns:
            raise ConfigError("grid needs at least one of n_equal / n_unequal")
        qs = _num_list(merged, "q")
        pairs = merged.get("sigma2")
        if not isinstance(pairs, list) or not all(isinstance(p, list) and len(p) == 2 for p in pairs):
            raise ConfigError("sigma2 must be a list of [sigma2_c, sigma2_t] pairs")
        if "tau2" not in merged:
            raise ConfigError("missing grid key 'tau2'")
        taus = _tau2_values(merged["tau2"])
        mus = _num_list(merged, "mu") if "mu" in merged else [0.0]
        for K in Ks:
            for pat in patterns:
                if K % len(pat):
                    raise ConfigError(f"size pattern {pat} does not divide K={K}")
                for q in qs:
                    for s2c, s2t in pairs:
                        for tau2 in taus:
                            for mu in mus:
                                try:
                                    sc = Scenario(K, tuple(pat), q, float(s2c), float(s2t), tau2, mu, reps, seed)
                                except ValidationError as exc:
                                    raise ConfigError(f"invalid scenario: {exc}") from None
                                seen.setdefault(sc.keys(), sc)
    return sorted(seen.values(), key=Scenario.sort_key)
