"""Experiment configuration: a flat sectioned text format.

Grammar (one documented format, no alternatives)::

    # comment
    [section]
    key = value

Values are typed by shape: ``[...]`` parses as a (nested) numeric list /
matrix, ``true``/``false`` as booleans, integer and float literals as
numbers, anything else as a bare string.  Unknown sections or keys are
rejected, so typos fail loudly before a run starts.
"""

from __future__ import annotations

import ast
import hashlib

from .errors import ConfigError

EXPERIMENTS = ("analytic-lqr", "qlearn-lqr", "cstr", "tube")


def parse_config_text(text: str) -> dict:
    """Parse the sectioned key = value format into nested dicts."""
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section name")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        current[key] = _parse_value(value, lineno)
    return sections


def _parse_value(token: str, lineno: int):
    if token.startswith("["):
        try:
            value = ast.literal_eval(token)
        except (ValueError, SyntaxError) as exc:
            raise ConfigError(f"line {lineno}: malformed list literal: {exc}") from exc
        return value
    lowered = token.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def render_config(sections: dict) -> str:
    """Canonical serialization used for hashing and manifests."""
    lines = []
    for section in sorted(sections):
        lines.append(f"[{section}]")
        for key in sorted(sections[section]):
            lines.append(f"{key} = {sections[section][key]!r}")
    return "\n".join(lines) + "\n"


def config_hash(sections: dict) -> str:
    return hashlib.sha256(render_config(sections).encode()).hexdigest()


def validate_config(sections: dict, schema: dict, experiment: str) -> dict:
    """Merge user sections over schema defaults; reject unknown keys."""
    out: dict = {}
    for section, keys in schema.items():
        out[section] = {key: default for key, (_, default) in keys.items()}
    for section, body in sections.items():
        if section not in schema:
            raise ConfigError(f"unknown section [{section}] for {experiment}")
        for key, value in body.items():
            if key not in schema[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}] for {experiment}")
            expected, _ = schema[section][key]
            out[section][key] = _coerce(value, expected, section, key)
    return out


def _coerce(value, expected: str, section: str, key: str):
    where = f"[{section}] {key}"
    if expected == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if expected == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if expected == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true/false, got {value!r}")
        return value
    if expected == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if expected == "list":
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return value
    if expected == "matrix":
        if not (isinstance(value, list) and value and all(isinstance(r, list) for r in value)):
            raise ConfigError(f"{where} must be a matrix (list of rows), got {value!r}")
        return value
    raise ConfigError(f"internal: unknown type {expected}")


# ---------------------------------------------------------------------------
# per-experiment schemas: {section: {key: (type, default)}}

ANALYTIC_LQR_SCHEMA = {
    "experiment": {"seed": ("int", 0)},
    "grid": {
        "gamma_min": ("float", 0.02),
        "gamma_max": ("float", 1.0),
        "points": ("int", 50),
    },
}

QLEARN_LQR_SCHEMA = {
    "experiment": {"seed": ("int", 0)},
    "problem": {
        "a": ("float", 2.0),
        "b": ("float", 1.0),
        "state_weight": ("float", 1.0),
        "input_weight": ("float", 1.0),
        "terminal_feedback": ("float", 1.2),
    },
    "learning": {
        "alpha": ("float", 0.1),
        "batches": ("int", 2000),
        "batch_size": ("int", 10),
        "epsilon": ("float", 1e-8),
        "exploration": ("float", 1.0),
        "state_range": ("float", 1.0),
    },
    "sweep": {
        "horizons": ("list", [5, 10, 20, 40]),
        "horizon_gamma": ("float", 0.1),
        "gammas": ("list", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
        "gamma_horizon": ("int", 40),
    },
}

CSTR_SCHEMA = {
    "experiment": {"seed": ("int", 0)},
    "mpc": {
        "horizon": ("int", 100),
        "substeps": ("int", 10),
        "gamma": ("float", 0.9),
    },
    "learning": {
        "alpha": ("float", 0.1),
        "batches": ("int", 8),
        "batch_size": ("int", 40),
        "epochs": ("int", 1000),
        "epsilon": ("float", 1e-4),
        "exploration": ("float", 1.0),
        "initial_conditions": ("matrix", [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0],
                                          [0.8, 0.3], [0.3, 0.8], [0.4, 0.6], [0.6, 0.4]]),
        "initial_stage_weights": ("list", [1.0, 1.0, 0.01]),
    },
}

TUBE_SCHEMA = {
    "experiment": {"seed": ("int", 0)},
    "problem": {
        "gamma": ("float", 0.5),
        "horizon": ("int", 50),
        "state_bound": ("float", 1.0),
        "input_bound": ("float", 10.0),
        "target": ("list", [-3.0, 0.0]),
        "target_input": ("float", 0.0),
        "true_weights": ("list", [1.0, 0.01, 0.01]),
    },
    "noise": {
        "radius": ("float", 0.01),
        "init_samples": ("int", 30),
    },
    "learning": {
        "alpha": ("float", 0.1),
        "epochs": ("int", 500),
        "batch_size": ("int", 20),
        "epsilon": ("float", 1e-6),
        "exploration": ("float", 0.02),
        "initial_stage_weights": ("list", [1.0, 0.01, 0.01]),
        "mrpi_eps": ("float", 1e-3),
    },
}

SCHEMAS = {
    "analytic-lqr": ANALYTIC_LQR_SCHEMA,
    "qlearn-lqr": QLEARN_LQR_SCHEMA,
    "cstr": CSTR_SCHEMA,
    "tube": TUBE_SCHEMA,
}


def load_experiment_config(experiment: str, text: str | None = None, seed=None) -> dict:
    """Validated config for an experiment, from optional text and seed override."""
    if experiment not in SCHEMAS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}"
        )
    sections = parse_config_text(text) if text else {}
    cfg = validate_config(sections, SCHEMAS[experiment], experiment)
    if seed is not None:
        cfg["experiment"]["seed"] = int(seed)
    return cfg
