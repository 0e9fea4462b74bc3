"""Run configuration: a flat dotted-key schema, a strict plain-text parser,
and a deterministic snapshot writer.

Files hold one ``section.key = value`` assignment per line; ``#`` starts a
comment and blank lines are ignored. Every key must appear in the schema, so
typos fail loudly instead of silently running defaults.
"""

from __future__ import annotations

from .errors import ConfigError

# key -> (type, default); bool values are written/read as true/false
SCHEMA: dict[str, tuple[type, object]] = {
    "run.seed": (int, 0),
    "run.out": (str, "runs/out"),
    "run.workers": (int, 1),
    "model.preset": (str, "small"),
    "model.horizon": (int, 8),
    "model.n_experts": (int, 8),
    "model.top_k": (int, 2),
    "model.p_drop": (float, 0.3),
    "schedule.kind": (str, "squared_cosine"),
    "schedule.steps": (int, 100),
    "schedule.beta_start": (float, 1e-4),
    "schedule.beta_end": (float, 0.02),
    "data.path": (str, "demos.kdpd"),
    "data.scenario": (str, "in_ramp"),
    "data.episodes": (int, 200),
    "train.steps": (int, 2000),
    "train.batch_size": (int, 64),
    "train.lr": (float, 1e-4),
    "train.warmup_steps": (int, 100),
    "train.lambda_bal": (float, 0.01),
    "train.gamma_mi": (float, 0.01),
    "train.log_every": (int, 25),
    "train.checkpoint_every": (int, 500),
    "train.resume": (str, ""),
    "eval.scenario": (str, "all"),
    "eval.episodes": (int, 50),
    "eval.eta": (float, 0.0),
    "eval.policy": (str, "model"),
    "eval.checkpoint": (str, ""),
    "eval.data": (str, ""),
    "eval.latency": (bool, False),
    "eval.latency_trials": (int, 100),
}


def default_config() -> dict:
    return {key: default for key, (_, default) in SCHEMA.items()}


def _parse_value(key: str, raw: str, where: str):
    kind, _ = SCHEMA[key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"{where}: value {raw!r} for {key} is not a valid {kind.__name__}")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse a config document into a complete dict (defaults filled in)."""
    cfg = default_config()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        where = f"{source}:{lineno}"
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, eq, raw = body.partition("=")
        if not eq:
            raise ConfigError(f"{where}: expected 'key = value', got {line.strip()!r}")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        seen.add(key)
        cfg[key] = _parse_value(key, raw, where)
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return parse_config_text(text, source=str(path))


def apply_overrides(cfg: dict, overrides: dict) -> dict:
    """Overlay flag-supplied values; strings are parsed, typed values checked."""
    out = dict(cfg)
    for key, value in overrides.items():
        if key not in SCHEMA:
            raise ConfigError(f"override: unknown key {key!r}")
        kind, _ = SCHEMA[key]
        if isinstance(value, str) and kind is not str:
            value = _parse_value(key, value, "override")
        elif kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise ConfigError(
                f"override: {key} expects {kind.__name__}, got {value!r}")
        out[key] = value
    return out


def format_snapshot(cfg: dict) -> str:
    """Render the effective config in the same format the parser reads."""
    lines = []
    for key in sorted(cfg):
        if key not in SCHEMA:
            raise ConfigError(f"snapshot: unknown key {key!r}")
        value = cfg[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def write_snapshot(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_snapshot(cfg))
