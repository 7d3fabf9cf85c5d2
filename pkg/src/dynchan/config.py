"""Flat key=value configuration files, parsed strictly.

One `key = value` pair per line; blank lines and lines starting with '#'
are skipped. Keys are dotted into sections (env., agent., train., eval.,
adaptive., multi., whittle., experiment.) and anything outside the known
schema is a ConfigError, as is a duplicate key. Values stay strings until
a typed getter pulls them out.

A nonstationary environment nests two full env blocks under env.a. and
env.b. (one level only).
"""

import hashlib

from .errors import ConfigError
from .models import (
    CorrelatedChannelModel,
    NonstationaryModel,
    PhaseCycleModel,
    build_fixed_pattern,
    even_partition,
    load_trace,
)
from .env import EnvSpec

ENV_KINDS = ("fixed_pattern", "phase_cycle", "correlated", "trace", "nonstationary")

# keys legal inside an env block (top-level or nested under env.a./env.b.)
ENV_KEYS = {
    "kind", "channels", "subset_size", "p", "order", "phases",
    "p01", "p11", "links", "trace_path", "trace_split", "start", "switch_slot",
}

SECTION_KEYS = {
    "agent": {"kind", "preset", "hidden", "lr", "history", "target_sync", "q_bound", "alpha"},
    "train": {"iterations", "steps_per_iteration", "episode_length", "epsilon", "gamma",
              "batch_size", "min_replay", "replay_capacity", "eval_episodes", "probes"},
    "eval": {"episodes", "length", "gamma", "policy", "checkpoint", "horizon"},
    "adaptive": {"period", "threshold", "budget", "total_periods", "cold_start",
                 "stabilize_tol", "stabilize_patience", "pretrain_iterations"},
    "multi": {"users", "cap"},
    "whittle": {"fit", "mle_slots"},
    "experiment": {"name", "seeds", "p_values", "subset_sizes", "policies", "iterations",
                   "episodes", "users", "trace_slots", "orders"},
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in cfg:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        cfg[key] = value
    validate_keys(cfg, source)
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def validate_keys(cfg: dict, source: str = "<config>") -> None:
    for key in cfg:
        section, _, rest = key.partition(".")
        if section == "env":
            sub = rest
            if sub.startswith(("a.", "b.")):
                sub = sub[2:]
            if sub in ENV_KEYS:
                continue
        elif section in SECTION_KEYS and rest in SECTION_KEYS[section]:
            continue
        raise ConfigError(f"{source}: unknown key {key!r}")


def config_hash(cfg: dict) -> str:
    """Short stable digest of the canonicalized config; carried on every
    emitted CSV row so outputs are traceable to their inputs."""
    canonical = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


_MISSING = object()


def _raw(cfg, key, default):
    value = cfg.get(key, _MISSING)
    if value is _MISSING:
        if default is _MISSING:
            raise ConfigError(f"missing required key {key!r}")
        return default
    return value


def get_str(cfg, key, default=_MISSING, choices=None) -> str:
    value = _raw(cfg, key, default)
    if value is None:
        return None
    value = str(value)
    if choices is not None and value not in choices:
        raise ConfigError(f"{key}: expected one of {sorted(choices)}, got {value!r}")
    return value


def get_int(cfg, key, default=_MISSING, lo=None, hi=None) -> int:
    value = _raw(cfg, key, default)
    if value is None:
        return None
    try:
        out = int(str(value), 0)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if lo is not None and out < lo:
        raise ConfigError(f"{key}: must be >= {lo}, got {out}")
    if hi is not None and out > hi:
        raise ConfigError(f"{key}: must be <= {hi}, got {out}")
    return out


def get_float(cfg, key, default=_MISSING, lo=None, hi=None) -> float:
    value = _raw(cfg, key, default)
    if value is None:
        return None
    try:
        out = float(str(value))
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if lo is not None and out < lo:
        raise ConfigError(f"{key}: must be >= {lo}, got {out}")
    if hi is not None and out > hi:
        raise ConfigError(f"{key}: must be <= {hi}, got {out}")
    return out


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def get_bool(cfg, key, default=_MISSING) -> bool:
    value = _raw(cfg, key, default)
    if isinstance(value, bool) or value is None:
        return value
    low = str(value).strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def get_int_list(cfg, key, default=_MISSING):
    value = _raw(cfg, key, default)
    if not isinstance(value, str):
        return value
    try:
        return [int(tok) for tok in value.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {value!r}") from None


def get_float_list(cfg, key, default=_MISSING):
    value = _raw(cfg, key, default)
    if not isinstance(value, str):
        return value
    try:
        return [float(tok) for tok in value.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {value!r}") from None


def get_str_list(cfg, key, default=_MISSING):
    value = _raw(cfg, key, default)
    if not isinstance(value, str):
        return value
    return [tok.strip() for tok in value.split(",") if tok.strip() != ""]


def _parse_phases(value: str, key: str):
    phases = []
    for part in value.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            phases.append([int(tok) for tok in part.split(",") if tok.strip() != ""])
        except ValueError:
            raise ConfigError(f"{key}: bad phase {part!r}") from None
    if not phases:
        raise ConfigError(f"{key}: no phases given")
    return phases


def _parse_links(value: str, n: int, key: str):
    """Channel structure tokens: 'i' independent, '+K' copies channel K,
    '-K' inverts channel K."""
    tokens = [tok.strip() for tok in value.split(",")]
    if len(tokens) != n:
        raise ConfigError(f"{key}: expected {n} tokens, got {len(tokens)}")
    independent, mapping = [], {}
    for ch, tok in enumerate(tokens):
        if tok == "i":
            independent.append(ch)
        elif tok.startswith(("+", "-")):
            try:
                src = int(tok[1:])
            except ValueError:
                raise ConfigError(f"{key}: bad token {tok!r}") from None
            mapping[ch] = (src, 1 if tok[0] == "+" else -1)
        else:
            raise ConfigError(f"{key}: bad token {tok!r} (want 'i', '+K' or '-K')")
    return independent, mapping


def build_model(cfg: dict, prefix: str = "env."):
    kind = get_str(cfg, prefix + "kind", choices=ENV_KINDS)
    if kind == "fixed_pattern":
        n = get_int(cfg, prefix + "channels", lo=1)
        p = get_float(cfg, prefix + "p", lo=0.0, hi=1.0)
        size = get_int(cfg, prefix + "subset_size", default=1, lo=1)
        order = get_int_list(cfg, prefix + "order", default=None)
        return build_fixed_pattern(even_partition(n, size, order), p)
    if kind == "phase_cycle":
        n = get_int(cfg, prefix + "channels", lo=1)
        p = get_float(cfg, prefix + "p", lo=0.0, hi=1.0)
        phases = _parse_phases(get_str(cfg, prefix + "phases"), prefix + "phases")
        return PhaseCycleModel(n, phases, p)
    if kind == "correlated":
        n = get_int(cfg, prefix + "channels", lo=1)
        p01 = get_float(cfg, prefix + "p01", lo=0.0, hi=1.0)
        p11 = get_float(cfg, prefix + "p11", lo=0.0, hi=1.0)
        links = get_str(cfg, prefix + "links", default=",".join(["i"] * n))
        independent, mapping = _parse_links(links, n, prefix + "links")
        chain = [[1.0 - p01, p01], [1.0 - p11, p11]]
        return CorrelatedChannelModel(n, chain, independent, mapping)
    if kind == "trace":
        path = get_str(cfg, prefix + "trace_path")
        return load_trace(path)
    # nonstationary: two nested env blocks and a switch time
    if prefix != "env.":
        raise ConfigError("nonstationary environments cannot nest")
    switch = get_int(cfg, "env.switch_slot", lo=1)
    phase_a = build_model(cfg, "env.a.")
    phase_b = build_model(cfg, "env.b.")
    return NonstationaryModel(phase_a, phase_b, switch)


def build_env_spec(cfg: dict) -> EnvSpec:
    model = build_model(cfg, "env.")
    start = get_str(cfg, "env.start", default=None, choices=("first", "stationary"))
    split = get_int(cfg, "env.trace_split", default=None, lo=1)
    return EnvSpec(model, start=start, trace_split=split)
