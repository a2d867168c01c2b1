"""Loading, validating and overriding TOML experiment configs.

A user config is merged over the shipped default; every key it sets must
already exist in the default (noise tables excepted, since their parameters
depend on the family). Command sections such as ``[baselines]`` may also
override any shared experiment key.
"""
from __future__ import annotations

import copy
import sys
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InvalidInputError

SECTIONS = ("fit", "oracle", "rates", "bias_demo", "baselines", "bounds")
SHARED = ("model", "space", "sigma_policy", "solver", "n_grid", "replicates", "comparators",
          "eval_n", "workers")
FREE_TABLES = ("noise",)


class ConfigError(InvalidInputError):
    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def default_config():
    text = resources.files("huberlearn").joinpath("data/default.toml").read_text()
    return tomllib.loads(text)


def _schema_for(defaults, path):
    if len(path) >= 2 and path[0] in SECTIONS and path[1] in SHARED:
        path = path[1:]
    node = defaults
    for part in path:
        node = node[part]
    return node


def _merge(base, update, defaults, path=()):
    for key, value in update.items():
        here = path + (key,)
        dotted = ".".join(here)
        try:
            schema = _schema_for(defaults, here)
        except (KeyError, TypeError):
            raise ConfigError("unknown key", dotted) from None
        if key in FREE_TABLES:
            if not isinstance(value, dict):
                raise ConfigError("expected a table", dotted)
            base[key] = copy.deepcopy(value)
        elif isinstance(schema, dict):
            if not isinstance(value, dict):
                raise ConfigError("expected a table", dotted)
            _merge(base.setdefault(key, {}), value, defaults, here)
        else:
            if isinstance(value, dict):
                raise ConfigError("expected a value, got a table", dotted)
            _check_type(value, schema, dotted)
            base[key] = value
    return base


def _kind(v):
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, (int, float)):
        return "number"
    if isinstance(v, str):
        return "string"
    if isinstance(v, list):
        return "list"
    return type(v).__name__


def _check_type(value, schema, dotted):
    want, got = _kind(schema), _kind(value)
    if want != got:
        raise ConfigError(f"expected a {want}, got {value!r}", dotted)


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg, item, defaults=None):
    """Apply one ``dotted.key=value`` override in place."""
    defaults = defaults or default_config()
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    parts = key.split(".")
    nested = _parse_value(raw.strip())
    for part in reversed(parts):
        nested = {part: nested}
    if "noise" in parts[:-1]:
        # a single noise parameter edits the table instead of replacing it
        idx = parts.index("noise")
        if parts[:idx] != ["model"] and not (idx == 2 and parts[0] in SECTIONS and parts[1] == "model"):
            raise ConfigError("unknown key", key)
        if idx != len(parts) - 2:
            raise ConfigError("noise parameters are plain values", key)
        table = cfg
        for part in parts[:idx]:
            table = table.setdefault(part, {})
        value = _parse_value(raw.strip())
        if parts[-1] == "family" and table.get("noise", {}).get("family") != value:
            # parameters of the old family do not carry over
            table["noise"] = {}
        table.setdefault("noise", {})[parts[-1]] = value
        return cfg
    return _merge(cfg, nested, defaults)


def load_config(path=None, overrides=(), seed=None):
    """Default config, merged with the file at ``path`` and the overrides."""
    defaults = default_config()
    cfg = copy.deepcopy(defaults)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        _merge(cfg, user, defaults)
    for item in overrides:
        apply_override(cfg, item, defaults)
    if seed is not None:
        cfg["master_seed"] = int(seed)
    return cfg


def section_view(cfg, section):
    """Shared keys with the ``section`` table's overrides merged on top."""
    view = {k: copy.deepcopy(v) for k, v in cfg.items() if k not in SECTIONS}
    for key, value in cfg.get(section, {}).items():
        if isinstance(value, dict) and isinstance(view.get(key), dict):
            _deep_update(view[key], value)
        else:
            view[key] = copy.deepcopy(value)
    return view


def _deep_update(base, update):
    for key, value in update.items():
        if key in FREE_TABLES or not (isinstance(value, dict) and isinstance(base.get(key), dict)):
            base[key] = copy.deepcopy(value)
        else:
            _deep_update(base[key], value)
