"""Run configuration: typed keys, benchmark defaults, key=value files and manifests.

Resolution order is defaults < config file < command-line flags.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

COMMANDS = ("gen", "train", "eval", "pca", "sweep")
PRESETS = ("full", "desk")


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_int_list(text) -> list[int]:
    """``"1,2,4"`` or ranges like ``"0-9"``; an empty list is an error."""
    if isinstance(text, (list, tuple)):
        values = [int(v) for v in text]
    else:
        values = []
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            lo, sep, hi = part.partition("-")
            if sep and lo:
                values.extend(range(int(lo), int(hi) + 1))
            else:
                values.append(int(part))
    if not values:
        raise ConfigError("list must not be empty")
    return values


def parse_str_list(text) -> list[str]:
    values = list(text) if isinstance(text, (list, tuple)) else [
        p.strip() for p in str(text).split(",") if p.strip()]
    if not values:
        raise ConfigError("list must not be empty")
    return values


def _opt_path(text):
    return None if text in (None, "", "None") else str(text)


SCHEMA = {
    "benchmark": str, "preset": str, "n": int, "seed": int, "out": str, "full_lattice": parse_bool,
    "data": str, "test_data": _opt_path, "decoder": str, "latent": int, "width": int, "depth": int,
    "iterations": int, "batch": int, "lr": float, "decay_rate": float, "decay_every": int,
    "query_batch": int, "history": _opt_path, "checkpoint": str, "max_modes": int,
    "projection": _opt_path, "kinds": parse_str_list, "ns": parse_int_list, "seeds": parse_int_list,
    "n_train": int, "n_test": int, "data_seed": int, "workdir": str, "workers": int,
    "record_timing": parse_bool, "manifest": _opt_path, "full_resolution": parse_bool,
}

# per-benchmark defaults; shallow-water "desk" shrinks data and iterations
BENCHMARK_DEFAULTS = {
    "antiderivative": {"n": 1000, "n_train": 1000, "n_test": 1000, "iterations": 20000, "latent": 1},
    "advection": {"n": 1000, "n_train": 1000, "n_test": 1000, "iterations": 20000, "latent": 2},
    "shallow-water": {"n": 1000, "n_train": 1000, "n_test": 1000, "iterations": 100000, "latent": 20},
}
DESK_OVERRIDES = {
    "shallow-water": {"n": 200, "n_train": 200, "n_test": 200, "iterations": 20000},
}
LINEAR_LATENT = {"shallow-water": 480}

COMMON_DEFAULTS = {
    "preset": "full", "seed": 0, "decoder": "nomad", "width": 100, "depth": 5, "batch": 100,
    "lr": 1e-3, "decay_rate": 0.99, "decay_every": 100, "query_batch": 0, "max_modes": 1000,
    "kinds": ["linear", "nomad"], "ns": [1, 2, 4, 8, 16, 32], "seeds": list(range(10)),
    "data_seed": 0, "workers": 1, "record_timing": False, "full_lattice": False,
    "full_resolution": True, "manifest": None, "history": None, "projection": None,
}

COMMAND_KEYS = {
    "gen": ["benchmark", "preset", "n", "seed", "full_lattice", "out", "manifest"],
    "train": ["data", "benchmark", "preset", "decoder", "latent", "width", "depth", "iterations",
              "batch", "lr", "decay_rate", "decay_every", "query_batch", "seed", "out", "history", "manifest"],
    "eval": ["checkpoint", "data", "benchmark", "full_resolution", "out", "manifest"],
    "pca": ["data", "benchmark", "max_modes", "projection", "out", "manifest"],
    "sweep": ["benchmark", "preset", "kinds", "ns", "seeds", "n_train", "n_test", "data_seed",
              "width", "depth", "iterations", "batch", "lr", "decay_rate", "decay_every",
              "query_batch", "workdir", "workers", "record_timing", "out", "manifest"],
}


def coerce(key: str, value):
    try:
        conv = SCHEMA[key]
    except KeyError:
        raise ConfigError(f"unknown configuration key {key!r}") from None
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None


def read_kv_file(path) -> dict[str, str]:
    """Plain ``key=value`` lines; blank lines and ``#`` comments ignored."""
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def benchmark_defaults(benchmark: str, preset: str, decoder: str | None = None) -> dict:
    if benchmark not in BENCHMARK_DEFAULTS:
        raise ConfigError(f"unknown benchmark {benchmark!r}")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    d = dict(COMMON_DEFAULTS)
    d.update(BENCHMARK_DEFAULTS[benchmark])
    if preset == "desk":
        d.update(DESK_OVERRIDES.get(benchmark, {}))
    if decoder == "linear" and benchmark in LINEAR_LATENT:
        d["latent"] = LINEAR_LATENT[benchmark]
    return d


def resolve(command: str, benchmark: str, file_values: dict, flag_values: dict) -> dict:
    """Fully resolved config for ``command``, restricted to its keys."""
    merged = {k: coerce(k, v) for k, v in file_values.items() if k not in ("command",)}
    merged.update({k: coerce(k, v) for k, v in flag_values.items()})
    preset = merged.get("preset", COMMON_DEFAULTS["preset"])
    decoder = merged.get("decoder", COMMON_DEFAULTS["decoder"])
    resolved = benchmark_defaults(benchmark, preset, decoder)
    resolved["benchmark"] = benchmark
    resolved.update(merged)
    out = {}
    for key in COMMAND_KEYS[command]:
        if key not in resolved:
            raise ConfigError(f"{command}: missing required setting {key!r}")
        out[key] = resolved[key]
    return out


def format_value(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_manifest(path, command: str, config: dict, results: dict | None = None) -> None:
    lines = [f"command={command}"]
    lines += [f"{k}={format_value(v)}" for k, v in config.items()]
    lines += [f"result.{k}={format_value(v)}" for k, v in (results or {}).items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> tuple[str, dict[str, str]]:
    values = read_kv_file(path)
    command = values.pop("command", None)
    if command not in COMMANDS:
        raise ConfigError(f"manifest {path} has no valid command line")
    return command, {k: v for k, v in values.items() if not k.startswith("result.")}
