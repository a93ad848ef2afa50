"""Strict line-oriented experiment configuration.

Format: ``[section]`` headers and ``key = value`` lines; ``#`` starts a
comment.  Sections are ``[experiment]``, ``[model]``, ``[scheme]`` and
``[run]``.  Parsing is deliberately unforgiving: unknown sections, unknown
keys, duplicate keys, type errors, and run keys that the chosen experiment
does not use are all hard errors, each reported with its line number.  A
silently ignored typo ("kapa = 5.07") would invalidate a table reproduction,
so nothing is ignored.

Floats accept dyadic shorthand (``2^-10``) alongside ordinary literals,
since every stepsize and accuracy grid in the experiments is a power of two.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from typing import Callable

from . import models

EXPERIMENT_KINDS = (
    "negstats",
    "pathwise",
    "converge",
    "explode",
    "mlmc",
    "price",
    "validate",
)

SCHEME_ALIASES = (
    "euler",
    "milstein",
    "truncated_euler",
    "absolute_euler",
    "truncated_milstein",
    "absolute_milstein",
    "symmetrized_euler",
    "tamed_euler",
    "split_step",
    "backward_euler",
    "implicit_sqrt",
    "implicit_sqrt_truncated",
    "dimp_milstein",
    "dimp_milstein_truncated",
    "log_heston",
)


class ConfigError(ValueError):
    """All configuration problems found, one message per line."""

    def __init__(self, errors: list[str]):
        self.errors = tuple(errors)
        super().__init__("\n".join(errors))


@dataclass(frozen=True)
class SchemeSpec:
    """One scheme request: either a named alias or raw scheme_id + options."""

    alias: str | None = None
    scheme_id: str | None = None
    extension: str | None = None
    projection: str | None = None
    truncate_sqrt: bool = False

    @property
    def label(self) -> str:
        if self.alias is not None:
            return self.alias
        parts = [self.scheme_id or "?"]
        if self.extension:
            parts.append(self.extension)
        if self.truncate_sqrt:
            parts.append("tsqrt")
        return "-".join(parts)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model_id: str
    params: models.Params
    T: float
    strike: float | None
    preset_name: str | None
    schemes: tuple[SchemeSpec, ...]
    run: dict
    seed: int | None = None
    out: str | None = None
    threads: int = 1


def _parse_float(text: str) -> float:
    m = re.fullmatch(r"([+-]?\d+)\^([+-]?\d+)", text)
    if m:
        return float(m.group(1)) ** int(m.group(2))
    return float(text)


def _parse_int(text: str) -> int:
    m = re.fullmatch(r"([+-]?\d+)\^(\d+)", text)
    if m:
        return int(m.group(1)) ** int(m.group(2))
    return int(text, 10)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _split_list(text: str) -> list[str]:
    return [t for t in re.split(r"[,\s]+", text.strip()) if t]


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(_parse_float(t) for t in _split_list(text))


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(_parse_int(t) for t in _split_list(text))


def _parse_str(text: str) -> str:
    return text


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(_split_list(text))


_MODEL_PARAM_KEYS = (
    "mu", "sigma", "gamma", "s0", "kappa", "lam", "theta", "rho",
    "x0", "v0", "r", "a_m1", "a_0", "a_1", "a_2", "c1", "c2", "c3",
)

# key -> parser, per section
_SCHEMA: dict[str, dict[str, Callable[[str], object]]] = {
    "experiment": {
        "kind": _parse_str,
        "seed": _parse_int,
        "out": _parse_str,
        "threads": _parse_int,
    },
    "model": {
        "preset": _parse_str,
        "model": _parse_str,
        "T": _parse_float,
        "strike": _parse_float,
        **{k: _parse_float for k in _MODEL_PARAM_KEYS},
    },
    "scheme": {
        "scheme": _parse_str_list,
        "scheme_id": _parse_str,
        "extension": _parse_str,
        "projection": _parse_str,
        "truncate_sqrt": _parse_bool,
    },
    "run": {
        "n": _parse_int,
        "n_samples": _parse_int,
        "n_list": _parse_int_list,
        "n_samples_list": _parse_int_list,
        "p": _parse_int,
        "ref_n": _parse_int,
        "ref_scheme": _parse_str,
        "reference": _parse_str,
        "policy": _parse_str,
        "payoff": _parse_str,
        "lower": _parse_float,
        "upper": _parse_float,
        "radius": _parse_float,
        "method": _parse_str,
        "epsilon": _parse_float,
        "epsilon_list": _parse_float_list,
        "replications": _parse_int,
        "truth": _parse_str,
        "sample_index": _parse_int,
        "moment_p_list": _parse_float_list,
        "l1": _parse_float,
        "l2": _parse_float,
    },
}

# which run keys each experiment consumes (strict: anything else errors)
_RUN_KEYS_BY_KIND: dict[str, tuple[str, ...]] = {
    "negstats": ("n", "n_samples"),
    "pathwise": ("n_list", "ref_n", "ref_scheme", "reference", "sample_index"),
    "converge": (
        "n_list", "n_samples", "p", "ref_n", "ref_scheme", "reference", "policy",
    ),
    "explode": (
        "n_list", "n_samples_list", "n_samples", "payoff", "policy", "radius",
    ),
    "mlmc": (
        "epsilon", "epsilon_list", "method", "replications", "truth",
        "payoff", "lower", "upper", "policy",
    ),
    "price": (
        "method", "n", "n_samples", "epsilon", "radius",
        "payoff", "lower", "upper", "policy",
    ),
    "validate": ("moment_p_list", "l1", "l2"),
}

_REQUIRED_RUN_KEYS: dict[str, tuple[str, ...]] = {
    "negstats": ("n", "n_samples"),
    "pathwise": ("n_list",),
    "converge": ("n_list", "n_samples"),
    "explode": ("n_list",),
    "mlmc": (),
    "price": ("method",),
    "validate": (),
}

_PARAM_CLASSES: dict[str, type] = {
    "cir": models.CirParams,
    "cir_lamperti": models.CirParams,
    "cev": models.CevParams,
    "gbm": models.CevParams,
    "heston": models.HestonParams,
    "heston_log": models.HestonParams,
    "ait_sahalia": models.AitSahaliaParams,
    "three_halves_vol": models.ThreeHalvesParams,
    "cubic_toy": models.CubicToyParams,
}


def _parse_sections(text: str, errors: list[str]):
    """Raw pass: sections -> {key: (value_text, line_no)}."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SCHEMA:
                errors.append(
                    f"line {lineno}: unknown section [{name}]; known sections: "
                    + ", ".join(f"[{s}]" for s in _SCHEMA)
                )
                current = None
            else:
                current = name
                sections.setdefault(name, {})
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if current is None:
            errors.append(
                f"line {lineno}: key {key!r} appears before any [section] header"
            )
            continue
        schema = _SCHEMA[current]
        if key not in schema:
            errors.append(
                f"line {lineno}: unknown key {key!r} in [{current}]; known keys: "
                + ", ".join(sorted(schema))
            )
            continue
        if key in sections[current]:
            prev_line = sections[current][key][1]
            errors.append(
                f"line {lineno}: duplicate key {key!r} in [{current}] "
                f"(first set on line {prev_line})"
            )
            continue
        sections[current][key] = (value, lineno)
    return sections


def _typed(section: dict[str, tuple[str, int]], name: str, errors: list[str]) -> dict:
    out = {}
    for key, (text, lineno) in section.items():
        try:
            out[key] = _SCHEMA[name][key](text)
        except (ValueError, OverflowError) as exc:
            errors.append(f"line {lineno}: bad value for {key!r} in [{name}]: {exc}")
    return out


def _line_of(section: dict[str, tuple[str, int]], key: str) -> int:
    return section[key][1]


def _resolve_model(
    raw: dict[str, tuple[str, int]], vals: dict, errors: list[str]
):
    """Combine preset and inline overrides into (model_id, params, T, strike)."""
    preset_name = vals.get("preset")
    preset = None
    if preset_name is not None:
        try:
            preset = models.get_preset(preset_name)
        except models.ModelError as exc:
            errors.append(f"line {_line_of(raw, 'preset')}: {exc}")
            return None
    model_id = vals.get("model", preset.model_id if preset else None)
    if model_id is None:
        errors.append("[model]: needs either 'preset' or 'model'")
        return None
    if model_id not in _PARAM_CLASSES:
        errors.append(
            f"line {_line_of(raw, 'model')}: unknown model {model_id!r}; known: "
            + ", ".join(sorted(_PARAM_CLASSES))
        )
        return None
    cls = _PARAM_CLASSES[model_id]
    fields = {f.name for f in dataclasses.fields(cls)}
    overrides = {}
    for key in _MODEL_PARAM_KEYS:
        if key in vals:
            if key not in fields:
                errors.append(
                    f"line {_line_of(raw, key)}: model {model_id!r} has no "
                    f"parameter {key!r}; its parameters are "
                    + ", ".join(sorted(fields))
                )
            else:
                overrides[key] = vals[key]
    if preset is not None and preset.model_id != model_id:
        # replacing the model invalidates preset params wholesale
        errors.append(
            f"line {_line_of(raw, 'model')}: model {model_id!r} conflicts with "
            f"preset {preset_name!r} ({preset.model_id}); drop one of the two"
        )
        return None
    try:
        if preset is not None:
            params = (
                dataclasses.replace(preset.params, **overrides)
                if overrides
                else preset.params
            )
        else:
            missing = [
                f.name
                for f in dataclasses.fields(cls)
                if f.name not in overrides
                and f.default is dataclasses.MISSING
                and f.default_factory is dataclasses.MISSING
            ]
            if missing:
                errors.append(
                    f"[model]: model {model_id!r} without a preset needs "
                    + ", ".join(missing)
                )
                return None
            params = cls(**overrides)
    except models.ModelError as exc:
        errors.append(f"[model]: {exc}")
        return None
    T = vals.get("T", preset.T if preset else None)
    if T is None:
        errors.append("[model]: needs 'T' (no preset supplies it)")
        return None
    if not T > 0:
        errors.append(f"[model]: T must be positive, got {T}")
        return None
    strike = vals.get("strike", preset.strike if preset else None)
    return model_id, params, T, strike, preset_name


def _resolve_schemes(
    raw: dict[str, tuple[str, int]], vals: dict, errors: list[str]
) -> tuple[SchemeSpec, ...]:
    aliases = vals.get("scheme")
    raw_id = vals.get("scheme_id")
    if aliases and raw_id:
        errors.append(
            "[scheme]: give either 'scheme' (named aliases) or 'scheme_id' "
            "with options, not both"
        )
        return ()
    if aliases:
        for key in ("extension", "projection", "truncate_sqrt"):
            if key in vals:
                errors.append(
                    f"line {_line_of(raw, key)}: {key!r} applies only to the "
                    f"'scheme_id' form; aliases fix their own options"
                )
        out = []
        for a in aliases:
            if a not in SCHEME_ALIASES:
                errors.append(
                    f"line {_line_of(raw, 'scheme')}: unknown scheme alias {a!r}; "
                    "known: " + ", ".join(SCHEME_ALIASES)
                )
            else:
                out.append(SchemeSpec(alias=a))
        return tuple(out)
    if raw_id:
        ext = vals.get("extension")
        if ext is not None and ext not in ("truncate", "absolute"):
            errors.append(
                f"line {_line_of(raw, 'extension')}: unknown extension {ext!r}; "
                "known: truncate, absolute"
            )
        proj = vals.get("projection")
        if proj is not None and proj != "abs":
            errors.append(
                f"line {_line_of(raw, 'projection')}: unknown projection "
                f"{proj!r}; known: abs"
            )
        return (
            SchemeSpec(
                scheme_id=raw_id,
                extension=ext,
                projection=proj,
                truncate_sqrt=vals.get("truncate_sqrt", False),
            ),
        )
    return ()


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config file; raises ConfigError listing every
    problem found (never just the first)."""
    errors: list[str] = []
    sections = _parse_sections(text, errors)
    exp_raw = sections.get("experiment", {})
    model_raw = sections.get("model", {})
    scheme_raw = sections.get("scheme", {})
    run_raw = sections.get("run", {})

    exp = _typed(exp_raw, "experiment", errors)
    model_vals = _typed(model_raw, "model", errors)
    scheme_vals = _typed(scheme_raw, "scheme", errors)
    run = _typed(run_raw, "run", errors)

    kind = exp.get("kind")
    if "experiment" not in sections or "kind" not in exp_raw:
        errors.append("[experiment]: missing required key 'kind'")
    elif kind not in EXPERIMENT_KINDS:
        errors.append(
            f"line {_line_of(exp_raw, 'kind')}: unknown experiment {kind!r}; "
            "known: " + ", ".join(EXPERIMENT_KINDS)
        )
        kind = None

    seed = exp.get("seed")
    if seed is not None and not 0 <= seed < 2**64:
        errors.append(
            f"line {_line_of(exp_raw, 'seed')}: seed must fit in an unsigned "
            f"64-bit integer, got {seed}"
        )
    threads = exp.get("threads", 1)
    if threads < 1:
        errors.append(f"line {_line_of(exp_raw, 'threads')}: threads must be >= 1")

    resolved = None
    if "model" not in sections:
        errors.append("missing [model] section")
    else:
        resolved = _resolve_model(model_raw, model_vals, errors)

    schemes = _resolve_schemes(scheme_raw, scheme_vals, errors)
    if kind is not None and kind != "validate" and not schemes:
        errors.append(f"[scheme]: experiment {kind!r} needs at least one scheme")
    if kind is not None and kind not in ("converge",) and len(schemes) > 1:
        errors.append(
            f"[scheme]: experiment {kind!r} takes exactly one scheme, "
            f"got {len(schemes)}"
        )

    if kind is not None:
        allowed = set(_RUN_KEYS_BY_KIND[kind])
        for key in run_raw:
            if key not in allowed:
                errors.append(
                    f"line {_line_of(run_raw, key)}: run key {key!r} is not used "
                    f"by experiment {kind!r}; its keys are "
                    + (", ".join(sorted(allowed)) or "(none)")
                )
        for key in _REQUIRED_RUN_KEYS[kind]:
            if key not in run:
                errors.append(f"[run]: experiment {kind!r} requires {key!r}")
        _check_run_values(kind, run, run_raw, errors)

    if errors:
        raise ConfigError(errors)
    if "truth" in run and run["truth"] != "oracle":
        run["truth"] = _parse_float(run["truth"])
    model_id, params, T, strike, preset_name = resolved
    return ExperimentConfig(
        kind=kind,
        model_id=model_id,
        params=params,
        T=T,
        strike=strike,
        preset_name=preset_name,
        schemes=schemes,
        run=run,
        seed=seed,
        out=exp.get("out"),
        threads=threads,
    )


def _check_run_values(kind, run, run_raw, errors):
    def bad(key, msg):
        errors.append(f"line {_line_of(run_raw, key)}: {msg}")

    for key in ("n", "n_samples", "p", "ref_n", "replications", "sample_index"):
        if key in run and run[key] < 1 and key != "sample_index":
            bad(key, f"{key!r} must be >= 1, got {run[key]}")
    if "sample_index" in run and run["sample_index"] < 0:
        bad("sample_index", "sample_index must be >= 0")
    for key in ("n_list", "n_samples_list"):
        if key in run and (not run[key] or any(v < 1 for v in run[key])):
            bad(key, f"{key!r} must list integers >= 1")
    for key in ("epsilon", "radius"):
        if key in run and not run[key] > 0:
            bad(key, f"{key!r} must be positive")
    if "epsilon_list" in run and (
        not run["epsilon_list"] or any(not v > 0 for v in run["epsilon_list"])
    ):
        bad("epsilon_list", "'epsilon_list' must list positive values")
    if "policy" in run and run["policy"] not in ("propagate", "exclude"):
        bad("policy", f"unknown policy {run['policy']!r}; known: propagate, exclude")
    if "reference" in run and run["reference"] not in ("scheme", "exact"):
        bad("reference", f"unknown reference {run['reference']!r}; known: scheme, exact")
    if "payoff" in run and run["payoff"] not in ("identity", "call", "put", "abs"):
        bad("payoff", f"unknown payoff {run['payoff']!r}; known: identity, call, put, abs")
    if "method" in run:
        allowed = ("mc", "mc_discarded", "mlmc", "standard")
        if run["method"] not in allowed:
            bad("method", f"unknown method {run['method']!r}; known: " + ", ".join(allowed))
    if "ref_scheme" in run and run["ref_scheme"] not in SCHEME_ALIASES:
        bad("ref_scheme", f"unknown scheme alias {run['ref_scheme']!r}")
    if "truth" in run and run["truth"] != "oracle":
        try:
            _parse_float(run["truth"])
        except ValueError:
            bad("truth", f"'truth' must be a number or 'oracle', got {run['truth']!r}")
    if kind == "price" and run.get("method") == "mc_discarded" and "radius" not in run:
        errors.append("[run]: method 'mc_discarded' requires 'radius'")
    if kind == "price":
        method = run.get("method")
        if method in ("mc", "mc_discarded"):
            for key in ("n", "n_samples"):
                if key not in run:
                    errors.append(f"[run]: method {method!r} requires {key!r}")
        elif method in ("mlmc", "standard") and "epsilon" not in run:
            errors.append(f"[run]: method {method!r} requires 'epsilon'")
    if kind == "mlmc":
        if "epsilon" not in run and "epsilon_list" not in run:
            errors.append("[run]: experiment 'mlmc' needs 'epsilon' or 'epsilon_list'")
        if "replications" in run and "truth" not in run:
            errors.append("[run]: a replication study needs 'truth' (number or 'oracle')")
    if kind == "explode" and "n_samples" not in run and "n_samples_list" not in run:
        errors.append("[run]: experiment 'explode' needs 'n_samples' or 'n_samples_list'")


def parse_config_file(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config file {path}: {exc}"]) from exc
    return parse_config(text)


def echo_lines(cfg: ExperimentConfig, seed: int) -> list[str]:
    """Resolved configuration as deterministic key = value lines, used as the
    metadata block of every output file (overrides already applied).  Thread
    count is deliberately absent: it never affects results, and files from
    runs that differ only in worker count must compare byte-identical."""
    lines = [
        f"experiment = {cfg.kind}",
        f"seed = {seed}",
        f"model = {cfg.model_id}",
    ]
    if cfg.preset_name:
        lines.append(f"preset = {cfg.preset_name}")
    for f in dataclasses.fields(cfg.params):
        v = getattr(cfg.params, f.name)
        if v is not None:
            lines.append(f"model.{f.name} = {v!r}")
    lines.append(f"model.T = {cfg.T!r}")
    if cfg.strike is not None:
        lines.append(f"model.strike = {cfg.strike!r}")
    if cfg.schemes:
        lines.append("scheme = " + ", ".join(s.label for s in cfg.schemes))
    for key in sorted(cfg.run):
        v = cfg.run[key]
        if isinstance(v, tuple):
            lines.append(f"run.{key} = " + ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v))
        elif isinstance(v, float):
            lines.append(f"run.{key} = {v!r}")
        else:
            lines.append(f"run.{key} = {v}")
    return lines
