"""Run configuration: a small sectioned ``key = value`` format.

Grammar, one statement per line::

    # comment (also allowed after a value, preceded by whitespace)
    scenario = vortex_ablation      # required: vortex_ablation | cattle | model_refinement
    seed = 0

    [scenario]                      # plain scenario fields
    seeds = 30
    bounds = 0, 0.1, 0.2            # lists are comma separated

    [kernel]
    bandwidth = median              # "median" selects the median heuristic

    kernel.schedule = 1, 0.5        # dotted keys work outside sections too

Sections are ``scenario``, ``kernel``, ``solver``, ``infomax``, ``flow`` and
``dynamics``; their keys are the fields of the scenario's settings classes.
Values are typed by the field they set: integers, reals, ``true``/``false``,
bare words, and comma-separated real lists. Every key has a default; unknown
keys, repeated keys, and values failing validation are errors naming the key
and line. :func:`dump_config` writes every key with reals at 17 significant
digits, so ``parse_config(dump_config(c)) == c``.
"""

from __future__ import annotations

import dataclasses
import math
import re
import types
import typing
from dataclasses import dataclass, fields, is_dataclass, replace
from pathlib import Path

from .errors import ConfigError, SettingError, ValidationError
from .scenarios import SCENARIOS

TOP_KEYS = ("scenario", "seed")
NONE_WORD = "median"
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)?$")
_SECTION = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")


@dataclass(frozen=True)
class RunConfig:
    kind: str
    settings: typing.Any
    seed: int = 0


def _fmt_real(x: float) -> str:
    return format(float(x), ".17g")


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _optional_inner(tp):
    args = typing.get_args(tp)
    if (typing.get_origin(tp) in (typing.Union, types.UnionType)) and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return rest[0] if len(rest) == 1 else None
    return None


def _parse_value(text: str, tp, key: str, line: int):
    inner = _optional_inner(tp)
    if inner is not None:
        if text == NONE_WORD:
            return None
        return _parse_value(text, inner, key, line)
    if typing.get_origin(tp) is tuple:
        (elem, *_) = typing.get_args(tp)
        if text == "":
            return ()
        return tuple(_parse_value(p.strip(), elem, key, line) for p in text.split(","))
    if tp is bool:
        if text not in ("true", "false"):
            raise ConfigError(f"expected true or false, got {text!r}", key, line)
        return text == "true"
    if tp is int:
        if not re.fullmatch(r"[+-]?\d+", text):
            raise ConfigError(f"expected an integer, got {text!r}", key, line)
        return int(text)
    if tp is float:
        try:
            v = float(text)
        except ValueError:
            raise ConfigError(f"expected a real number, got {text!r}", key, line) from None
        if not math.isfinite(v):
            raise ConfigError(f"expected a finite real number, got {text!r}", key, line)
        return v
    if tp is str:
        if len(text) >= 2 and text[0] == text[-1] == '"':
            return text[1:-1]
        return text
    raise ConfigError(f"unsupported field type {tp!r}", key, line)


def _format_value(v) -> str:
    if v is None:
        return NONE_WORD
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return _fmt_real(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    s = str(v)
    if s == "" or s != s.strip() or "#" in s or "," in s:
        return f'"{s}"'
    return s


def _strip_comment(raw: str) -> str:
    s = raw.strip()
    if s.startswith("#"):
        return ""
    m = re.search(r"\s#", s)
    return s[: m.start()].rstrip() if m else s


def _statements(text: str):
    """Yield ``(dotted_key, value_text, line_no)``; section names become prefixes."""
    section = None
    seen: dict[str, int] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        s = _strip_comment(raw)
        if not s:
            continue
        m = _SECTION.match(s)
        if m:
            section = m.group(1)
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value' or '[section]', got {s!r}", None, no)
        k, v = (p.strip() for p in s.split("=", 1))
        if not _KEY.match(k):
            raise ConfigError(f"malformed key {k!r}", k or None, no)
        if section is not None:
            if "." in k:
                raise ConfigError("dotted keys are not allowed inside a section", k, no)
            k = f"{section}.{k}"
        if k in seen:
            raise ConfigError(f"repeated key (first set on line {seen[k]})", k, no)
        seen[k] = no
        yield k, v, no


def _schema(cls) -> dict[str, tuple[type | None, typing.Any]]:
    """Map each dotted key to ``(settings class or None, field type)``."""
    out = {}
    hints = _hints(cls)
    for f in fields(cls):
        tp = hints[f.name]
        if is_dataclass(tp):
            sub = _hints(tp)
            for g in fields(tp):
                out[f"{f.name}.{g.name}"] = (tp, sub[g.name])
        else:
            out[f"scenario.{f.name}"] = (None, tp)
    return out


def parse_config(source) -> RunConfig:
    """Parse config text (or a path to a config file) into a validated :class:`RunConfig`."""
    if isinstance(source, Path):
        text = source.read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    stmts = list(_statements(text))
    top = {k: (v, no) for k, v, no in stmts if "." not in k}
    for k, (_, no) in top.items():
        if k not in TOP_KEYS:
            raise ConfigError("unknown key", k, no)
    if "scenario" not in top:
        raise ConfigError("missing required key", "scenario", None)
    kind, kind_line = top["scenario"]
    if kind not in SCENARIOS:
        raise ConfigError(f"unknown scenario {kind!r}; expected one of {sorted(SCENARIOS)}", "scenario", kind_line)
    seed = 0
    if "seed" in top:
        seed = _parse_value(top["seed"][0], int, "seed", top["seed"][1])
        if seed < 0:
            raise ConfigError("must be nonnegative", "seed", top["seed"][1])
    cls = SCENARIOS[kind]
    schema = _schema(cls)
    values: dict[str, tuple[typing.Any, int]] = {}
    for k, v, no in stmts:
        if "." not in k:
            continue
        if k not in schema:
            raise ConfigError("unknown key", k, no)
        values[k] = (_parse_value(v, schema[k][1], k, no), no)
    settings = _build(cls, values)
    return RunConfig(kind, settings, seed)


def _build(cls, values: dict):
    lines = {k: no for k, (_, no) in values.items()}
    defaults = cls()
    kw = {}
    for f in fields(cls):
        cur = getattr(defaults, f.name)
        if is_dataclass(cur):
            sub = {g.name: values[f"{f.name}.{g.name}"][0] for g in fields(cur) if f"{f.name}.{g.name}" in values}
            if sub:
                try:
                    kw[f.name] = replace(cur, **sub)
                except SettingError as e:
                    key = f"{f.name}.{e.key}"
                    raise ConfigError(_reason(e), key, lines.get(key)) from None
        elif f"scenario.{f.name}" in values:
            kw[f.name] = values[f"scenario.{f.name}"][0]
    try:
        return replace(defaults, **kw)
    except SettingError as e:
        key = e.key if "." in e.key else f"scenario.{e.key}"
        raise ConfigError(_reason(e), key, lines.get(key)) from None


def _reason(e: SettingError) -> str:
    msg = str(e)
    return msg[len(e.key) + 1 :] if msg.startswith(e.key + " ") else msg


def dump_config(cfg: RunConfig) -> str:
    """Canonical text for ``cfg`` listing every key."""
    out = [f"scenario = {cfg.kind}", f"seed = {cfg.seed}", "", "[scenario]"]
    nested = []
    for f in fields(cfg.settings):
        v = getattr(cfg.settings, f.name)
        if is_dataclass(v):
            nested.append((f.name, v))
        else:
            out.append(f"{f.name} = {_format_value(v)}")
    for name, sub in nested:
        out += ["", f"[{name}]"]
        out += [f"{g.name} = {_format_value(getattr(sub, g.name))}" for g in fields(sub)]
    return "\n".join(out) + "\n"


def with_overrides(cfg: RunConfig, seed: int | None = None, planner: str | None = None,
                   mode: str | None = None) -> RunConfig:
    """Apply command-line overrides, revalidating the settings."""
    s = cfg.settings
    solver = s.solver
    try:
        if planner is not None:
            solver = replace(solver, planner=planner)
        if mode is not None:
            solver = replace(solver, mode=mode)
        s = replace(s, solver=solver)
    except SettingError as e:
        key = e.key if "." in e.key else f"solver.{e.key}"
        raise ConfigError(_reason(e), key, None) from None
    return RunConfig(cfg.kind, s, cfg.seed if seed is None else seed)


def config_dict(cfg: RunConfig) -> dict:
    return {"scenario": cfg.kind, "seed": cfg.seed, **dataclasses.asdict(cfg.settings)}
