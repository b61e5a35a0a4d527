"""INI run configuration: parsing, validation and the resolved echo."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import ModelParams
from .errors import ConfigError
from .pathintegral import ENUMERATION_CAP
from .spectral import DEFAULT_CAP

COMMANDS = ("ed-check", "trotter-scan", "mc-run", "fkg-check", "bound-check", "gg-check", "scan")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    items = [s for s in text.replace(",", " ").split()]
    if not items:
        raise ValueError("empty list")
    return tuple(int(s) for s in items)


def _str_list(text: str) -> tuple[str, ...]:
    items = [s for s in text.replace(",", " ").split()]
    if not items:
        raise ValueError("empty list")
    return tuple(items)


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


def _choice(*options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {options}, got {t!r}")
        return t
    parse.__name__ = "choice"
    return parse


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


# key -> (parser, default)
MODEL_KEYS = {
    "beta": (float, 1.0), "J1": (float, 1.0), "J3": (float, 1.0), "c": (float, 1.0),
    "b1": (float, 0.0), "b3": (float, 0.0), "d": (int, 1), "L": (int, 2), "M": (_optional_int, None),
}
ENSEMBLE_KEYS = {"count": (int, 10), "master_seed": (int, 0)}
BACKEND_KEYS = {"ed_cap": (int, DEFAULT_CAP), "enum_cap": (int, ENUMERATION_CAP),
                "workers": (int, 1), "save_disorder": (_bool, True)}

COMMAND_KEYS = {
    "ed-check": {"tolerance": (float, 1e-10), "fd_step": (float, 1e-4), "fd_tolerance": (float, 1e-6)},
    "trotter-scan": {"M_list": (_int_list, (2, 4, 8, 16)), "ratio_min": (float, 1.5),
                     "ratio_max": (float, 4.5)},
    "mc-run": {"sweeps": (int, 20000), "thermalization": (_optional_int, None), "interval": (int, 1),
               "replicas": (int, 2), "order": (_choice("lexicographic", "checkerboard"), "lexicographic"),
               "worldlines": (_bool, True), "compare_exact": (_bool, True), "sigmas": (float, 4.0)},
    "fkg-check": {"modes": (_str_list, ("truncated_pair", "field_monotonicity")),
                  "quantum": (_bool, True), "tolerance": (float, 1e-12), "fd_tolerance": (float, 1e-6)},
    "bound-check": {"tolerance": (float, 1e-12), "harris": (_bool, True), "harris_slack": (float, 1e-10)},
    "gg-check": {"n": (_choice("2", "3"), "2"), "component": (_choice("1", "3"), "3"),
                 "f": (_choice("rho", "one"), "rho"), "backend": (_choice("mc", "exact"), "mc"),
                 "L_list": (_int_list, None), "min_ensemble": (int, 50), "sweeps": (int, 21000),
                 "thermalization": (int, 1000), "trivial_tolerance": (float, 1e-12)},
    "scan": {"target": (_choice("psi", "mu3", "overlap_total", "overlap_gibbs_part"), "psi"),
             "L_list": (_int_list, (2, 3, 4)), "component": (_choice("1", "2", "3"), "3"),
             "backend": (_choice("spectral", "classical"), "spectral"),
             "expect": (_choice("none", "decreasing", "bounded", "zero"), "none"),
             "scale": (_choice("none", "volume", "sqrt_volume"), "none"),
             "zero_tolerance": (float, 1e-12)},
}


@dataclass
class RunConfig:
    command: str
    params: ModelParams
    ensemble_count: int = 10
    master_seed: int = 0
    ed_cap: int = DEFAULT_CAP
    enum_cap: int = ENUMERATION_CAP
    workers: int = 1
    save_disorder: bool = True
    out_dir: str = "out"
    options: dict = field(default_factory=dict)

    def option(self, key: str):
        return self.options[key]


def _parse_section(cp: configparser.ConfigParser, name: str, schema: dict) -> dict:
    raw = dict(cp[name]) if cp.has_section(name) else {}
    lowered = {k.lower(): k for k in schema}
    unknown = [k for k in raw if k not in lowered]
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    out = {}
    for key, (parse, default) in schema.items():
        text = raw.get(key.lower())
        if text is None:
            out[key] = default
            continue
        try:
            out[key] = parse(text)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    return out


def parse_config(text: str, command: str, seed: int | None = None, out_dir: str | None = None,
                 workers: int | None = None) -> RunConfig:
    """Parse INI text for ``command``; explicit arguments override file keys."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    allowed = {"model", "ensemble", "backend", "output", command}
    extra = [s for s in cp.sections() if s not in allowed and s not in COMMANDS]
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")
    model = _parse_section(cp, "model", MODEL_KEYS)
    ens = _parse_section(cp, "ensemble", ENSEMBLE_KEYS)
    backend = _parse_section(cp, "backend", BACKEND_KEYS)
    output = _parse_section(cp, "output", {"dir": (str, "out")})
    options = _parse_section(cp, command, COMMAND_KEYS[command])
    params = ModelParams(**model)
    cfg = RunConfig(
        command=command, params=params, ensemble_count=ens["count"], master_seed=ens["master_seed"],
        ed_cap=backend["ed_cap"], enum_cap=backend["enum_cap"], workers=backend["workers"],
        save_disorder=backend["save_disorder"], out_dir=output["dir"], options=options,
    )
    if seed is not None:
        cfg.master_seed = seed
    if out_dir is not None:
        cfg.out_dir = out_dir
    if workers is not None:
        cfg.workers = workers
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if cfg.ensemble_count < 1:
        raise ConfigError("ensemble count must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if not 0 <= cfg.master_seed < 2 ** 64:
        raise ConfigError("master_seed must be a 64-bit unsigned integer")
    if cfg.ed_cap < 2 or cfg.enum_cap < 1:
        raise ConfigError("caps must be positive")
    p = cfg.params
    needs_M = cfg.command in ("mc-run", "fkg-check", "bound-check", "gg-check")
    if needs_M and p.M is None:
        raise ConfigError(f"{cfg.command} needs [model] M")
    if cfg.command == "ed-check" and (p.b1 != 0 or p.b3 != 0):
        raise ConfigError("ed-check works on the unperturbed quantum model; set b1 = b3 = 0")
    if cfg.command == "trotter-scan":
        if p.b1 != 0 or p.b3 != 0:
            raise ConfigError("trotter-scan compares against the b = 0 quantum model")
        if any(m < 1 for m in cfg.options["M_list"]):
            raise ConfigError("M_list entries must be >= 1")
    if cfg.command == "mc-run":
        o = cfg.options
        if o["sweeps"] < 1 or o["interval"] < 1:
            raise ConfigError("sweeps and interval must be >= 1")
        if o["replicas"] < 2:
            raise ConfigError("replica MC needs replicas >= 2")
        if o["thermalization"] is not None and o["thermalization"] >= o["sweeps"]:
            raise ConfigError("thermalization must be smaller than sweeps")
    if cfg.command == "scan":
        if cfg.options["backend"] == "classical" and p.M is None:
            raise ConfigError("classical scan backend needs [model] M")
        if cfg.options["backend"] == "spectral" and (p.b1 != 0 or p.b3 != 0):
            raise ConfigError("spectral scans need b1 = b3 = 0")
    if cfg.command == "fkg-check":
        bad = set(cfg.options["modes"]) - {"truncated_pair", "field_monotonicity"}
        if bad:
            raise ConfigError(f"unknown FKG mode(s): {sorted(bad)}")


def load_config(path, command: str, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, command, **overrides)


def resolved_text(cfg: RunConfig) -> str:
    """Every key with its effective value; re-parses to an equal RunConfig."""
    p = cfg.params
    lines = ["[model]"]
    lines += [f"{k} = {_format(getattr(p, k))}" for k in MODEL_KEYS]
    lines += ["", "[ensemble]", f"count = {cfg.ensemble_count}", f"master_seed = {cfg.master_seed}"]
    lines += ["", "[backend]", f"ed_cap = {cfg.ed_cap}", f"enum_cap = {cfg.enum_cap}",
              f"workers = {cfg.workers}", f"save_disorder = {_format(cfg.save_disorder)}"]
    lines += ["", "[output]", f"dir = {cfg.out_dir}"]
    lines += ["", f"[{cfg.command}]"]
    for k in COMMAND_KEYS[cfg.command]:
        v = cfg.options[k]
        if v is None and k == "L_list":
            continue
        lines.append(f"{k} = {_format(v)}")
    return "\n".join(lines) + "\n"


def equivalent(a: RunConfig, b: RunConfig) -> bool:
    return all(getattr(a, f.name) == getattr(b, f.name) for f in fields(RunConfig))
