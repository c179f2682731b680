"""Experiment configuration: TOML files validated against a fixed schema.

Every section and key a file may contain is listed in :data:`SCHEMA`; any
other key is rejected with a :class:`ConfigError` naming it.  Expressions
are TOML strings (or numbers) in the expression language of :mod:`dsl`.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coefficients import CoefficientSet
from .errors import ConfigError
from .paths import IncreasingProcessPath, LevySpec, TimeGrid
from .reflected import DomainSpec, interval_domain
from .regression import RegressionConfig

SUBCOMMANDS = (
    "paths-selftest", "solve-linear", "solve-gbdsde", "reflect",
    "feynman-kac", "oracle-pde", "control-check", "ito-check",
)


@dataclass(frozen=True)
class Field:
    kind: str
    default: Any = None
    required: bool = False


def F(kind: str, default: Any = None, required: bool = False) -> Field:
    return Field(kind, default, required)


_COEFF = {
    "n": F("int", 1), "d": F("int", 1), "m": F("int", 0),
    "f": F("expr", 0.0), "g": F("exprs", []), "h": F("expr", 0.0),
    "b": F("exprs", []), "sigma": F("matrix", []), "gamma": F("exprs", []),
    "ell": F("expr", 0.0), "C": F("float", 1.0), "alpha": F("float", 0.5),
    "a_has_jumps": F("bool", False),
}

_CASE = {
    "name": F("str", required=True), "a0": F("float", 0.0), "beta": F("expr", 0.0),
    "gamma": F("expr", 0.0), "delta": F("expr", 0.0), "theta": F("expr", 0.0), "lam": F("expr", 0.0),
    "A_density": F("float", 0.0), "A_jumps": F("pairs", []),
}

SCHEMA: dict[str, Any] = {
    "": {"seed": F("int", required=True), "subcommand": F("str")},
    "grid": {"T": F("float", 1.0), "n_steps": F("int", required=True)},
    "mc": {"n_outer": F("int", 1), "n_inner": F("int", 1000), "degree": F("int", 2),
           "ridge": F("float"), "basis": F("str", "poly")},
    "solver": {"tol": F("float", 1e-8), "max_iter": F("int", 100)},
    "levy": {"marks": F("floats", required=True), "weights": F("floats", required=True)},
    "A": {"density": F("floats", 0.0), "jumps": F("pairs", [])},
    "coefficients": _COEFF,
    "linear": {"d": F("int", 1), "m": F("int", 0), "alpha": F("floats", 0.0), "beta": F("floats", 0.0),
               "gamma_j": F("floats", 0.0), "delta": F("floats", 0.0), "phi_drift": F("floats", 0.0),
               "varphi": F("floats", 0.0), "h": F("floats", 0.0), "xi": F("floats", 0.0)},
    "domain": {"phi": F("expr"), "n_dim": F("int", 1), "bbox": F("pairs"), "interval": F("floats"),
               "boundary_tol": F("float", 1e-8)},
    "selftest": {"n_paths": F("int", 100_000)},
    "reflect": {"t0": F("float", 0.0), "x0": F("floats", required=True), "n_paths": F("int", 100)},
    "fk": {"points": F("pairs", required=True), "route": F("str", "transform"),
           "lattice_points": F("int", 33)},
    "pde": {"n_x": F("int", 201), "c": F("float", 0.5), "min_steps": F("int", 1),
            "output_times": F("floats", required=True), "jumps": F("bool", True)},
    "control": {"d": F("int", 1), "m": F("int", 0), "f": F("expr", 0.0), "g": F("exprs", []),
                "h": F("expr", 1.0), "F": F("expr", 0.0), "G": F("expr", 0.0), "H": F("expr", 0.0),
                "xi": F("expr", 0.0), "tol": F("float", 1e-3), "n_probe": F("int", 64),
                "candidate": F("str", "lattice"), "sizes": F("floats"), "perturb_scales": F("floats", []),
                "perturb_shifts": F("ints", [])},
    "ito": {"d": F("int", 1), "m": F("int", 1), "n_outer": F("int", 1), "n_inner": F("int", 10_000),
            "case": F("cases", required=True)},
}

REQUIRED_SECTIONS = {
    "paths-selftest": ("grid",),
    "solve-linear": ("grid", "linear"),
    "solve-gbdsde": ("grid", "coefficients"),
    "reflect": ("grid", "coefficients", "domain", "reflect"),
    "feynman-kac": ("grid", "coefficients", "domain", "fk"),
    "oracle-pde": ("grid", "coefficients", "domain", "pde"),
    "control-check": ("grid", "control"),
    "ito-check": ("grid", "ito"),
}


def _check(kind: str, value: Any, where: str):
    """Type-check one value; returns it normalized."""
    def bad(expect):
        raise ConfigError(f"{where}: expected {expect}, got {type(value).__name__}")

    num = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool)
    if kind == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            bad("an integer")
        return value
    if kind == "float":
        if not num(value):
            bad("a number")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            bad("true or false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            bad("a string")
        return value
    if kind == "expr":
        if not (isinstance(value, str) or num(value)):
            bad("an expression string or a number")
        return value
    if kind == "floats":
        if num(value):
            return float(value)
        if not isinstance(value, list) or not all(num(v) for v in value):
            bad("a number or a list of numbers")
        return [float(v) for v in value]
    if kind == "ints":
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            bad("a list of integers")
        return value
    if kind == "exprs":
        if not isinstance(value, list) or not all(isinstance(v, str) or num(v) for v in value):
            bad("a list of expressions")
        return value
    if kind == "matrix":
        if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
            bad("a list of rows")
        return [_check("exprs", r, where) for r in value]
    if kind == "pairs":
        if not isinstance(value, list) or not all(isinstance(r, list) and all(num(v) for v in r) for r in value):
            bad("a list of numeric lists")
        return [[float(v) for v in r] for r in value]
    if kind == "cases":
        if not isinstance(value, list) or not all(isinstance(r, dict) for r in value):
            bad("an array of tables ([[ito.case]])")
        return [_table(r, _CASE, f"{where}[{i}]") for i, r in enumerate(value)]
    raise AssertionError(kind)


def _table(raw: dict, schema: dict, where: str) -> dict:
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key {where + '.' if where else ''}{key}")
    out = {}
    for key, fld in schema.items():
        name = f"{where + '.' if where else ''}{key}"
        if key in raw:
            out[key] = _check(fld.kind, raw[key], name)
        elif fld.required:
            raise ConfigError(f"missing required key {name}")
        else:
            out[key] = fld.default
    return out


def validate(raw: dict) -> dict:
    """Check ``raw`` (a parsed TOML document) against :data:`SCHEMA` and fill in defaults.

    Absent sections stay absent; only keys inside present sections get defaults.
    """
    top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    cfg = {"": _table(top, SCHEMA[""], "")}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in SCHEMA or key == "":
                raise ConfigError(f"unknown section [{key}]")
            cfg[key] = _table(value, SCHEMA[key], key)
    sub = cfg[""]["subcommand"]
    if sub is not None and sub not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {sub!r}")
    return cfg


def require(cfg: dict, subcommand: str) -> None:
    for section in REQUIRED_SECTIONS[subcommand]:
        if section not in cfg:
            if section == "grid":
                raise ConfigError("missing required key grid.n_steps")
            raise ConfigError(f"missing required section [{section}] for {subcommand}")
    declared = cfg[""]["subcommand"]
    if declared is not None and declared != subcommand:
        raise ConfigError(f"config declares subcommand {declared!r}, not {subcommand!r}")


def load(path: str | Path) -> tuple[dict, str]:
    """Parse and validate a config file; returns ``(config, sha256 of its bytes)``."""
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    try:
        raw = tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config {p} is not valid TOML: {exc}") from None
    return validate(raw), hashlib.sha256(data).hexdigest()


# builders ---------------------------------------------------------------------

def grid_of(cfg: dict) -> TimeGrid:
    g = cfg["grid"]
    return TimeGrid(g["T"], g["n_steps"])


def reg_of(cfg: dict) -> RegressionConfig:
    mc = cfg.get("mc") or _table({}, SCHEMA["mc"], "mc")
    return RegressionConfig(mc["n_outer"], mc["n_inner"], mc["degree"], mc["ridge"], mc["basis"])


def levy_of(cfg: dict) -> LevySpec | None:
    lv = cfg.get("levy")
    if lv is None:
        return None
    marks, weights = lv["marks"], lv["weights"]
    marks = [marks] if isinstance(marks, float) else marks
    weights = [weights] if isinstance(weights, float) else weights
    return LevySpec(tuple(marks), tuple(weights))


def A_of(cfg: dict, grid: TimeGrid) -> IncreasingProcessPath:
    a = cfg.get("A")
    if a is None:
        return IncreasingProcessPath.zero(grid)
    for pair in a["jumps"]:
        if len(pair) != 2:
            raise ConfigError("A.jumps entries must be [time, size]")
    return IncreasingProcessPath.from_spec(grid, a["density"], [tuple(p) for p in a["jumps"]])


def coeffs_of(cfg: dict) -> CoefficientSet:
    c = cfg["coefficients"]
    kw = {k: v for k, v in c.items() if v != [] or k == "g"}
    return CoefficientSet.build(levy=levy_of(cfg), **kw)


def domain_of(cfg: dict) -> DomainSpec:
    d = cfg["domain"]
    if d["interval"] is not None:
        iv = d["interval"]
        if isinstance(iv, float) or len(iv) != 2:
            raise ConfigError("domain.interval must be [a, b]")
        if d["phi"] is not None:
            raise ConfigError("give either domain.interval or domain.phi, not both")
        return interval_domain(iv[0], iv[1], d["boundary_tol"])
    if d["phi"] is None:
        raise ConfigError("missing required key domain.phi (or domain.interval)")
    bbox = None if d["bbox"] is None else tuple(tuple(r) for r in d["bbox"])
    return DomainSpec(str(d["phi"]), d["n_dim"], d["boundary_tol"], bbox)
