"""JSON scenarios: schema check, dotted-path overrides, eager construction and validation."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import jsonschema
import numpy as np

from .coupling import (
    CoefficientSet,
    CouplingTree,
    check_class_membership,
    coefficients_from_spatial,
    constant_coupling_matrix,
    validate_tree,
)
from .errors import NullCtrlError, ParseError, SchemaError, ValidationFailed
from .geometry import (
    Grid,
    SubdomainFamily,
    build_cutoff,
    build_family,
    build_grid,
    check_star_hypotheses,
    check_tree_hypotheses,
    make_subdomain,
)
from .hum import ControlProblem
from .nonlinear import NonlinearSpec, check_nonlinear_hypotheses, linearize_coeffs, make_xi, measured_class, stationary_state
from .validation import ValidationReport
from .weights import WeightFamily, build_weight_family

_interval = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_intervals = {"type": "array", "items": _interval}
_auto_num = {"anyOf": [{"type": "number"}, {"const": "auto"}]}

SCHEMA: dict = {
    "type": "object",
    "required": ["name", "grid", "tree", "omega0", "omega", "omega_under", "omega_tilde"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "counterexample": {"type": "boolean"},
        "grid": {
            "type": "object",
            "required": ["L", "Nx", "T", "Nt"],
            "properties": {
                "L": {"type": "number"},
                "Nx": {"type": "integer"},
                "T": {"type": "number"},
                "Nt": {"type": "integer"},
            },
        },
        "tree": {"type": "array", "items": {"type": "integer"}},
        "omega0": _interval,
        "omega": _intervals,
        "omega_under": _intervals,
        "omega_tilde": _intervals,
        "coefficients": {
            "type": "object",
            "properties": {
                "M": {"type": "number"},
                "delta": {"type": "number"},
                "a": {"type": "array"},
                "c": {"type": "array"},
            },
        },
        "initial": {"type": "array"},
        "weights": {
            "type": "object",
            "properties": {
                "lambda": _auto_num,
                "s": _auto_num,
                "eps_sep": {"type": "number"},
                "peak_log": {"type": "number"},
                "delta1": _auto_num,
                "m0": {"anyOf": [{"type": "integer"}, {"const": "auto"}]},
            },
        },
        "control": {"type": "object"},
        "carleman": {"type": "object"},
        "observability": {"type": "object"},
        "linf": {"type": "object"},
        "kalman": {"type": "object"},
        "nonlinear": {
            "type": "object",
            "required": ["zeta", "xi"],
            "properties": {"zeta": {"type": "array"}, "xi": {"type": "array"}, "gbar": {"type": "array"}},
        },
    },
}

DEFAULTS: dict = {
    "seed": 12345,
    "counterexample": False,
    "weights": {"lambda": "auto", "s": "auto", "eps_sep": 0.1, "peak_log": 0.1, "delta1": "auto", "m0": "auto"},
    "control": {"eps": 1e-6, "eps_list": [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8], "tol": 1e-8, "class_samples": 10},
    "carleman": {"n_samples": 100, "modes": 10, "random_coefficients": False},
    "observability": {"tol": 1e-6, "max_iter": 100},
    "linf": {"n_samples": 20, "delta1": "auto", "m0": "auto"},
}

NONLINEAR_DEFAULTS: dict = {"y_max": 10.0, "beta0": 0.1, "eps": 1e-8, "tol": 1e-10, "max_iters": 10, "amplitude": 1e-3}


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("nullctrl.presets").iterdir() if p.name.endswith(".json"))


def _read_source(source: str | Path) -> tuple[str, str]:
    p = Path(source)
    if p.is_file():
        return p.read_text(), str(p)
    name = str(source)
    res = resources.files("nullctrl.presets") / f"{name}.json"
    if res.is_file():
        return res.read_text(), f"preset:{name}"
    raise ParseError(f"'{source}' is neither a file nor a preset (presets: {', '.join(preset_names())})")


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ParseError(f"override '{text}' is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    out = copy.deepcopy(raw)
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            else:
                node = node.setdefault(part, {})
        last = path[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return out


def _merge_defaults(raw: dict) -> dict:
    out = copy.deepcopy(raw)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            merged = dict(val)
            merged.update(out.get(key, {}))
            out[key] = merged
        else:
            out.setdefault(key, val)
    if "nonlinear" in out:
        merged = dict(NONLINEAR_DEFAULTS)
        merged.update(out["nonlinear"])
        out["nonlinear"] = merged
    return out


# ---------------------------------------------------------------------------
# field declarations


def spatial_field(grid: Grid, decl: Any, outer=None, inner=None) -> np.ndarray:
    """Evaluate a field declaration on the interior nodes."""
    x, L = grid.x, grid.L
    if decl is None:
        return np.zeros(grid.Nx)
    if isinstance(decl, (int, float)):
        return np.full(grid.Nx, float(decl))
    if isinstance(decl, list):
        return sum((spatial_field(grid, d, outer, inner) for d in decl), np.zeros(grid.Nx))
    kind = decl.get("type")
    amp = float(decl.get("amp", 1.0))
    if kind == "zero":
        return np.zeros(grid.Nx)
    if kind == "constant":
        return np.full(grid.Nx, float(decl["value"]))
    if kind == "sine":
        return amp * np.sin(int(decl.get("mode", 1)) * math.pi * x / L)
    if kind == "bubble":
        return amp * 4.0 * x * (L - x) / L**2
    if kind == "xexp":
        return amp * x * (L - x) * np.exp(x)
    if kind == "bump":
        o = decl.get("outer", outer)
        i = decl.get("inner", inner)
        if o is None or i is None:
            raise SchemaError("bump field needs 'outer' and 'inner' intervals")
        o = o if not isinstance(o, list) else make_subdomain(grid, *o)
        i = i if not isinstance(i, list) else make_subdomain(grid, *i)
        return float(decl.get("height", 1.0)) * build_cutoff(grid, o, i, int(decl.get("sign", 1)))
    if kind == "sum":
        return spatial_field(grid, decl["terms"], outer, inner)
    raise SchemaError(f"unknown field type '{kind}'")


# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    raw: dict
    origin: str
    grid: Grid
    tree: CouplingTree
    family: SubdomainFamily
    coeffs: CoefficientSet
    weights: WeightFamily
    z0: np.ndarray
    report: ValidationReport
    nonlinear: NonlinearSpec | None = None
    ybar: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def counterexample(self) -> bool:
        return bool(self.raw.get("counterexample", False))

    def section(self, key: str) -> dict:
        return self.raw.get(key, {})

    @cached_property
    def digest(self) -> str:
        body = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(body.encode()).hexdigest()

    def problem(self, coeffs: CoefficientSet | None = None) -> ControlProblem:
        return ControlProblem(self.grid, self.tree, coeffs or self.coeffs, self.weights, self.family.omega0)

    def kalman_pair(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.section("kalman")
        n1 = self.tree.n + 1
        if "A0" in k:
            A0 = np.asarray(k["A0"], dtype=float)
            B = np.asarray(k.get("B", np.eye(n1)[0]), dtype=float)
            return A0, B
        g = self.grid
        if "a" in k:
            a_vals = [float(v) for v in k["a"]]
        else:
            a_vals = [float(np.mean(self.coeffs.a[i, 0, self.family.omega_under[i].mask(g)])) for i in range(1, n1)]
        c_vals = [float(v) for v in k["c"]] if "c" in k else [float(np.mean(self.coeffs.c[j, 0])) for j in range(n1)]
        A0 = constant_coupling_matrix(self.tree, a_vals, c_vals)
        B = np.asarray(k.get("B", np.eye(n1)[0]), dtype=float)
        return A0, B

    def weight_params(self) -> dict:
        w = self.section("weights")
        return {"lambda": self.weights.lam, "s": self.weights.s, "eps_sep": self.weights.eps_sep, "peak_log": w.get("peak_log")}

    def nonlinear_y0(self, amplitude: float | None = None) -> np.ndarray:
        nl = self.section("nonlinear")
        amp = float(nl["amplitude"] if amplitude is None else amplitude)
        shape = self.z0 / float(np.max(np.abs(self.z0)))
        return self.ybar + amp * shape


def _validation_error(report: ValidationReport, msg: str, exc: Exception) -> ValidationFailed:
    report.add(msg, False, error=f"{type(exc).__name__}: {exc}")
    return ValidationFailed(f"scenario validation failed: {msg}: {exc}", report)


def load_scenario(source: str | Path, overrides: Iterable[str] = (), seed: int | None = None, enforce: bool = True) -> Scenario:
    """Load, validate and build a scenario from a path or preset name.

    Raises ParseError (unreadable JSON), SchemaError (shape of the document)
    or ValidationFailed (carrying the aggregated report).  Scenarios flagged
    ``counterexample`` are built even when validation fails; the report is
    kept for inspection.
    """
    text, origin = _read_source(source)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{origin}: {exc}") from exc
    raw = apply_overrides(raw, overrides)
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{origin}: at {where}: {exc.message}") from exc
    raw = _merge_defaults(raw)
    if seed is not None:
        raw["seed"] = int(seed)
    report = ValidationReport(f"scenario {raw['name']}")

    try:
        gd = raw["grid"]
        grid = build_grid(gd["L"], gd["Nx"], gd["T"], gd["Nt"])
        tree = validate_tree(raw["tree"])
        n = tree.n
        if len(raw["omega"]) != n:
            raise SchemaError(f"'omega' needs {n} intervals, got {len(raw['omega'])}")
        for key in ("omega_under", "omega_tilde"):
            if len(raw[key]) != n + 1:
                raise SchemaError(f"'{key}' needs {n + 1} intervals, got {len(raw[key])}")
        family = build_family(grid, raw["omega0"], raw["omega"], raw["omega_under"], raw["omega_tilde"])
    except SchemaError:
        raise
    except NullCtrlError as exc:
        raise _validation_error(report, "construction", exc) from exc

    hyp = check_star_hypotheses(family) if tree.is_star else check_tree_hypotheses(family, tree)
    report.extend(hyp, prefix="geometry.")

    spec = None
    ybar = None
    try:
        if "nonlinear" in raw:
            nl = raw["nonlinear"]
            zeta = [spatial_field(grid, d) for d in nl["zeta"]]
            xis = [make_xi(d) for d in nl["xi"]]
            gbar = [spatial_field(grid, d) for d in nl.get("gbar", [None] * (n + 1))]
            if not (len(zeta) == len(xis) == len(gbar) == n + 1):
                raise SchemaError(f"nonlinear 'zeta', 'xi' and 'gbar' need {n + 1} entries")
            spec = NonlinearSpec(grid, tree, zeta, xis, gbar, float(nl["y_max"]))
            ybar = stationary_state(spec).y
            report.extend(check_nonlinear_hypotheses(spec, family, ybar), prefix="nonlinear.")

        cd = raw.get("coefficients")
        if cd is not None:
            a_fields = [
                spatial_field(grid, d, family.omega[i], family.omega_under[i + 1]) for i, d in enumerate(cd.get("a", []))
            ]
            if len(a_fields) != n:
                raise SchemaError(f"'coefficients.a' needs {n} entries, got {len(a_fields)}")
            c_fields = [spatial_field(grid, d) for d in cd.get("c", [0.0] * (n + 1))]
            coeffs = coefficients_from_spatial(grid, a_fields, c_fields, float(cd.get("M", 1.0)), float(cd.get("delta", 0.5)))
        elif spec is not None:
            lin = linearize_coeffs(spec, ybar)
            coeffs = CoefficientSet(lin.a, lin.c, *measured_class(lin, family))
        else:
            raise SchemaError("scenario needs 'coefficients' or 'nonlinear'")
        report.extend(check_class_membership(coeffs, family), prefix="class.")

        w = raw["weights"]
        weights = build_weight_family(grid, family.omega_tilde, tree, w["eps_sep"], w["lambda"], w["s"], w["peak_log"])
        cert = weights.invariants()
        for name, margin in cert.margins.items():
            report.add(f"weights.{name}", margin > 0, margin=margin)

        init = raw.get("initial", [{"type": "sine", "mode": 1}] * (n + 1))
        if len(init) != n + 1:
            raise SchemaError(f"'initial' needs {n + 1} entries, got {len(init)}")
        z0 = np.array([spatial_field(grid, d) for d in init])
    except SchemaError:
        raise
    except (NullCtrlError, KeyError) as exc:
        raise _validation_error(report, "construction", exc) from exc

    if enforce and not raw["counterexample"] and not report.ok:
        names = ", ".join(c.name for c in report.failures())
        raise ValidationFailed(f"scenario '{raw['name']}' failed validation: {names}", report)
    return Scenario(raw["name"], raw, origin, grid, tree, family, coeffs, weights, z0, report, spec, ybar)
