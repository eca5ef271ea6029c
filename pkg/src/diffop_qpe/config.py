"""
YAML experiment configuration loading with path/line error reporting.

One document describes one problem and one scan.  See README.md for the
schema.  Every validation error is raised as :class:`ConfigError` with the
form ``<source>:<line>: <path>: <message>``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .operators import (
    COEFFICIENT_KINDS,
    CoefficientFn,
    DomainMask,
    OperatorError,
    OperatorSpec1D,
    TensorOperatorSpec,
)

__all__ = ["ConfigError", "ExperimentConfig", "ProblemConfig", "load_config", "parse_config",
           "parse_problem", "SCAN_KINDS"]

SCAN_KINDS = ("truncation", "splitting", "resolution", "sampling", "cost")


class ConfigError(ValueError):
    pass


class _Located:
    """Python value tree plus a path -> line index built from YAML nodes."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.lines: dict[str, int] = {}
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else 0
            raise ConfigError(f"{source}:{line}: <document>: invalid YAML: {exc}") from None
        if node is None:
            raise ConfigError(f"{source}:1: <document>: empty configuration")
        self.data = self._convert(node, "")

    def _convert(self, node, path: str):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = k.value
                out[key] = self._convert(v, f"{path}.{key}" if path else key)
            return out
        if isinstance(node, yaml.SequenceNode):
            return [self._convert(v, f"{path}[{i}]") for i, v in enumerate(node.value)]
        return _scalar(node)

    def line(self, path: str) -> int:
        while path and path not in self.lines:
            path = path.rsplit(".", 1)[0] if "." in path else ""
        return self.lines.get(path, 1)

    def error(self, path: str, msg: str) -> ConfigError:
        return ConfigError(f"{self.source}:{self.line(path)}: {path or '<document>'}: {msg}")


_LOADER = yaml.SafeLoader("")


def _scalar(node: yaml.ScalarNode):
    value = _LOADER.construct_object(node)
    if isinstance(value, str) and node.style is None:
        # plain scalars such as 1e-5 are strings to YAML 1.1 but numbers here
        for conv in (int, float):
            try:
                return conv(value)
            except ValueError:
                pass
    return value


class _Reader:
    def __init__(self, loc: _Located):
        self.loc = loc

    def err(self, path, msg):
        return self.loc.error(path, msg)

    def get(self, tree, path, key, kind=None, default=..., required=False):
        full = f"{path}.{key}" if path else key
        if not isinstance(tree, dict):
            raise self.err(path, "expected a mapping")
        if key not in tree:
            if required or default is ...:
                raise self.err(path, f"missing required key '{key}'")
            return default
        return self.check(tree[key], full, kind)

    def check(self, value, path, kind):
        if kind is None:
            return value
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                if isinstance(value, float) and value.is_integer():
                    return int(value)
                raise self.err(path, f"expected an integer, got {value!r}")
            return int(value)
        if kind == "number":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise self.err(path, f"expected a number, got {value!r}")
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise self.err(path, f"expected a string, got {value!r}")
            return value
        if kind == "list":
            if not isinstance(value, list) or not value:
                raise self.err(path, "expected a non-empty list")
            return value
        if kind == "dict":
            if not isinstance(value, dict):
                raise self.err(path, "expected a mapping")
            return value
        if kind == "bool":
            if not isinstance(value, bool):
                raise self.err(path, f"expected true/false, got {value!r}")
            return value
        raise AssertionError(kind)

    def number_grid(self, value, path, kind="number"):
        """List of numbers, or {logspace: [a, b, n]} / {powers_of_two: [a, b]}."""
        if isinstance(value, dict):
            if "logspace" in value:
                a, b, n = self.check(value["logspace"], f"{path}.logspace", "list")
                vals = np.logspace(float(a), float(b), int(n))
                return [float(v) for v in vals]
            if "powers_of_two" in value:
                a, b = self.check(value["powers_of_two"], f"{path}.powers_of_two", "list")
                return [2 ** k for k in range(int(a), int(b) + 1)]
            raise self.err(path, "grid mapping must use 'logspace' or 'powers_of_two'")
        if not isinstance(value, list):
            value = [value]
        if not value:
            raise self.err(path, "grid must be non-empty")
        return [self.check(v, f"{path}[{i}]", kind) for i, v in enumerate(value)]


def _coefficient(r: _Reader, value, path) -> CoefficientFn:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return CoefficientFn.constant(float(value))
    if not isinstance(value, dict):
        raise r.err(path, "coefficient must be a number or a mapping with 'kind' and 'params'")
    kind = r.get(value, path, "kind", "str")
    if kind not in COEFFICIENT_KINDS:
        raise r.err(f"{path}.kind", f"unknown coefficient kind '{kind}'; expected one of {list(COEFFICIENT_KINDS)}")
    params = r.get(value, path, "params", "list")
    params = [r.check(p, f"{path}.params[{i}]", "number") for i, p in enumerate(params)]
    smooth = r.get(value, path, "smoothness", "int", default=None)
    try:
        return CoefficientFn(kind, tuple(params), smooth)
    except OperatorError as exc:
        raise r.err(path, str(exc)) from None


def _spec1d(r: _Reader, tree, path) -> OperatorSpec1D:
    coeffs = r.get(tree, path, "coefficients", "list")
    fns = [_coefficient(r, c, f"{path}.coefficients[{i}]") for i, c in enumerate(coeffs)]
    order = r.get(tree, path, "order", "int", default=len(fns) - 1)
    try:
        return OperatorSpec1D(order, tuple(fns))
    except OperatorError as exc:
        raise r.err(path, str(exc)) from None


@dataclass
class ProblemConfig:
    spec: OperatorSpec1D | TensorOperatorSpec
    sampling: str = "spectral"
    mask: dict | None = None

    @property
    def dimension(self) -> int:
        return 1 if isinstance(self.spec, OperatorSpec1D) else self.spec.dimension_D

    def build_mask(self, N: int) -> DomainMask | None:
        if self.mask is None:
            return None
        D = self.dimension
        if "box" in self.mask:
            lo = self.mask["box"]["lower"]
            hi = self.mask["box"]["upper"]
            return DomainMask.box(N, lo, hi)
        if "ball" in self.mask:
            center = np.asarray(self.mask["ball"]["center"], dtype=float)
            radius = float(self.mask["ball"]["radius"])

            def inside(*x):
                d2 = sum((np.asarray(xa) / N - c) ** 2 for xa, c in zip(x, center))
                return d2 <= radius ** 2

            return DomainMask.from_predicate(inside, N, D, vectorized=True)
        raise ValueError("unknown mask")


def parse_problem(r: _Reader, tree, path="problem") -> ProblemConfig:
    tree = r.check(tree, path, "dict")
    dim = r.get(tree, path, "dimension", "int", default=1)
    if dim < 1:
        raise r.err(f"{path}.dimension", "dimension must be >= 1")
    sampling = r.get(tree, path, "sampling", "str", default="spectral")
    if sampling not in ("spectral", "pointwise"):
        raise r.err(f"{path}.sampling", "sampling must be 'spectral' or 'pointwise'")
    if "terms" in tree:
        terms = r.get(tree, path, "terms", "list")
        parsed = []
        for b, term in enumerate(terms):
            tpath = f"{path}.terms[{b}]"
            factors = r.get(term, tpath, "factors", "list")
            if len(factors) != dim:
                raise r.err(f"{tpath}.factors", f"expected {dim} factors (one per axis), got {len(factors)}")
            parsed.append(tuple(_spec1d(r, f, f"{tpath}.factors[{a}]") for a, f in enumerate(factors)))
        spec = TensorOperatorSpec(dim, tuple(parsed))
        if dim == 1 and len(parsed) == 1:
            spec = parsed[0][0]
    elif "coefficients" in tree:
        if dim != 1:
            raise r.err(path, "multi-dimensional problems need 'terms'")
        spec = _spec1d(r, tree, path)
    else:
        raise r.err(path, "problem needs 'coefficients' (1D) or 'terms'")
    mask = None
    if "mask" in tree:
        mask = r.get(tree, path, "mask", "dict")
        mpath = f"{path}.mask"
        if "box" in mask:
            box = r.get(mask, mpath, "box", "dict")
            for key in ("lower", "upper"):
                vals = r.get(box, f"{mpath}.box", key, "list")
                if len(vals) != dim:
                    raise r.err(f"{mpath}.box.{key}", f"expected {dim} entries")
                box[key] = [r.check(v, f"{mpath}.box.{key}[{i}]", "int") for i, v in enumerate(vals)]
        elif "ball" in mask:
            ball = r.get(mask, mpath, "ball", "dict")
            c = r.get(ball, f"{mpath}.ball", "center", "list")
            if len(c) != dim:
                raise r.err(f"{mpath}.ball.center", f"expected {dim} entries")
            ball["center"] = [r.check(v, f"{mpath}.ball.center[{i}]", "number") for i, v in enumerate(c)]
            ball["radius"] = r.get(ball, f"{mpath}.ball", "radius", "number")
        else:
            raise r.err(mpath, "mask must be 'box' or 'ball'")
    return ProblemConfig(spec, sampling, mask)


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    ``raw`` is the parsed document (used for the report echo and hash);
    ``scan`` holds the normalized scan parameters for ``scan['kind']``.
    """

    name: str
    problem: ProblemConfig | None
    scan: dict
    seed: int
    output: dict
    raw: dict = field(repr=False)
    source: str = "<string>"

    @property
    def kind(self) -> str:
        return self.scan["kind"]


def _tolerance(r, scan, path, slope_key, tol_key):
    return (r.get(scan, path, slope_key, "number", required=True),
            r.get(scan, path, tol_key, "number", required=True))


def _parse_scan(r: _Reader, scan: dict, problem: ProblemConfig | None) -> dict:
    path = "scan"
    kind = r.get(scan, path, "kind", "str")
    if kind not in SCAN_KINDS:
        raise r.err(f"{path}.kind", f"unknown scan kind '{kind}'; expected one of {list(SCAN_KINDS)}")
    out: dict = {"kind": kind}
    grid = r.get(scan, path, "grid", "dict", default={})
    gpath = f"{path}.grid"

    def ints(key, default=...):
        if key not in grid:
            if default is ...:
                raise r.err(gpath, f"missing required key '{key}'")
            return default
        return [int(v) for v in r.number_grid(grid[key], f"{gpath}.{key}", "int")]

    def nums(key, default=...):
        if key not in grid:
            if default is ...:
                raise r.err(gpath, f"missing required key '{key}'")
            return default
        return r.number_grid(grid[key], f"{gpath}.{key}", "number")

    if kind != "cost" and problem is None:
        raise r.err("problem", f"scan kind '{kind}' needs a problem")

    if kind == "truncation":
        out["N"] = ints("N")
        out["f"] = r.get(scan, path, "f", "int", default=1)
        out["reference"] = r.get(scan, path, "reference", default="auto")
        ref = out["reference"]
        if not (ref in ("auto", "closed-form", "richardson") or isinstance(ref, (int, float))):
            raise r.err(f"{path}.reference", "reference must be auto, closed-form, richardson or a number")
        out["richardson_N"] = [int(v) for v in r.get(scan, path, "richardson_N", "list", default=[256, 512])]
        out["solver"] = r.get(scan, path, "solver", "str", default="dense")
        out["expected_slope"], out["slope_tol"] = _tolerance(r, scan, path, "expected_slope", "slope_tol")
        out["min_points"] = r.get(scan, path, "min_points", "int", default=3)
    elif kind == "splitting":
        out["nu"] = r.get(scan, path, "nu", "int", default=2)
        if out["nu"] not in (2, 4):
            raise r.err(f"{path}.nu", "nu must be 2 or 4")
        out["metric"] = r.get(scan, path, "metric", "str", default="max")
        if out["metric"] not in ("max", "lowest"):
            raise r.err(f"{path}.metric", "metric must be 'max' or 'lowest'")
        if "tau_sweep" not in scan and "N_sweep" not in scan:
            raise r.err(path, "splitting scan needs 'tau_sweep' and/or 'N_sweep'")
        if "tau_sweep" in scan:
            tp = f"{path}.tau_sweep"
            ts = r.get(scan, path, "tau_sweep", "dict")
            out["tau_sweep"] = {
                "N": r.get(ts, tp, "N", "int"),
                "tau": r.number_grid(r.get(ts, tp, "tau"), f"{tp}.tau"),
                "expected_slope": r.get(ts, tp, "expected_slope", "number", required=True),
                "slope_tol": r.get(ts, tp, "slope_tol", "number", required=True),
            }
        if "N_sweep" in scan:
            npth = f"{path}.N_sweep"
            ns = r.get(scan, path, "N_sweep", "dict")
            out["N_sweep"] = {
                "tau": r.get(ns, npth, "tau", "number"),
                "N": [int(v) for v in r.number_grid(r.get(ns, npth, "N"), f"{npth}.N", "int")],
                "expected_slope": r.get(ns, npth, "expected_slope", "number", required=True),
                "slope_tol": r.get(ns, npth, "slope_tol", "number", required=True),
            }
    elif kind == "resolution":
        out["N"] = r.get(scan, path, "N", "int")
        out["M"] = ints("M")
        out["tau"] = r.get(scan, path, "tau", "number")
        out["f"] = r.get(scan, path, "f", "int", default=1)
        out["dither"] = r.get(scan, path, "dither", "int", default=4)
        if out["dither"] < 1:
            raise r.err(f"{path}.dither", "dither must be >= 1")
        out["nu"] = r.get(scan, path, "nu", "int", default=2)
        out["expected_slope"], out["slope_tol"] = _tolerance(r, scan, path, "expected_slope", "slope_tol")
    elif kind == "sampling":
        out["N"] = r.get(scan, path, "N", "int")
        out["M"] = r.get(scan, path, "M", "int")
        out["tau"] = r.get(scan, path, "tau", "number")
        out["nu"] = r.get(scan, path, "nu", "int", default=2)
        out["samples"] = r.get(scan, path, "samples", "int")
        out["sigma"] = r.get(scan, path, "sigma", "number", required=True)
        mix = r.get(scan, path, "mixture", "dict")
        mp = f"{path}.mixture"
        idx = [r.check(v, f"{mp}.indices[{i}]", "int") for i, v in enumerate(r.get(mix, mp, "indices", "list"))]
        wts = [r.check(v, f"{mp}.weights[{i}]", "number") for i, v in enumerate(r.get(mix, mp, "weights", "list"))]
        if len(idx) != len(wts):
            raise r.err(mp, "indices and weights must have equal length")
        if any(w < 0 for w in wts) or abs(sum(wts) - 1.0) > 1e-12:
            raise r.err(f"{mp}.weights", "weights must be non-negative and sum to 1")
        out["mixture"] = {"indices": idx, "weights": wts}
        out["region_halfwidth"] = r.get(scan, path, "region_halfwidth", "int", default=2)
        if "prolong" in scan:
            pp = f"{path}.prolong"
            pr = r.get(scan, path, "prolong", "dict")
            sub = r.get(pr, pp, "problem", default=None)
            out["prolong"] = {
                "N0": r.get(pr, pp, "N0", "int"),
                "N": r.get(pr, pp, "N", "int"),
                "M": r.get(pr, pp, "M", "int"),
                "tau": r.get(pr, pp, "tau", "number"),
                "min_fraction": r.get(pr, pp, "min_fraction", "number", required=True),
                "problem": parse_problem(r, sub, f"{pp}.problem") if sub is not None else None,
            }
    elif kind == "cost":
        out["N"] = ints("N")
        out["D"] = ints("D", [1])
        out["S"] = ints("S", [1])
        out["nu"] = ints("nu", [2])
        out["c"] = r.get(scan, path, "c", "number", default=3.0)
        out["constants"] = r.get(scan, path, "constants", "number", default=1.0)
        out["N0"] = r.get(scan, path, "N0", "int", default=None)
        out["coefficient_bits"] = r.get(scan, path, "coefficient_bits", "int", default=0)
        out["threshold_ancilla"] = r.get(scan, path, "threshold_ancilla", "bool", default=False)
    return out


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    loc = _Located(text, source)
    r = _Reader(loc)
    data = r.check(loc.data, "", "dict")
    name = r.get(data, "", "name", "str", default=Path(source).stem)
    seed = r.get(data, "", "seed", "int", default=0)
    problem = parse_problem(r, data["problem"]) if "problem" in data else None
    scan = _parse_scan(r, r.get(data, "", "scan", "dict"), problem)
    output = r.get(data, "", "output", "dict", default={})
    formats = output.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
        raise r.err("output.formats", "formats must be a list drawn from [csv, json]")
    output = {"dir": str(output.get("dir", "reports")), "formats": formats}
    return ExperimentConfig(name, problem, scan, seed, output, copy.deepcopy(data), source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}:0: <document>: cannot read: {exc.strerror}") from None
    return parse_config(text, str(path))
