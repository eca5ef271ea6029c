"""
Config-driven experiments: truncation, splitting, resolution and sampling
scans plus cost tables, each producing a :class:`ScanReport`.

Reports are deterministic: records are ordered by grid index, every record
carries the config hash and seed, and no wall-clock data is stored.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy import stats

from . import __version__
from .config import ExperimentConfig, ProblemConfig
from .cost import CostInputs, cost_report, threshold_D
from .operators import (
    DiscretizedOperator,
    OperatorSpec1D,
    TensorOperatorSpec,
    apply_domain_mask,
    build_operator,
)
from .phase_estimation import (
    decode_phase,
    index_distribution_analytic,
    peak_probability_bound,
    run_phase_estimation,
)
from .solvers import eig_dense, eig_lowest_krylov, overlap, prolong_state
from .splitting import product_step, split_operator, splitting_error

__all__ = [
    "ExperimentError",
    "FitResult",
    "Check",
    "ScanReport",
    "fit_loglog",
    "config_hash",
    "build_problem",
    "continuum_eigenvalues",
    "reference_eigenvalue",
    "step_eigensystem",
    "run_truncation_scan",
    "run_splitting_scan",
    "run_resolution_scan",
    "run_sampling_experiment",
    "run_cost_table",
    "run_scan",
    "emit_report",
]

EPS = np.finfo(float).eps


class ExperimentError(RuntimeError):
    pass


@dataclass
class FitResult:
    """Least-squares line through (log x, log y) for the retained points.

    ``excluded`` gives, per input point, None or the reason it was dropped
    ('exact', 'floor' or 'trend').
    """

    slope: float
    intercept: float
    stderr: float
    half_width: float
    n_used: int
    excluded: list

    def to_dict(self) -> dict:
        return asdict(self)


def _lsq(lx, ly):
    n = len(lx)
    A = np.vstack([lx, np.ones(n)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope, icpt = float(coef[0]), float(coef[1])
    if n > 2:
        resid = ly - A @ coef
        s2 = float(resid @ resid) / (n - 2)
        sxx = float(np.sum((lx - lx.mean()) ** 2))
        stderr = math.sqrt(s2 / sxx) if sxx > 0 else float("nan")
        half = float(stats.t.ppf(0.975, n - 2)) * stderr
    else:
        stderr = half = float("nan")
    return slope, icpt, stderr, half


def fit_loglog(x, y, floor=None, ratio_tol: float = 0.5, min_points: int = 2) -> FitResult:
    """Fit log y = slope log x + c, dropping floor-limited endpoints.

    Points with y == 0 are excluded as 'exact' and points with
    y <= floor (scalar or per-point) as 'floor'.  Then, while more than
    ``min_points`` remain, an endpoint is dropped as 'trend' if the ratio
    to its neighbour deviates from the fitted trend by more than
    ``ratio_tol`` (relative).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    excluded: list = [None] * len(x)
    floor_arr = np.broadcast_to(np.asarray(0.0 if floor is None else floor, dtype=float), x.shape)
    for i in range(len(x)):
        if y[i] == 0.0:
            excluded[i] = "exact"
        elif y[i] <= floor_arr[i]:
            excluded[i] = "floor"
    used = [i for i in range(len(x)) if excluded[i] is None]
    if len(used) < min_points:
        raise ExperimentError(f"only {len(used)} usable points for a log-log fit (need {min_points})")
    lx, ly = np.log(x), np.log(y, where=y > 0, out=np.full(len(y), -np.inf))
    while True:
        slope, icpt, stderr, half = _lsq(lx[used], ly[used])
        if len(used) <= max(min_points, 2):
            break
        worst, worst_dev = None, ratio_tol
        for end, nb in ((used[0], used[1]), (used[-1], used[-2])):
            observed = math.exp(ly[end] - ly[nb])
            predicted = math.exp(slope * (lx[end] - lx[nb]))
            dev = abs(observed / predicted - 1.0)
            if dev > worst_dev:
                worst, worst_dev = end, dev
        if worst is None:
            break
        excluded[worst] = "trend"
        used.remove(worst)
    return FitResult(slope, icpt, stderr, half, len(used), excluded)


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    expected: float | None = None
    tol: float | None = None
    detail: str = ""


@dataclass
class ScanReport:
    name: str
    kind: str
    records: list[dict]
    fits: dict
    checks: list[Check]
    config: dict
    config_hash: str
    seed: int
    tool_version: str = __version__
    status: str = "ok"

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "status": self.status,
            "passed": self.passed,
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "config": self.config,
            "fits": {k: v.to_dict() for k, v in self.fits.items()},
            "checks": [asdict(c) for c in self.checks],
            "records": self.records,
        }


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps({"config": config.raw, "seed": config.seed}, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _slope_check(name, fit: FitResult, expected, tol) -> Check:
    ok = bool(abs(fit.slope - expected) <= tol)
    return Check(name, ok, fit.slope, expected, tol,
                 f"slope {fit.slope:.4f} +/- {fit.half_width:.3g} from {fit.n_used} points")


def build_problem(problem: ProblemConfig, N: int) -> DiscretizedOperator:
    op = build_operator(problem.spec, N, problem.sampling)
    mask = problem.build_mask(N)
    if mask is not None:
        op = apply_domain_mask(op, mask)
    return op


def _symbol_1d(spec: OperatorSpec1D, k: np.ndarray) -> np.ndarray:
    return spec.symbol(k)


def continuum_eigenvalues(spec, count: int) -> np.ndarray:
    """Lowest ``count`` continuum eigenvalues of a constant-coefficient spec.

    Plane waves exp(2 pi i k.x) are eigenfunctions; each 1D factor
    contributes sum_s a_s (2 pi k)^{2s}.
    """
    if not spec.is_constant:
        raise ExperimentError("closed-form reference needs constant coefficients")
    K = count + 4
    if isinstance(spec, OperatorSpec1D):
        k = np.arange(-K, K + 1)
        return np.sort(_symbol_1d(spec, k))[:count]
    D = spec.dimension_D
    K = max(2, int(math.ceil(count ** (1.0 / D))) + 3)
    k = np.arange(-K, K + 1)
    grids = np.meshgrid(*([k] * D), indexing="ij")
    total = np.zeros(grids[0].shape)
    for term in spec.terms:
        prod = np.ones(grids[0].shape)
        for a, factor in enumerate(term):
            prod = prod * _symbol_1d(factor, grids[a])
        total = total + prod
    return np.sort(total.ravel())[:count]


def _dense_eigenvalue(op: DiscretizedOperator, f: int) -> float:
    pairs = eig_dense(op)
    if f >= len(pairs):
        raise ExperimentError(f"index f={f} beyond the {len(pairs)} retained eigenvalues")
    return pairs[f].value


def reference_eigenvalue(problem: ProblemConfig, f: int, method="auto", richardson_N=(256, 512)):
    """Continuum eigenvalue estimate and the method used to obtain it."""
    if isinstance(method, (int, float)) and not isinstance(method, bool):
        return float(method), "given"
    if method in ("auto", "closed-form") and problem.spec.is_constant and problem.mask is None:
        return float(continuum_eigenvalues(problem.spec, f + 1)[f]), "closed-form"
    if method == "closed-form":
        raise ExperimentError("closed-form reference needs constant coefficients and no mask")
    n1, n2 = richardson_N
    l1 = _dense_eigenvalue(build_problem(problem, n1), f)
    l2 = _dense_eigenvalue(build_problem(problem, n2), f)
    return (n2 ** 2 * l2 - n1 ** 2 * l1) / (n2 ** 2 - n1 ** 2), "richardson"


def run_truncation_scan(config: ExperimentConfig) -> ScanReport:
    sc = config.scan
    h = config_hash(config)
    Ns = sc["N"]
    if len(Ns) < sc["min_points"]:
        raise ExperimentError(f"truncation fit needs at least {sc['min_points']} grid sizes, got {len(Ns)}")
    f = sc["f"]
    ref, how = reference_eigenvalue(config.problem, f, sc["reference"], sc["richardson_N"])
    denom = abs(ref) if ref != 0 else 1.0
    records = []
    for i, N in enumerate(Ns):
        op = build_problem(config.problem, N)
        if sc["solver"] == "krylov":
            lam = eig_lowest_krylov(op, f, mu=ref - 1e-3 * max(1.0, abs(ref))).value
        else:
            lam = _dense_eigenvalue(op, f)
        err = abs(lam - ref) / denom
        records.append({"index": i, "N": N, "f": f, "lambda_N": lam, "reference": ref,
                        "reference_method": how, "rel_error": err, "config_hash": h, "seed": config.seed})
    errs = np.array([r["rel_error"] for r in records])
    fits, checks = {}, []
    status = "ok"
    if np.all(errs <= 1e-13):
        status = "exact"
        checks.append(Check("truncation-exact", True, float(errs.max()), 0.0, 1e-13,
                            "discretization reproduces the reference; slope undefined"))
    else:
        fit = fit_loglog(Ns, errs, floor=1e-13, min_points=sc["min_points"])
        fits["N"] = fit
        checks.append(_slope_check("truncation-slope", fit, sc["expected_slope"], sc["slope_tol"]))
    return ScanReport(config.name, "truncation", records, fits, checks, config.raw, h, config.seed, status=status)


def _metric(res, metric):
    return res.max_deviation if metric == "max" else float(res.deviation[int(metric)])


def _floor(side: int, tau: float) -> float:
    return 4.0 * side * EPS / tau


def run_splitting_scan(config: ExperimentConfig) -> ScanReport:
    sc = config.scan
    h = config_hash(config)
    nu = sc["nu"]
    records, fits, checks = [], {}, []
    idx = 0
    if "tau_sweep" in sc:
        ts = sc["tau_sweep"]
        op = build_problem(config.problem, ts["N"])
        plan = split_operator(op, nu)
        taus, devs, floors = [], [], []
        for tau in ts["tau"]:
            res = splitting_error(plan, op, tau)
            d = _metric(res, sc["metric"])
            taus.append(tau)
            devs.append(d)
            floors.append(_floor(op.side, tau))
            records.append({"index": idx, "sweep": "tau", "N": ts["N"], "tau": tau, "nu": nu, "R": plan.R,
                            "deviation": d, "floor": floors[-1], "norm_tau": float(np.max(np.abs(res.lambda_exact))) * tau,
                            "config_hash": h, "seed": config.seed})
            idx += 1
        fit = fit_loglog(taus, devs, floor=floors)
        fits["tau"] = fit
        checks.append(_slope_check("splitting-tau-slope", fit, ts["expected_slope"], ts["slope_tol"]))
    if "N_sweep" in sc:
        ns = sc["N_sweep"]
        Ns, devs, floors = [], [], []
        for N in ns["N"]:
            op = build_problem(config.problem, N)
            plan = split_operator(op, nu)
            res = splitting_error(plan, op, ns["tau"])
            d = _metric(res, sc["metric"])
            Ns.append(N)
            devs.append(d)
            floors.append(_floor(op.side, ns["tau"]))
            records.append({"index": idx, "sweep": "N", "N": N, "tau": ns["tau"], "nu": nu, "R": plan.R,
                            "deviation": d, "floor": floors[-1],
                            "norm_tau": float(np.max(np.abs(res.lambda_exact))) * ns["tau"],
                            "config_hash": h, "seed": config.seed})
            idx += 1
        fit = fit_loglog(Ns, devs, floor=floors)
        fits["N"] = fit
        raw = fit_loglog(Ns, devs, ratio_tol=np.inf)
        fits["N_unfiltered"] = raw
        checks.append(_slope_check("splitting-N-slope", fit, ns["expected_slope"], ns["slope_tol"]))
    return ScanReport(config.name, "splitting", records, fits, checks, config.raw, h, config.seed)


def step_eigensystem(step, retained=None):
    """Eigenphases / tau (ascending) and eigenvectors of a dense product step."""
    U = step.matrix()
    T, Z = sla.schur(U, output="complex")
    lam = np.angle(np.diag(T)) / step.tau - step.shift
    order = np.argsort(lam, kind="stable")
    return lam[order], Z[:, order]


def run_resolution_scan(config: ExperimentConfig) -> ScanReport:
    """Decode error of phase estimation on an exact eigenvector of U_Pi.

    For each M the run is repeated with ``dither`` diagonal shifts
    mu_k = (k / dither) 2 pi / (M tau), spreading the eigenphase evenly over
    one bin; the recorded error is the mean over shifts.  Every individual
    run must satisfy the half-width and peak-probability bounds.
    """
    sc = config.scan
    h = config_hash(config)
    N, tau, K = sc["N"], sc["tau"], sc["dither"]
    op = build_problem(config.problem, N)
    plan = split_operator(op, sc["nu"])
    base = product_step(plan, tau)
    lam_all, vecs = step_eigensystem(base)
    f = sc["f"]
    lam, vec = float(lam_all[f]), vecs[:, f]
    records, checks = [], []
    within_all, peak_all = True, True
    for i, M in enumerate(sc["M"]):
        half = math.pi / (M * tau)
        bound = peak_probability_bound(M)
        errs, peaks = [], []
        for k in range(K):
            mu = (k / K) * 2.0 * math.pi / (M * tau)
            if abs((lam + mu) * tau) >= math.pi:
                raise ExperimentError(f"|(lambda + mu) tau| >= pi at M={M}; reduce tau")
            res = run_phase_estimation(op, plan, vec, M, step=base.with_shift(mu))
            l = res.argmax()
            est, _ = decode_phase(l, M, tau, mu)
            errs.append(abs(est - lam))
            peaks.append(float(res.distribution[l]))
        within = bool(np.all(np.array(errs) <= half * (1 + 1e-9)))
        peak_ok = bool(np.all(np.array(peaks) >= bound * (1 - 1e-9)))
        within_all &= within
        peak_all &= peak_ok
        records.append({"index": i, "N": N, "M": M, "tau": tau, "f": f, "lambda_pi": lam, "dither": K,
                        "mean_error": float(np.mean(errs)), "max_error": float(np.max(errs)), "half_width": half,
                        "within_half_width": within, "peak_prob_min": float(np.min(peaks)), "peak_bound": bound,
                        "peak_ok": peak_ok, "config_hash": h, "seed": config.seed})
    Ms = [r["M"] for r in records]
    errs = [r["mean_error"] for r in records]
    fit = fit_loglog(Ms, errs)
    checks.append(_slope_check("resolution-slope", fit, sc["expected_slope"], sc["slope_tol"]))
    checks.append(Check("resolution-half-width", within_all, detail="every run decoded within pi/(M tau)"))
    checks.append(Check("resolution-peak-probability", peak_all, detail="peak bin >= 1/(M^2 sin^2(pi/2M))"))
    return ScanReport(config.name, "resolution", records, {"M": fit}, checks, config.raw, h, config.seed)


def _region(center: int, halfwidth: int, M: int) -> np.ndarray:
    return np.unique((center + np.arange(-halfwidth, halfwidth + 1)) % M)


def run_sampling_experiment(config: ExperimentConfig) -> ScanReport:
    """Seeded sampling of a mixture of U_Pi eigenvectors, plus an optional
    coarse-to-fine prolongation run."""
    sc = config.scan
    h = config_hash(config)
    N, M, tau, n = sc["N"], sc["M"], sc["tau"], sc["samples"]
    op = build_problem(config.problem, N)
    plan = split_operator(op, sc["nu"])
    step = product_step(plan, tau)
    lam_all, vecs = step_eigensystem(step)
    idx, wts = sc["mixture"]["indices"], sc["mixture"]["weights"]
    psi = sum(math.sqrt(w) * vecs[:, i] for i, w in zip(idx, wts))
    psi = psi / np.linalg.norm(psi)
    res = run_phase_estimation(op, plan, psi, M, "sample", samples=n, seed=config.seed, step=step)
    counts = np.bincount(res.samples, minlength=M)
    records, checks = [], []
    for j, (i, w) in enumerate(zip(idx, wts)):
        lam = float(lam_all[i])
        analytic = index_distribution_analytic(lam, tau, M)
        region = _region(int(np.argmax(analytic)), sc["region_halfwidth"], M)
        p = float(res.distribution[region].sum())
        freq = float(counts[region].sum()) / n
        sigma = math.sqrt(p * (1 - p) / n) if 0 < p < 1 else 0.0
        linear = sum(wk * index_distribution_analytic(float(lam_all[ik]), tau, M)[region].sum()
                     for ik, wk in zip(idx, wts))
        ok = abs(freq - p) <= sc["sigma"] * sigma + 1e-12
        checks.append(Check(f"mixture-component-{i}", bool(ok), freq, p, sc["sigma"] * sigma,
                            f"{int(counts[region].sum())}/{n} samples in bins {region.min()}..{region.max()}"))
        records.append({"index": j, "part": "mixture", "component": i, "weight": w, "lambda_pi": lam,
                        "region_lo": int(region.min()), "region_hi": int(region.max()),
                        "p_exact": p, "p_linear": float(linear), "frequency": freq, "sigma": sigma,
                        "within": bool(ok), "samples": n, "config_hash": h, "seed": config.seed})
    if "prolong" in sc:
        pr = sc["prolong"]
        problem = pr["problem"] or config.problem
        coarse = eig_dense(build_problem(problem, pr["N0"]))[0]
        fine_op = build_problem(problem, pr["N"])
        guess = prolong_state(coarse, pr["N"], problem.dimension)
        fplan = split_operator(fine_op, sc["nu"])
        fstep = product_step(fplan, pr["tau"])
        ground = eig_dense(fine_op)[0]
        alpha2 = abs(overlap(ground, guess)) ** 2
        # ground state of the step: the eigenvector closest to the exact ground state
        flam, fvecs = step_eigensystem(fstep)
        g = int(np.argmax(np.abs(fvecs.conj().T @ ground.vector)))
        analytic = index_distribution_analytic(float(flam[g]), pr["tau"], pr["M"])
        peak = int(np.argmax(analytic))
        pres = run_phase_estimation(fine_op, fplan, guess, pr["M"], "sample", samples=n, seed=config.seed,
                                    step=fstep)
        freq = float(np.mean(pres.samples == peak))
        ok = freq >= pr["min_fraction"] * analytic[peak]
        checks.append(Check("prolonged-ground-peak", bool(ok), freq, float(analytic[peak]), pr["min_fraction"],
                            f"|alpha|^2 = {alpha2:.6f}"))
        records.append({"index": len(records), "part": "prolong", "component": 0, "N0": pr["N0"], "N": pr["N"],
                        "M": pr["M"], "tau": pr["tau"], "lambda_pi": float(flam[g]), "alpha2": alpha2,
                        "predicted_overlap": guess.predicted_overlap, "p_peak": float(analytic[peak]),
                        "frequency": freq, "within": bool(ok), "samples": n,
                        "config_hash": h, "seed": config.seed})
    return ScanReport(config.name, "sampling", records, {}, checks, config.raw, h, config.seed)


def run_cost_table(config: ExperimentConfig) -> ScanReport:
    sc = config.scan
    h = config_hash(config)
    records, checks = [], []
    consistent = True
    for i, (N, D, S, nu) in enumerate(itertools.product(sc["N"], sc["D"], sc["S"], sc["nu"])):
        inputs = CostInputs(N, D, S, nu, c=sc["c"], N0=sc["N0"], constants=sc["constants"],
                            coefficient_bits=sc["coefficient_bits"], threshold_ancilla=sc["threshold_ancilla"])
        rep = cost_report(inputs)
        consistent &= rep.advantage == (D > threshold_D(S, nu))
        rec = {"index": i, "N": N, "D": D, "S": S, "nu": nu, "qubits": rep.qubits_quantum, "M": rep.M,
               "aleph_Q": rep.gates_quantum, "aleph_C": rep.gates_classical, "ratio": rep.ratio,
               "log2_ratio": rep.log2_ratio, "threshold_D": rep.threshold_D, "advantage": rep.advantage,
               "rotation_accuracy": rep.rotation_accuracy, "relative_eigenvalue_accuracy":
               rep.relative_eigenvalue_accuracy, "config_hash": h, "seed": config.seed}
        rec.update({f"item_{k}": v for k, v in rep.line_items.items()})
        records.append(rec)
    checks.append(Check("advantage-threshold", bool(consistent), detail="advantage iff D > 2(S+1)(1+1/nu)"))
    return ScanReport(config.name, "cost", records, {}, checks, config.raw, h, config.seed)


_RUNNERS = {
    "truncation": run_truncation_scan,
    "splitting": run_splitting_scan,
    "resolution": run_resolution_scan,
    "sampling": run_sampling_experiment,
    "cost": run_cost_table,
}


def run_scan(config: ExperimentConfig) -> ScanReport:
    return _RUNNERS[config.kind](config)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return str(v)


LEADING_COLUMNS = ("index", "config_hash", "seed")


def report_csv(report: ScanReport) -> str:
    keys = set()
    for r in report.records:
        keys.update(r)
    cols = [c for c in LEADING_COLUMNS if c in keys] + sorted(keys - set(LEADING_COLUMNS))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in report.records:
        w.writerow([_csv_value(r.get(c)) for c in cols])
    return buf.getvalue()


def report_json(report: ScanReport) -> str:
    return json.dumps(_clean(report.to_dict()), sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit_report(report: ScanReport, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write ``<name>.csv`` and/or ``<name>.json`` into ``out_dir``."""
    if not report.records:
        raise ExperimentError("refusing to emit a report without records")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "csv":
            text = report_csv(report)
        elif fmt == "json":
            text = report_json(report)
        else:
            raise ExperimentError(f"unknown report format {fmt!r}")
        path = out / f"{report.name}.{fmt}"
        path.write_text(text)
        paths.append(path)
    return paths
