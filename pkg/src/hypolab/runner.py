"""Experiment configuration, dispatch and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, algebra, estimators, malliavin, stats
from .group import Group
from .testfunctions import TestFunction, random_test_function
from .wiener import CameronMartinVector, directional_derivative_fd, sample_path

EXPERIMENTS = ("simulate", "covariance", "kp", "cp", "poincare", "scaling", "duality", "algebra-check")
CSV_COLUMNS = ("experiment", "group", "t", "p", "quantity", "value", "ci_half", "n", "N", "seed")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SpecResolutionError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    group: str
    experiment: str
    t_grid: list = field(default_factory=lambda: [1.0])
    p: float = 2.0
    n: int = 64
    N: int = 10_000
    seed: int = 0
    family: dict = field(default_factory=dict)
    output: str = "hypolab_out"
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc, overrides=None):
        doc = dict(doc)
        for key, val in (overrides or {}).items():
            if val is not None:
                doc[key] = val
        problems = []
        known = {f for f in cls.__dataclass_fields__}
        extra = sorted(set(doc) - known)
        if extra:
            problems.append(f"unknown keys: {', '.join(extra)}")
        for key in ("group", "experiment"):
            if not isinstance(doc.get(key), str):
                problems.append(f"{key}: required string")
        if isinstance(doc.get("experiment"), str) and doc["experiment"] not in EXPERIMENTS:
            problems.append(f"experiment: must be one of {', '.join(EXPERIMENTS)}")
        tg = doc.get("t_grid", [1.0])
        if not isinstance(tg, list) or not tg or not all(
                isinstance(t, (int, float)) and not isinstance(t, bool) and t > 0 for t in tg):
            problems.append("t_grid: non-empty list of positive reals")
        for key in ("n", "N"):
            v = doc.get(key, 1)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                problems.append(f"{key}: integer >= 1")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            problems.append("seed: integer in [0, 2^64)")
        p = doc.get("p", 2.0)
        if not isinstance(p, (int, float)) or isinstance(p, bool) or not math.isfinite(p):
            problems.append("p: real")
        elif doc.get("experiment") in ("kp", "cp") and p <= 1:
            problems.append("p: must exceed 1 for kp and cp")
        fam = doc.get("family", {})
        if not isinstance(fam, dict):
            problems.append("family: object")
        else:
            bad = set(fam) - {"degree", "rate_range", "coef_bound", "include_constant"}
            if bad:
                problems.append(f"family: unknown keys {', '.join(sorted(bad))}")
            rr = fam.get("rate_range", (0.0, 2.0))
            if not (isinstance(rr, (list, tuple)) and len(rr) == 2 and 0 <= rr[0] <= rr[1]):
                problems.append("family.rate_range: [lo, hi] with 0 <= lo <= hi")
            if not (isinstance(fam.get("degree", 3), int) and fam.get("degree", 3) >= 1):
                problems.append("family.degree: integer >= 1")
        if not isinstance(doc.get("options", {}), dict):
            problems.append("options: object")
        if problems:
            raise ConfigError(problems)
        doc["t_grid"] = [float(t) for t in tg]
        doc["p"] = float(p)
        return cls(**doc)

    def family_config(self):
        fam = dict(self.family)
        if "rate_range" in fam:
            fam["rate_range"] = tuple(fam["rate_range"])
        return estimators.FamilyConfig(**fam)


@dataclass
class Row:
    experiment: str
    group: str
    t: float | None
    p: float | None
    quantity: str
    value: float
    ci_half: float
    n: int | None
    N: int | None
    seed: int | None
    extra: dict = field(default_factory=dict)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentReport:
    config: dict
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    version: str = __version__

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def add(self, quantity, value, ci_half=0.0, t=None, p=None, n=None, N=None, seed=None, **extra):
        cfg = self.config
        self.rows.append(Row(cfg["experiment"], cfg["group"], t, p, quantity, float(value),
                             float(ci_half), n, N, cfg["seed"] if seed is None else seed, extra))

    def check(self, name, passed, detail=""):
        self.checks.append(Check(name, bool(passed), detail))

    def to_dict(self):
        return {
            "config": self.config,
            "rows": [asdict(r) for r in self.rows],
            "checks": [asdict(c) for c in self.checks],
            "diagnostics": self.diagnostics,
            "wall_time": self.wall_time,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["config"], [Row(**r) for r in doc["rows"]], [Check(**c) for c in doc["checks"]],
                   doc.get("diagnostics", {}), doc.get("wall_time", 0.0), doc.get("version", ""))


# --------------------------------------------------------------------------
# spec resolution


def resolve_spec(name):
    path = Path(name)
    try:
        if name.endswith(".json") and path.exists():
            return algebra.spec_from_json(json.loads(path.read_text()))
        return algebra.named_spec(name)
    except (algebra.AlgebraError, OSError, json.JSONDecodeError) as exc:
        raise SpecResolutionError(str(exc)) from None


def _default_function(spec):
    """Degree-one terms plus the top coordinate, under a light envelope."""
    d = spec.dim
    terms = {tuple(int(a == g) for a in range(d)): 1.0 for g in spec.generators}
    terms[tuple(int(a == d - 1) for a in range(d))] = 0.5
    return TestFunction.from_terms(d, terms, np.full(d, 0.2))


def _function_option(cfg, spec):
    doc = cfg.options.get("function")
    return TestFunction.from_json(doc) if doc else _default_function(spec)


# --------------------------------------------------------------------------
# experiments


def _simulate(cfg, spec, rep):
    group = Group(spec)
    for t in cfg.t_grid:
        path = sample_path(group, cfg.n, t / cfg.n, cfg.seed, 0, cfg.N)
        x = path.endpoint
        for j in range(spec.dim):
            m = stats.mean_ci(x[:, j])
            rep.add(f"mean_x{j + 1}", m.value, m.half_width, t=t, n=cfg.n, N=cfg.N)
            m2 = stats.mean_ci(x[:, j] ** 2)
            rep.add(f"second_moment_x{j + 1}", m2.value, m2.half_width, t=t, n=cfg.n, N=cfg.N)
        rep.check(f"identity_start_t{t:g}", np.all(path.coords[:, 0] == 0.0))
        if spec.step == 1:
            resid = np.abs(x - path.increments.sum(axis=1) @ group.generators()).max()
            rep.check(f"abelian_exact_t{t:g}", resid <= 1e-12, f"max residual {resid:.2e}")
        dump = cfg.options.get("dump_paths", 0)
        if dump:
            rep.diagnostics.setdefault("path_dumps", {})[f"{t:g}"] = path.subset(slice(0, int(dump))).to_csv()


def _covariance(cfg, spec, rep):
    group = Group(spec)
    q_list = cfg.options.get("q_list", [1])
    for t in cfg.t_grid:
        path = sample_path(group, cfg.n, t / cfg.n, cfg.seed, 0, cfg.N)
        cov = malliavin.covariance(path)
        sig = cov.sigma_bar
        sym = float(np.abs(sig - np.swapaxes(sig, 1, 2)).max())
        ev = cov.eigenvalues
        psd = bool(np.all(ev[:, 0] >= -1e-12 * np.maximum(ev[:, -1], 1.0)))
        rep.check(f"symmetric_t{t:g}", sym == 0.0, f"max asymmetry {sym:.2e}")
        rep.check(f"psd_t{t:g}", psd, f"min eigenvalue {ev[:, 0].min():.3e}")
        if spec.name == "heisenberg3":
            resid = float(np.abs(sig - malliavin.heisenberg_covariance_closed_form(path)).max())
            rep.add("closed_form_residual", resid, 0.0, t=t, n=cfg.n, N=cfg.N)
            rep.check(f"closed_form_t{t:g}", resid <= 1e-12, f"max residual {resid:.2e}")
        det = cov.det
        m = stats.mean_ci(det)
        rep.add("det_mean", m.value, m.half_width, t=t, n=cfg.n, N=cfg.N)
        rep.add("det_min", float(det.min()), 0.0, t=t, n=cfg.n, N=cfg.N)
        rep.add("fraction_nonpositive_det", float(np.mean(det <= 0)), 0.0, t=t, n=cfg.n, N=cfg.N)
        rep.add("log10_condition_max", float(np.log10(cov.condition.max())), 0.0, t=t, n=cfg.n, N=cfg.N)
        if np.all(det > 0):
            for q in q_list:
                mq = stats.mean_ci(det ** (-float(q)))
                rep.add(f"inverse_det_moment_q{q:g}", mq.value, mq.half_width, t=t, n=cfg.n, N=cfg.N)


def _kp(cfg, spec, rep):
    opts = cfg.options
    for j, t in enumerate(cfg.t_grid):
        seed = cfg.seed + 2 * j
        r = estimators.estimate_kp(
            spec, t, cfg.p, cfg.family_config(), n=cfg.n, N_search=opts.get("N_search", estimators.SEARCH_N),
            N_eval=cfg.N, restarts=opts.get("restarts", 8), iters=opts.get("iters", 200), seed=seed,
            restart_seed=opts.get("restart_seed", 0))
        rep.add("K_hat", r.value, r.half_width, t=t, p=cfg.p, n=cfg.n, N=cfg.N, seed=r.eval_seed,
                search_seed=r.search_seed, search_value=r.search_value, f=r.f.to_json())
        rep.diagnostics.setdefault("kp", []).append(
            {"t": t, "restart_search": r.restart_search, "restart_eval": r.restart_eval,
             "selection_gap": r.selection_gap})


def _cp(cfg, spec, rep):
    opts = cfg.options
    for j, t in enumerate(cfg.t_grid):
        c = estimators.estimate_cp(spec, t, cfg.p, n=cfg.n, N=cfg.N, seed=cfg.seed + 2 * j,
                                   max_depth=opts.get("max_depth", 1))
        rep.add("C_hat", c.value, c.half_width, t=t, p=cfg.p, n=cfg.n, N=cfg.N, seed=c.seed,
                constant=c.constant, max_terms=c.max_terms)
        for term in c.terms:
            rep.add(f"C_term_i{term.generator + 1}_w{''.join(str(a + 1) for a in term.word)}", term.value,
                    0.0, t=t, p=cfg.p, n=cfg.n, N=cfg.N, seed=c.seed)
        if opts.get("with_kp", True):
            k = estimators.estimate_kp(spec, t, cfg.p, cfg.family_config(), n=cfg.n,
                                       N_eval=opts.get("N_kp", estimators.EVAL_N), seed=cfg.seed + 2 * j + 100)
            rep.add("K_hat", k.value, k.half_width, t=t, p=cfg.p, n=cfg.n, N=opts.get("N_kp", estimators.EVAL_N),
                    seed=k.eval_seed)


def enlarged_family(family):
    """One enlargement step: degree + 1 and a doubled coefficient box."""
    return estimators.FamilyConfig(family.degree + 1, family.rate_range, 2 * family.coef_bound,
                                   family.include_constant)


def _poincare_failures(funcs, ensembles, k2, k2_hw):
    out = []
    for t, ens in ensembles:
        for i, f in enumerate(funcs):
            r = estimators.poincare_gap(f, ens, k2, k2_hw)
            out.append((t, i, r, r.slack >= -3 * r.slack_half_width))
    return out


def _poincare(cfg, spec, rep):
    opts = cfg.options
    n_fun = opts.get("n_functions", 20)
    k2, k2_hw = opts.get("k2"), 0.0
    family = cfg.family_config()

    def fit(fam):
        k = estimators.estimate_kp(spec, 1.0, 2.0, fam, n=cfg.n, seed=cfg.seed + 1000)
        rep.add("K_hat", k.value, k.half_width, t=1.0, p=2.0, n=cfg.n, N=estimators.EVAL_N,
                seed=k.eval_seed, degree=fam.degree)
        return k.value, k.half_width

    if k2 is None:
        k2, k2_hw = fit(family)
    gen = np.random.default_rng(cfg.seed)
    funcs = [random_test_function(gen, spec.dim, weights=spec.grading) for _ in range(n_fun)]
    ensembles = [(t, estimators.build_ensemble(spec, t, cfg.n, cfg.N, cfg.seed + 2 * j, 0))
                 for j, t in enumerate(cfg.t_grid)]
    results = _poincare_failures(funcs, ensembles, k2, k2_hw)
    n_fail = sum(not ok for *_, ok in results)
    if n_fail and opts.get("k2") is None:
        rep.diagnostics["poincare_initial_failures"] = [(t, i) for t, i, _, ok in results if not ok]
        k2, k2_hw = fit(enlarged_family(family))
        results = _poincare_failures(funcs, ensembles, k2, k2_hw)
    for t, i, r, _ in results:
        rep.add(f"slack_f{i}", r.slack, r.slack_half_width, t=t, p=2.0, n=cfg.n, N=cfg.N)
    for t, _ in ensembles:
        fails = sum(not ok for tt, _, _, ok in results if tt == t)
        rep.add("slack_failures", fails, 0.0, t=t, p=2.0, n=cfg.n, N=cfg.N)


def _scaling(cfg, spec, rep):
    f = _function_option(cfg, spec)
    for j, t in enumerate(cfg.t_grid):
        r = estimators.scaling_check(spec, f, t, cfg.p, n=cfg.n, N=cfg.N, seed=cfg.seed + 10 * j)
        rep.add("ratio_scaled", r.scaled.ratio, r.scaled.half_width, t=t, p=cfg.p, n=cfg.n, N=cfg.N)
        rep.add("ratio_unit", r.unit.ratio, r.unit.half_width, t=1.0, p=cfg.p, n=cfg.n, N=cfg.N)
        for rr, a, b in r.heat:
            rep.add(f"heat_dilated_r{rr:g}", a.value, a.half_width, t=t, n=cfg.n, N=cfg.N)
            rep.add(f"heat_rescaled_r{rr:g}", b.value, b.half_width, t=rr * rr * t, n=cfg.n, N=cfg.N)


def _duality(cfg, spec, rep):
    group = Group(spec)
    f = _function_option(cfg, spec)
    x = np.zeros(spec.dim)
    x[spec.generators[0]] = 1.0
    chunk = cfg.options.get("chunk", 10_000)
    for t in cfg.t_grid:
        lhs_x, rhs_x, lhs_h, rhs_h, coll = [], [], [], [], 0.0
        F = malliavin.endpoint_functional(f)
        for s0 in range(0, cfg.N, chunk):
            path = sample_path(group, cfg.n, t / cfg.n, cfg.seed, s0, min(chunk, cfg.N - s0))
            h = CameronMartinVector(np.ones((cfg.n, spec.k)), path.dt)
            coll = max(coll, float(malliavin.collapse_residual(x, path).max()))
            lhs_x.append(group.left_deriv(f, path.endpoint, x))
            rhs_x.append(f(path.endpoint) * malliavin.lifted_divergence(x, path))
            lhs_h.append(directional_derivative_fd(F, path, h))
            rhs_h.append(F(path) * h.wiener_integral(path.increments))
        rep.check(f"collapse_t{t:g}", coll <= 1e-9, f"max residual {coll:.2e}")
        for name, a, b in (("lifted", lhs_x, rhs_x), ("dh", lhs_h, rhs_h)):
            d = stats.mean_ci(np.concatenate(a) - np.concatenate(b))
            rep.add(f"duality_gap_{name}", d.value, d.half_width, t=t, n=cfg.n, N=cfg.N)


def _algebra_check(cfg, spec, rep):
    report = algebra.validate(spec)
    rep.check("validate", report.ok, "; ".join(f"{k}{idx}" for k, idx in report.violations[:10]))
    rep.add("dim", spec.dim)
    step = spec.step
    rep.add("nilpotency_step", -1 if step is None else step)
    lv = spec.levels
    rep.add("hoermander_generating", float(lv.generating))
    if lv.generating:
        rep.add("hoermander_depth", lv.depth)
    if step is not None:
        group = Group(spec)
        gen = np.random.default_rng(cfg.seed)
        err = max(group.check_jacobians(w, tol=np.inf) for w in gen.normal(size=(20, spec.dim)))
        rep.add("jacobian_method_gap", err)
        rep.check("jacobians_agree", err <= 1e-10, f"{err:.2e}")
        if spec.grading is not None and lv.generating and spec.k >= 2:
            try:
                free, hall = algebra.free_nilpotent(spec.k, step)
                algebra.lift_homomorphism(free, spec, hall)
                rep.check("lift_homomorphism", True, f"free:{spec.k}:{step}")
            except algebra.AlgebraError as exc:
                rep.check("lift_homomorphism", False, str(exc))
        if lv.generating:
            try:
                rep.add("ricci_lower_bound_frame", algebra.ricci_lower_bound(spec, spec.frame.B))
            except algebra.AlgebraError:
                pass


DISPATCH = {
    "simulate": _simulate,
    "covariance": _covariance,
    "kp": _kp,
    "cp": _cp,
    "poincare": _poincare,
    "scaling": _scaling,
    "duality": _duality,
    "algebra-check": _algebra_check,
}


def run(config):
    """Execute an experiment; hard identity failures are recorded as failed checks."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    spec = resolve_spec(cfg.group)
    rep = ExperimentReport(asdict(cfg))
    start = time.perf_counter()
    DISPATCH[cfg.experiment](cfg, spec, rep)
    rep.wall_time = time.perf_counter() - start
    return rep


# --------------------------------------------------------------------------
# emission


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def report_json(report):
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def emit(report, fmt="csv", prefix=None, figure=True):
    """Write PREFIX.csv or PREFIX.json (and PREFIX.png when there are rows); return paths."""
    prefix = Path(prefix or report.config.get("output") or "hypolab_out")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        out = prefix.with_name(prefix.name + ".csv")
        out.write_text(report_csv(report))
    elif fmt == "json":
        out = prefix.with_name(prefix.name + ".json")
        out.write_text(report_json(report))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    paths = [out]
    if figure and report.rows:
        from .plotting import render_report

        png = prefix.with_name(prefix.name + ".png")
        render_report(report, png)
        paths.append(png)
    return paths
