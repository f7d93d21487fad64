"""Command-line harness: generators, single operations, scenarios and report merging.

Exit codes: 0 when every verdict is pass or pass-with-taint, 2 on any fail,
3 when every verdict is inconclusive, 1 on malformed input.
"""

from __future__ import annotations

import os

# thread caps must be in place before numpy loads its BLAS
_THREADS = os.environ.get("KATOLAB_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse
import ast
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import constructions, convergence, entropy, generators, geometry, heat, inequalities, kato
from .reports import FAIL, INCONCLUSIVE, PASS, PASS_TAINT, VerificationReport, combine_verdicts

log = logging.getLogger("katolab")

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2, 3


class ConfigError(ValueError):
    """Malformed command line, parameter or scenario file."""


# --------------------------------------------------------------------------
# parameters and spaces


def parse_value(text: str):
    """``int``, ``float``, ``bool`` or comma list when the text reads as one; else the string."""
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        val = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return val
    if isinstance(val, tuple) and all(isinstance(v, (int, float)) for v in val):
        return [float(v) for v in val]
    return text


def parse_assignments(items, where: str = "command line") -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"{where}: expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v)
    return out


class Params:
    """Typed access to operation parameters; unused keys are an error."""

    def __init__(self, values: dict, where: str):
        self.values = dict(values)
        self.where = where
        self.used = set()

    def get(self, key, default=None, kind=None):
        self.used.add(key)
        if key not in self.values:
            return default
        v = self.values[key]
        try:
            if kind is float:
                return float(v)
            if kind is int:
                if isinstance(v, float) and not v.is_integer():
                    raise ValueError
                return int(v)
            if kind is list:
                return [float(x) for x in (v if isinstance(v, list) else [v])]
            if kind is str:
                return str(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{self.where}: parameter {key}={v!r} is not a valid {kind.__name__}") from None
        return v

    def finish(self):
        extra = sorted(set(self.values) - self.used)
        if extra:
            raise ConfigError(f"{self.where}: unknown parameter(s) {', '.join(extra)}")


def parse_space_spec(spec: str):
    """``name:k=v,k=v`` for a generator, or a path to ``.off``, ``.obj``, ``.graph`` or ``.json``."""
    p = Path(spec)
    if p.suffix in (".off", ".obj", ".graph", ".json") and p.exists():
        return None, {"path": str(p)}
    name, _, rest = spec.partition(":")
    params = parse_assignments([s for s in rest.split(",") if s], where=f"space {spec!r}") if rest else {}
    if name not in generators.available():
        raise ConfigError(f"unknown generator {name!r}; available: {', '.join(generators.available())}")
    return name, params


def load_space(spec: str) -> geometry.DiscreteSpace:
    name, params = parse_space_spec(spec)
    if name is None:
        path = Path(params["path"])
        if path.suffix == ".graph":
            return geometry.read_graph(path)
        if path.suffix == ".json":
            return geometry.space_from_json(path.read_text())
        return geometry.build_mesh_space(geometry.read_mesh(path))
    try:
        return generators.generate_space(name, **params)
    except TypeError as exc:
        raise ConfigError(f"space {spec!r}: {exc}") from None


def parse_potential(text: str, space: geometry.DiscreteSpace) -> np.ndarray:
    """``zero``, ``const:c``, ``curvature`` (negative part of the angle defect) or ``file:path``."""
    text = str(text)
    N = space.vertex_count
    if text == "zero":
        return np.zeros(N)
    if text.startswith("const:"):
        return np.full(N, float(text[6:]))
    if text == "curvature":
        if space.mesh is None:
            raise ConfigError("the curvature potential needs a mesh space")
        return np.asarray(geometry.angle_defect_ric_minus(space.mesh), dtype=float)
    if text.startswith("file:"):
        vals = np.loadtxt(text[5:], dtype=float).ravel()
        if len(vals) != N:
            raise ConfigError(f"potential file has {len(vals)} values for {N} vertices")
        return vals
    raise ConfigError(f"unknown potential {text!r}")


# --------------------------------------------------------------------------
# context shared by the operations


@dataclass
class Context:
    spec: str
    seed: int = 0
    _space: object = None
    _handles: dict = field(default_factory=dict)

    @property
    def space(self) -> geometry.DiscreteSpace:
        if self._space is None:
            self._space = load_space(self.spec)
        return self._space

    @property
    def rng(self):
        return np.random.default_rng(self.seed)

    def handle(self, modes: int | None = None, t_floor: float | None = None):
        """Heat handle; on the flat torus ``t_floor`` keeps closed-form modes with ``lambda t_floor <= 32``."""
        key = (modes, t_floor)
        if key not in self._handles:
            sp = self.space
            name, params = parse_space_spec(self.spec)
            if name == "flat_torus" and "metric" not in params:
                a, b = params.get("a", 1.0), params.get("b", 1.0)
                N = params.get("N", 32)
                if t_floor is not None and modes is None:
                    # neglected modes weigh at most e^-32 at every time used
                    spec = generators.flat_torus_spectrum(sp, a, b, N, params.get("M"), lam_max=32.0 / t_floor)
                    backend = "modal"
                else:
                    spec = generators.flat_torus_spectrum(sp, a, b, N, params.get("M"), m=modes or min(sp.vertex_count, 600))
                    backend = "modal" if spec.complete else "krylov"
                h = heat.heat_handle(sp, spectral=spec, backend=backend)
            elif sp.vertex_count <= heat.DENSE_LIMIT:
                h = heat.heat_handle(sp, seed=self.seed)
            else:
                h = heat.heat_handle(sp, m=modes or 60, seed=self.seed)
            self._handles[key] = h
        return self._handles[key]


@dataclass
class Outcome:
    report: VerificationReport
    artifacts: dict = field(default_factory=dict)


def _bounded(name, value, p: Params, extra=None, taints=()):
    """Report on a scalar with optional ``expect_min`` / ``expect_max``."""
    lo, hi = p.get("expect_min", None, float), p.get("expect_max", None, float)
    margins, locs = [], []
    if lo is not None:
        margins.append(value - lo)
        locs.append("expect_min")
    if hi is not None:
        margins.append(hi - value)
        locs.append("expect_max")
    if not margins:
        margins, locs = [0.0], ["value"]
    return VerificationReport(name, margins, 0.0, locations=locs, taints=set(taints),
                              extra={"value": value, **(extra or {})})


def _default_T(space):
    return 0.01 * space.diameter**2


# --------------------------------------------------------------------------
# operations (one per module operation)


def op_spectrum(ctx, p):
    m = p.get("m", 20, int)
    tol = p.get("residual_tol", 1e-8, float)
    spec = heat.spectrum(ctx.space, m=m, seed=ctx.seed)
    rep = VerificationReport("spectrum", tol - spec.residuals, 0.0,
                             extra={"eigenvalues": spec.eigenvalues})
    modes = np.ascontiguousarray(spec.modes, dtype="<f8").tobytes()
    return Outcome(rep, {"spectrum.json": spec.to_json(), "modes.bin": modes})


def op_heat(ctx, p):
    h = ctx.handle(p.get("modes", None, int))
    t = p.get("t", _default_T(ctx.space), float)
    s = p.get("s", t, float)
    x = p.get("x", 0, int)
    y = p.get("y", x, int)
    mass = heat.stochastic_mass(h, t, x)
    ck = heat.chapman_residual(h, t, s, x, y) / max(abs(heat.heat_kernel(h, t + s, x, y)), 1e-300)
    rep = VerificationReport("semigroup", [1e-8 - abs(mass - 1.0), 1e-10 - ck], 0.0,
                             locations=["mass", "chapman"], taints=set(h.taints),
                             extra={"H": heat.heat_kernel(h, t, x, y), "mass": mass, "chapman_rel": ck})
    return Outcome(rep)


def op_kato(ctx, p):
    h = ctx.handle(p.get("modes", None, int))
    V = parse_potential(p.get("potential", "curvature" if ctx.space.mesh is not None else "zero", str), ctx.space)
    T = p.get("T", _default_T(ctx.space), float)
    cls = kato.classify_bounds(h, V, T)
    rep = VerificationReport("dynkin", [cls.dynkin_margin], 0.0, taints=set(h.taints),
                             extra={"k_T": cls.k_T, "threshold": cls.dynkin_threshold})
    return Outcome(rep, {"kato_profile.csv": cls.profile.to_csv(ctx.space.n), "bounds.json": cls.to_json()})


def op_entropy_identities(ctx, p):
    h = ctx.handle(p.get("modes", None, int))
    x = p.get("x", 0, int)
    t = p.get("t", _default_T(ctx.space), float)
    a = entropy.theta(h, t, t, x)
    b = entropy.theta(h, t / 4, t / 2, x)
    c = entropy.heat_trace_quantity(h, x, t)
    rep = VerificationReport("entropy_identities", [1e-8 - abs(a - 1.0), 1e-10 - abs(b - c) / abs(c)], 0.0,
                             locations=["theta(t,t)", "theta(t/4,t/2)"], taints=set(h.taints),
                             extra={"theta_tt": a, "theta_quarter_half": b, "heat_trace": c})
    return Outcome(rep)


def op_entropy_density(ctx, p):
    x = p.get("x", ctx.space.origin if ctx.space.origin is not None else 0, int)
    est = entropy.volume_density(ctx.space, x)
    rep = _bounded("volume_density", est.density, p, {"uncertainty": est.uncertainty})
    return Outcome(rep, {"density.csv": est.to_csv(), "density.json": est.to_json()})


def op_entropy_monotonicity(ctx, p):
    x = p.get("x", 0, int)
    s = p.get("s", 0.25, float)
    t = p.get("t", 0.5, float)
    # the default lambda grid reaches down to 0.01 min(s, t)
    h = ctx.handle(p.get("modes", None, int), t_floor=0.01 * min(s, t))
    V = parse_potential(p.get("potential", "zero", str), ctx.space)
    T = p.get("T", max(s, t), float)
    prof = kato.kato_profile(h, V, kato.default_time_grid(T))
    scan = entropy.monotonicity_scan(h, prof, x, s, t, T=T)
    return Outcome(scan.report, {"monotonicity.csv": scan.to_csv()})


def op_entropy_varadhan(ctx, p):
    h = ctx.handle(p.get("modes", None, int))
    sp = ctx.space
    x = p.get("x", 0, int)
    # the window must hold distances beyond the 3h near-field floor
    dmax = p.get("d_max", max(sp.diameter / 8, 6 * sp.mean_edge_length), float)
    t = p.get("t", sp.mean_edge_length * dmax, float)
    dmin = p.get("d_min", 3 * sp.mean_edge_length, float)
    rep = entropy.varadhan_check(h, x, t, dmax, dmin, tolerance=p.get("tolerance", 0.05, float))
    return Outcome(rep)


def _field(ctx, kind, h=None):
    sp = ctx.space
    kind = str(kind)
    if kind == "random":
        return ctx.rng.normal(size=sp.vertex_count)
    if kind.startswith("eigen:"):
        h = h or ctx.handle()
        return h.spectral.modes[:, int(kind[6:])].copy()
    if kind == "coordinate":
        return constructions.seed_coordinates(sp, 0, 1)[0]
    raise ConfigError(f"unknown test function {kind!r}")


def op_verify_li_yau(ctx, p):
    sp = ctx.space
    h = ctx.handle(p.get("modes", None, int))
    t0 = p.get("t0", (0.15 * sp.diameter) ** 2, float)
    x0 = p.get("source", 0, int)
    tmin = p.get("t_min", max(sp.t_min, t0 / 100), float)
    tmax = p.get("t_max", 10 * t0, float)
    u0 = h.kernel_row(t0, x0)
    rep = inequalities.li_yau_residual(h, None, u0, np.geomspace(tmin, tmax, 20),
                                       tolerance=p.get("tolerance", 1e-3, float))
    return Outcome(rep, {"margins.csv": rep.to_csv()})


def op_verify_gradient(ctx, p):
    h = ctx.handle(p.get("modes", None, int))
    u = _field(ctx, p.get("u", "random", str), h)
    t = p.get("t", _default_T(ctx.space), float)
    rep = inequalities.gradient_estimate_check(h, None, u, t, tolerance=p.get("tolerance", 1e-6, float))
    return Outcome(rep, {"margins.csv": rep.to_csv()})


def op_verify_bakry_ledoux(ctx, p):
    h = ctx.handle(p.get("modes", None, int))
    v = _field(ctx, p.get("v", "random", str), h)
    phi = np.abs(np.random.default_rng(ctx.seed + 1).normal(size=ctx.space.vertex_count))
    t = p.get("t", _default_T(ctx.space), float)
    rep = inequalities.bakry_ledoux_residual(h, None, v, phi, t, tolerance=p.get("tolerance", 1e-6, float),
                                             form=p.get("form", "limit", str))
    return Outcome(rep)


def op_verify_gaussian(ctx, p):
    sp = ctx.space
    h = ctx.handle(p.get("modes", None, int))
    count = p.get("pairs", 20, int)
    rng = ctx.rng
    pairs = [(int(a), int(b)) for a, b in rng.integers(0, sp.vertex_count, (count, 2))]
    T = p.get("T", _default_T(sp) * 10, float)
    grid = np.geomspace(max(4 * sp.t_min, T / 100), T, 5)
    rep = inequalities.gaussian_bound_fit(h, pairs, grid, beta_budget=p.get("beta_budget", 100.0, float))
    return Outcome(rep)


def op_verify_hessian(ctx, p):
    sp = ctx.space
    h = ctx.handle(p.get("modes", None, int))
    u = _field(ctx, p.get("u", "eigen:1", str), h)
    x = p.get("x", 0, int)
    r = p.get("r", max(0.2 * sp.diameter, 6 * sp.mean_edge_length), float)
    rep = inequalities.hessian_estimate_check(sp, u, x, r, p.get("T", 1.0, float))
    return Outcome(rep)


def _harmonic_on_ball(ctx, x, r):
    sp = ctx.space
    seed = constructions.seed_coordinates(sp, x, 1)[0]
    inner, collar = constructions.ball_with_collar(sp, x, r)
    return constructions.harmonic_replacement(sp, collar, seed[collar], interior=inner)


def op_verify_harmonic(ctx, p):
    sp = ctx.space
    x = p.get("x", 0, int)
    r = p.get("r", 0.2 * sp.diameter, float)
    hf = _harmonic_on_ball(ctx, x, r)
    return Outcome(inequalities.harmonic_gradient_bound_check(sp, hf, x, r, p.get("T", 1.0, float)))


def op_verify_lipschitz(ctx, p):
    sp = ctx.space
    x = p.get("x", 0, int)
    r = p.get("r", 0.2 * sp.diameter, float)
    hf = _harmonic_on_ball(ctx, x, r)
    rep = inequalities.lipschitz_improvement_check(ctx.handle(), None, hf, x, r, p.get("delta", 1.0 / (16 * sp.n), float))
    return Outcome(rep)


def op_cutoff(ctx, p):
    sp = ctx.space
    h = ctx.handle(p.get("modes", None, int))
    x = p.get("x", 0, int)
    r = p.get("r", 0.2 * sp.diameter, float)
    s = p.get("s", 0.2 * sp.diameter, float)
    T = p.get("T", 1.0, float)
    rep = constructions.heat_cutoff(h, x, r, s, T)
    return Outcome(rep.sandwich_report(), {"cutoff.csv": rep.to_csv(),
                                           "cutoff.json": json.dumps(rep.summary(), sort_keys=True)})


def op_gauge(ctx, p):
    h = ctx.handle(p.get("modes", None, int))
    V = parse_potential(p.get("potential", "zero", str), ctx.space)
    res = constructions.gauging_function(h, V, p.get("t_star", _default_T(ctx.space), float))
    return Outcome(res.bounds_report(), {"gauge.json": res.to_json()})


def op_split(ctx, p):
    sp = ctx.space
    x = p.get("x", 0, int)
    r = p.get("r", max(0.1 * sp.diameter, 6 * sp.mean_edge_length), float)
    k = p.get("k", sp.n, int)
    limit = p.get("max_eps", 0.05, float)
    smap = constructions.build_splitting_map(sp, None, x, r, constructions.seed_coordinates(sp, x, k), seed=ctx.seed)
    m = smap.metrics
    rep = VerificationReport("splitting", [limit - m["eps_gram"], limit - m["eps_hess"]], 0.0,
                             locations=["eps_gram", "eps_hess"], extra=m)
    return Outcome(rep, {"splitting.json": smap.to_json()})


def _matrix(spec: str):
    path = Path(spec)
    if path.suffix == ".npy" and path.exists():
        return np.load(path)
    if path.suffix == ".csv" and path.exists():
        return np.loadtxt(path, delimiter=",", ndmin=2)
    return load_space(spec).distance


def op_gh(ctx, p):
    a = _matrix(p.get("a", ctx.spec, str))
    other = p.get("b", None, str)
    if other is None:
        raise ConfigError("gh needs a second space: parameter b")
    b = _matrix(other)
    method = p.get("method", "auto", str)
    est = convergence.gh_upper_bound(a, b) if method == "greedy" else convergence.gh_distance_small(a, b)
    rep = _bounded("gh", est.upper, p, {"lower": est.lower, "method": est.method})
    out = {"lower": est.lower, "upper": est.upper, "method": est.method,
           "correspondence": [list(map(int, q)) for q in est.correspondence]}
    return Outcome(rep, {"gh.json": json.dumps(out, sort_keys=True)})


def op_probe(ctx, p):
    sp = ctx.space
    x = p.get("x", sp.origin if sp.origin is not None else 0, int)
    h5 = 5 * sp.mean_edge_length
    eps = p.get("eps", sorted({sp.diameter / 4, max(sp.diameter / 8, min(h5, sp.diameter / 4))}), list)
    pr = convergence.tangent_probe(sp, None, x, eps, gh_samples=p.get("gh_samples", 0, int))
    val = float(pr.cone_defect[-1]) if len(pr.cone_defect) else math.nan
    rep = _bounded("tangent_probe", val, p) if len(pr.cone_defect) else VerificationReport(
        "tangent_probe", [], 0.0, reason="every scale was excluded")
    return Outcome(rep, {"probe.csv": pr.to_csv()})


OPERATIONS = {
    "spectrum": op_spectrum,
    "heat": op_heat,
    "kato": op_kato,
    "entropy.identities": op_entropy_identities,
    "entropy.density": op_entropy_density,
    "entropy.monotonicity": op_entropy_monotonicity,
    "entropy.varadhan": op_entropy_varadhan,
    "verify.li_yau": op_verify_li_yau,
    "verify.gradient": op_verify_gradient,
    "verify.bakry_ledoux": op_verify_bakry_ledoux,
    "verify.gaussian": op_verify_gaussian,
    "verify.hessian": op_verify_hessian,
    "verify.harmonic": op_verify_harmonic,
    "verify.lipschitz": op_verify_lipschitz,
    "cutoff": op_cutoff,
    "gauge": op_gauge,
    "split": op_split,
    "gh": op_gh,
    "probe": op_probe,
}


def run_operation(key: str, ctx: Context, params: dict, where: str, tolerances: dict | None = None) -> Outcome:
    if key not in OPERATIONS:
        raise ConfigError(f"{where}: unknown operation {key!r}")
    p = Params(params, where)
    out = OPERATIONS[key](ctx, p)
    p.finish()
    tol = (tolerances or {}).get(out.report.name)
    if tol is not None:
        out.report.tolerance = float(tol)
    return out


def exit_code(verdicts) -> int:
    verdicts = list(verdicts)
    if FAIL in verdicts:
        return EXIT_FAIL
    if verdicts and all(v == INCONCLUSIVE for v in verdicts):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _write(outdir: Path, prefix: str, outcome: Outcome):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{prefix}.json").write_text(outcome.report.to_json() + "\n")
    (outdir / f"{prefix}.margins.csv").write_text(outcome.report.to_csv())
    for name, data in sorted(outcome.artifacts.items()):
        target = outdir / f"{prefix}.{name}"
        if isinstance(data, bytes):
            target.write_bytes(data)
        else:
            target.write_text(data)


# --------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    space: str | None
    seed: int
    output: Path
    tolerances: dict
    steps: list  # (index, operation key, params, line)


def parse_scenario(text: str, origin: str = "<scenario>") -> Scenario:
    """Flat key-value tree; ``#`` starts a comment.

    ::

        space = flat_torus:N=32
        seed = 0
        output = results
        tolerance.li_yau = 1e-3
        op.1 = verify li_yau
        op.1.t0 = 0.01
    """
    top, ops, tol = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{origin}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        parts = key.split(".")
        if not key or any(not s for s in parts):
            raise ConfigError(f"{where}: malformed key {key!r}")
        if parts[0] == "op":
            if len(parts) < 2 or not parts[1].isdigit():
                raise ConfigError(f"{where}: operation keys look like op.<number>[.<param>]")
            entry = ops.setdefault(int(parts[1]), {"params": {}, "line": where})
            if len(parts) == 2:
                words = value.split()
                if not words:
                    raise ConfigError(f"{where}: empty operation")
                entry["key"] = ".".join(words[:2]) if words[0] in ("verify", "entropy") and len(words) > 1 else words[0]
                entry["line"] = where
            else:
                entry["params"][".".join(parts[2:])] = parse_value(value)
        elif parts[0] == "tolerance" and len(parts) == 2:
            tol[parts[1]] = parse_value(value)
        elif len(parts) == 1 and key in ("space", "seed", "output"):
            top[key] = value
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    steps = []
    for i in sorted(ops):
        e = ops[i]
        if "key" not in e:
            raise ConfigError(f"{e['line']}: parameters given for op.{i} but no operation")
        if e["key"] not in OPERATIONS:
            raise ConfigError(f"{e['line']}: unknown operation {e['key']!r}")
        steps.append((i, e["key"], e["params"], e["line"]))
    try:
        seed = int(top.get("seed", 0))
    except ValueError:
        raise ConfigError(f"{origin}: seed must be an integer") from None
    if steps and "space" not in top:
        raise ConfigError(f"{origin}: a scenario with operations needs 'space'")
    return Scenario(top.get("space"), seed, Path(top.get("output", "katolab-out")), tol, steps)


def run_scenario(sc: Scenario, overrides: dict | None = None) -> tuple[int, list]:
    tolerances = {**sc.tolerances, **(overrides or {})}
    if not sc.steps:
        return EXIT_OK, []
    ctx = Context(sc.space, seed=sc.seed)
    results = []
    for i, key, params, where in sc.steps:
        out = run_operation(key, ctx, params, where, tolerances)
        _write(sc.output, f"{i:02d}_{key}", out)
        results.append(out.report)
        log.info("%s", out.report)
    return exit_code(r.verdict for r in results), results


# --------------------------------------------------------------------------
# report merging


REPORT_KEYS = {"name", "samples", "min_margin", "mean_margin", "violations", "tolerance", "taints", "verdict"}


def merge_reports(paths) -> tuple[dict, dict]:
    """Consolidated summary plus margin-histogram CSVs keyed by report name."""
    merged, hists = [], {}
    names = {}
    for path in paths:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict) or not REPORT_KEYS <= set(data):
            raise ConfigError(f"{path}: not a verification report")
        name = data["name"]
        if name in names:
            names[name] += 1
            new = f"{name}-{names[name]}"
            log.warning("duplicate report name %r renamed to %r", name, new)
            data = {**data, "name": new}
        else:
            names[name] = 1
        merged.append(data)
        margins_csv = path.with_name(path.name[: -len(".json")] + ".margins.csv")
        if margins_csv.exists():
            rows = margins_csv.read_text().splitlines()[1:]
            vals = np.array([float(r.rsplit(",", 2)[1]) for r in rows]) if rows else np.array([])
            vals = vals[np.isfinite(vals)]
            if vals.size:
                counts, edges = np.histogram(vals, bins=min(20, max(1, vals.size)))
                lines = ["bin_lo,bin_hi,count"] + [f"{edges[i]!r},{edges[i + 1]!r},{int(c)}" for i, c in enumerate(counts)]
                hists[data["name"]] = "\n".join(lines) + "\n"
    summary = {"reports": merged, "verdict": combine_verdicts(d["verdict"] for d in merged)}
    return summary, hists


# --------------------------------------------------------------------------
# argument parsing


def _common(sp, with_space=True):
    if with_space:
        sp.add_argument("space", help="generator spec name:k=v,... or a mesh/graph/json file")
    sp.add_argument("-p", "--param", action="append", default=[], metavar="KEY=VALUE", help="operation parameter")
    sp.add_argument("-o", "--out", type=Path, help="directory for reports and artifacts")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tolerance", action="append", default=[], metavar="NAME=VALUE",
                    help="override a report tolerance")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="katolab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a generated mesh (.off) or graph (.graph)")
    g.add_argument("name")
    g.add_argument("-p", "--param", action="append", default=[], metavar="KEY=VALUE")
    g.add_argument("-o", "--out", type=Path)

    s = sub.add_parser("space", help="summarise a space; optionally export it as JSON")
    s.add_argument("space")
    s.add_argument("-o", "--out", type=Path)
    s.add_argument("--distances", action="store_true", help="include the distance matrix in the export")

    for name in ("spectrum", "heat", "kato", "cutoff", "gauge", "split", "gh", "probe"):
        _common(sub.add_parser(name, help=f"run the {name} operation"))
    e = sub.add_parser("entropy", help="entropy operations")
    e.add_argument("mode", choices=["identities", "density", "monotonicity", "varadhan"])
    _common(e)
    v = sub.add_parser("verify", help="check an inequality")
    v.add_argument("name", choices=sorted(k.split(".", 1)[1] for k in OPERATIONS if k.startswith("verify.")))
    _common(v)

    r = sub.add_parser("run", help="execute a scenario file")
    r.add_argument("config", type=Path)
    r.add_argument("--tolerance", action="append", default=[], metavar="NAME=VALUE")

    m = sub.add_parser("report", help="merge report files")
    m.add_argument("paths", nargs="+", type=Path)
    m.add_argument("-o", "--out", type=Path)
    return ap


def _space_summary(space: geometry.DiscreteSpace) -> dict:
    out = {"vertices": space.vertex_count, "n": space.n, "total_measure": space.total_measure,
           "mean_edge_length": space.mean_edge_length, "metric": space.metric}
    if space.mesh is not None:
        out["euler_characteristic"] = space.mesh.euler_characteristic()
    if space.vertex_count <= heat.DENSE_LIMIT:
        out["diameter"] = space.diameter
    return out


def _emit(outcome: Outcome, outdir: Path | None, prefix: str):
    if outdir is not None:
        _write(outdir, prefix, outcome)
    print(outcome.report.to_json())
    return exit_code([outcome.report.verdict])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if _THREADS:
        try:
            import numba

            numba.set_num_threads(min(int(_THREADS), numba.config.NUMBA_NUM_THREADS))
        except (ValueError, ImportError):
            pass
    try:
        if args.command == "gen":
            params = parse_assignments(args.param)
            obj = generators.generate(args.name, **params)
            if isinstance(obj, geometry.MeshSurface):
                if args.out is None:
                    raise ConfigError("mesh output needs -o FILE.off")
                geometry.write_off(obj, args.out)
            else:
                text = geometry.format_graph(obj)
                if args.out is None:
                    sys.stdout.write(text)
                else:
                    args.out.write_text(text)
            return EXIT_OK
        if args.command == "space":
            space = load_space(args.space)
            print(json.dumps(_space_summary(space), sort_keys=True))
            if args.out is not None:
                args.out.write_text(geometry.space_to_json(space, with_distances=args.distances))
            return EXIT_OK
        if args.command == "run":
            sc = parse_scenario(args.config.read_text(), str(args.config))
            code, reports = run_scenario(sc, parse_assignments(args.tolerance))
            for rep in reports:
                print(str(rep))
            return code
        if args.command == "report":
            summary, hists = merge_reports(args.paths)
            text = json.dumps(summary, sort_keys=True)
            if args.out is None:
                print(text)
            else:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / "summary.json").write_text(text + "\n")
                for name, csv_text in sorted(hists.items()):
                    (args.out / f"hist_{name}.csv").write_text(csv_text)
            return EXIT_OK
        key = args.command
        if args.command == "entropy":
            key = f"entropy.{args.mode}"
        elif args.command == "verify":
            key = f"verify.{args.name}"
        ctx = Context(args.space, seed=args.seed)
        out = run_operation(key, ctx, parse_assignments(args.param), "command line", parse_assignments(args.tolerance))
        return _emit(out, args.out, key)
    except (ConfigError, geometry.GeometryError, entropy.EntropyError, heat.SpectralError, ValueError, OSError) as exc:
        print(f"katolab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
