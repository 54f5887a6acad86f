"""Command-line front end: config files, reports, exports and validation."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import cegis, kernels
from .cover import export_csv
from .sysmodel import Annulus, BoxShell, BENCHMARKS, get_system, grid_states, roi_from_dict
from .template import Candidate

log = logging.getLogger("bblyap")

SCHEMA_VERSION = 1
EXIT_CODES = {"Found": 0, "NoLyapunovInSpace": 2, "NotDeltaProvable": 3,
              "IterationLimit": 4, "ResourceLimit": 5}
BOA_STEPS = 40

_KEYS = {
    "system": str, "roi": dict, "template": str, "delta": float, "gamma": float, "max_k": int,
    "grid_per_axis": int, "max_samples": int, "verifier_budget": int, "jobs": int, "seed": int,
    "time_limit": float, "verdict_trace": str,
}


class ConfigError(ValueError):
    pass


def _where(node) -> str:
    m = node.start_mark
    return f"line {m.line + 1}, column {m.column + 1}"


def parse_config_text(text: str, source: str = "<config>") -> cegis.CegisConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{source}: {e}") from None
    if root is None or not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{source}: top level must be a mapping")
    data = yaml.safe_load(text)
    nodes = {k.value: (k, v) for k, v in root.value}
    for key, (knode, _) in nodes.items():
        if key not in _KEYS:
            raise ConfigError(f"{source}: {_where(knode)}: unknown key {key!r}; "
                              f"allowed keys are {sorted(_KEYS)}")

    def fail(key, msg):
        raise ConfigError(f"{source}: {_where(nodes[key][1])}: {key}: {msg}")

    for key, typ in _KEYS.items():
        if key not in data or data[key] is None:
            continue
        val = data[key]
        if typ is float and isinstance(val, (int, float)) and not isinstance(val, bool):
            data[key] = float(val)
        elif typ is int and isinstance(val, int) and not isinstance(val, bool):
            pass
        elif not isinstance(val, typ) or isinstance(val, bool):
            fail(key, f"expected {typ.__name__}, got {type(val).__name__}")

    if "system" not in data:
        raise ConfigError(f"{source}: missing required key 'system'")
    if data["system"] not in BENCHMARKS:
        fail("system", f"unknown benchmark {data['system']!r}; choose from {sorted(BENCHMARKS)}")
    roi = None
    if data.get("roi") is not None:
        try:
            roi = roi_from_dict(data["roi"], get_system(data["system"]).dim)
        except (KeyError, TypeError, ValueError) as e:
            fail("roi", str(e))
    kwargs = {k: data[k] for k in _KEYS if k in data and k not in ("roi", "verdict_trace")}
    if data.get("gamma") is None and data.get("max_k") is None:
        kwargs["max_k"] = cegis.DEFAULT_MAX_K
    kwargs["trace_path"] = data.get("verdict_trace")
    try:
        return cegis.CegisConfig(roi=roi, **kwargs)
    except ValueError as e:
        key = next((k for k in ("gamma", "max_k", "delta", "grid_per_axis", "jobs") if k in nodes and k in str(e)),
                   None)
        if key:
            fail(key, str(e))
        raise ConfigError(f"{source}: {e}") from None


def parse_config(path) -> cegis.CegisConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), str(path))


def config_to_dict(cfg: cegis.CegisConfig) -> dict:
    d = {"system": cfg.system if isinstance(cfg.system, str) else cfg.system.name,
         "template": cfg.template, "delta": cfg.delta, "grid_per_axis": cfg.grid_per_axis,
         "max_samples": cfg.max_samples, "verifier_budget": cfg.verifier_budget,
         "jobs": cfg.jobs, "seed": cfg.seed}
    if cfg.roi is not None:
        d["roi"] = cfg.roi.to_dict()
    if cfg.gamma is not None:
        d["gamma"] = cfg.gamma
    if cfg.max_k is not None:
        d["max_k"] = cfg.max_k
    if cfg.time_limit is not None:
        d["time_limit"] = cfg.time_limit
    if cfg.trace_path is not None:
        d["verdict_trace"] = cfg.trace_path
    return d


def dump_config(cfg: cegis.CegisConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    n_points: int
    violations: list = field(default_factory=list)  # (kind, state)
    worst_lie: float = -math.inf
    min_value: float = math.inf

    @property
    def n_violations(self) -> int:
        return len(self.violations)

    def as_dict(self, limit: int = 20):
        return {"points": self.n_points, "violations": self.n_violations,
                "worst_lie": self.worst_lie, "min_value": self.min_value,
                "examples": [[k, list(x)] for k, x in self.violations[:limit]]}


def _roi_points(roi, trials: int, seed: int, grid: int):
    from scipy.stats import qmc

    lo, hi = (np.asarray(v, dtype=float) for v in roi.bounding_box())
    out = []
    if trials > 0:
        sampler = qmc.Halton(d=len(lo), scramble=True, seed=seed)
        got = 0
        while got < trials:
            U = qmc.scale(sampler.random(max(1024, 2 * (trials - got))), lo, hi)
            U = U[roi.contains_batch(U)][: trials - got]
            out.append(U)
            got += len(U)
    G = grid_states(lo, hi, grid)
    out.append(G[roi.contains_batch(G)])
    return np.vstack(out)


def validate_candidate(c: Candidate, system, roi, trials: int = 100_000, seed: int = 0,
                       grid: int = 101) -> ValidationReport:
    """White-box check of positivity and decrease at quasi-random and grid ROI states."""
    X = _roi_points(roi, trials, seed, grid)
    V = c.kind.value_batch(c.theta_array, X)
    F = system.dynamics(X)
    lie = np.einsum("ki,ki->k", c.kind.gradient_batch(c.theta_array, X), F)
    rep = ValidationReport(n_points=len(X))
    if len(X):
        rep.worst_lie = float(lie.max())
        rep.min_value = float(V.min())
    for i in np.flatnonzero(V <= 0.0):
        rep.violations.append(("positivity", tuple(X[i].tolist())))
    for i in np.flatnonzero(lie >= 0.0):
        rep.violations.append(("decrease", tuple(X[i].tolist())))
    return rep


# ---------------------------------------------------------------------------
# Reports and exports
# ---------------------------------------------------------------------------

def _outer_contains(roi, X):
    if isinstance(roi, Annulus):
        return np.linalg.norm(X, axis=1) <= roi.r_max
    return np.all(np.abs(X) <= np.asarray(roi.outer), axis=1)


def level_grid(c: Candidate, roi, per_axis: int = 201, margin: float = 1.5):
    lo, hi = (np.asarray(v, dtype=float) for v in roi.bounding_box())
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * margin
    X = grid_states(mid - half, mid + half, per_axis)
    return X, c.kind.value_batch(c.theta_array, X)


def boa_level(c: Candidate, roi, per_axis: int = 201, steps: int = BOA_STEPS) -> float:
    """Largest c (bisection) whose grid sublevel set stays inside the ROI's outer boundary."""
    X, V = level_grid(c, roi, per_axis)
    inside = _outer_contains(roi, X)

    def ok(level):
        return bool(np.all(inside[V <= level]))

    lo, hi = 0.0, float(V.max())
    if ok(hi):
        return hi
    for _ in range(steps):
        m = 0.5 * (lo + hi)
        if ok(m):
            lo = m
        else:
            hi = m
    return lo


def outcome_name(out) -> str:
    return type(out).__name__


def build_report(cfg, out, state=None, validation=None, seconds=None) -> dict:
    cand = getattr(out, "candidate", None)
    rep = {
        "schema_version": SCHEMA_VERSION,
        "outcome": outcome_name(out),
        "stats": {k: v for k, v in out.stats.as_dict().items() if k != "seconds"},
        "config": {k: v for k, v in config_to_dict(cfg).items() if k != "jobs"},
        "runtime": {"seconds": out.stats.seconds if seconds is None else seconds,
                    "jobs": cfg.jobs, "backend": kernels.BACKEND},
    }
    if hasattr(out, "reason"):
        rep["reason"] = out.reason
    if cand is not None:
        rep["candidate"] = {"template": cand.kind.name, "n": cand.kind.n, "id": cand.id,
                            "theta": list(cand.theta),
                            "matrix": cand.matrix.reshape(-1).tolist()}
    if state is not None:
        rep["trace"] = state.trace
    if validation is not None:
        rep["validation"] = validation.as_dict()
    return rep


def canonical_report(rep: dict) -> str:
    """Report text without run-dependent fields (wall clock, workers, back end)."""
    r = {k: v for k, v in rep.items() if k != "runtime"}
    return json.dumps(r, sort_keys=True, indent=1)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def export_artifacts(report: dict, cover, samples, outdir, candidate=None, roi=None,
                     emit_triangulation: bool = True):
    """Write report.json and, when a candidate exists, the CSV artifacts."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    if candidate is not None and roi is not None:
        report["boa_level"] = boa_level(candidate, roi)
    path = os.path.join(outdir, "report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    written.append(path)
    if candidate is None:
        return written
    n = candidate.kind.n
    if cover is not None:
        # number samples like the cover's points so the CSVs share ids
        by_x = {tuple(s.x): s for s in samples}
        samples = [by_x[p] for p in cover.points if p in by_x]
    path = os.path.join(outdir, "samples.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"x{i}" for i in range(n)] + [f"y{i}" for i in range(n)])
        for i, s in enumerate(samples):
            w.writerow([i] + [_fmt(v) for v in s.x] + [_fmt(v) for v in s.y])
    written.append(path)
    if emit_triangulation and cover is not None:
        p1 = os.path.join(outdir, "points.csv")
        p2 = os.path.join(outdir, "simplices.csv")
        export_csv(cover, p1, p2)
        written += [p1, p2]
    if roi is not None:
        X, V = level_grid(candidate, roi)
        path = os.path.join(outdir, "levelset.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(n)] + ["V"])
            for x, v in zip(X, V):
                w.writerow([_fmt(a) for a in x] + [_fmt(v)])
        written.append(path)
    return written


def read_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="bblyap", description="Synthesize a Lyapunov function for a "
                                "black-box benchmark system.")
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, help="verification worker threads")
    p.add_argument("--out", help="directory for report and CSV artifacts")
    p.add_argument("--emit-triangulation", action="store_true", help="also write points/simplices CSV")
    p.add_argument("--validate-trials", type=int, default=0,
                   help="white-box validation points for a found candidate")
    p.add_argument("--max-samples", type=int, help="oracle sample budget")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError("--jobs must be positive")
            cfg.jobs = args.jobs
        if args.max_samples is not None:
            if args.max_samples < 1:
                raise ConfigError("--max-samples must be positive")
            cfg.max_samples = args.max_samples
        holder = {}
        out = cegis.run(cfg, holder)
        state = holder.get("state")
        validation = None
        cand = getattr(out, "candidate", None)
        if args.validate_trials > 0 and cand is not None and state is not None:
            validation = validate_candidate(cand, state.system, state.roi, args.validate_trials, cfg.seed)
        rep = build_report(cfg, out, state, validation)
        if args.out:
            export_artifacts(rep, state.cover if state else None, state.samples if state else [],
                             args.out, cand, state.roi if state else None, args.emit_triangulation)
        s = rep["stats"]
        print(f"{rep['outcome']}: k={s['k']} |S_L|={s['S_L']} |S|={s['S']} |C|={s['C']} "
              f"samples={s['samples_used']} time={rep['runtime']['seconds']:.2f}s")
        if cand is not None:
            print("Theta =", np.array2string(cand.matrix, precision=6))
        if validation is not None:
            print(f"validation: {validation.n_violations} violations over {validation.n_points} "
                  f"points, worst Lie value {validation.worst_lie:.6g}")
        return EXIT_CODES[rep["outcome"]]
    except (ConfigError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
