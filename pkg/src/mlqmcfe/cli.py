"""Configuration-driven experiment runner.

Usage::

    mlqmcfe run <config>
    mlqmcfe plan <config>
    mlqmcfe cbc --s S --n N --config <config> [--out FILE]
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .experiments import compare_ml_sl, fe_convergence, qmc_convergence, truncation_study
from .fem import LevelSystem, build_hierarchy, default_h0, make_mesh, solve
from .field import Domain, SineBasis, make_field
from .mlqmc import MlPlan, build_rules, lattice_rule, ml_estimate, plan, sl_estimate, weights_for
from .qmc import cbc_construct, lambda_q, next_prime
from .wavelet import HaarBasis1D, TensorHaar2D, check_k_orthogonality

log = logging.getLogger("mlqmcfe")

MODES = ("ml", "sl", "fe_convergence", "qmc_convergence", "truncation", "compare_ml_sl",
         "check_orthogonality")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    out = []
    for v in text.replace(",", " ").split():
        out.append(2.0 ** float(v[2:]) if v.startswith("2^") else float(v))
    return out


def _float(text: str) -> float:
    text = text.strip()
    return 2.0 ** float(text[2:]) if text.startswith("2^") else float(text)


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else _float(text)


def _opt_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none") else int(text)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


# key -> (parser, default as text)
SCHEMA: dict[str, tuple[Callable[[str], Any], str]] = {
    "field.family": (_choice("sine", "haar"), "sine"),
    "field.mean": (_float, "1.0"),
    "field.c": (_float, "0.2"),
    "field.theta": (_float, "2.0"),
    "field.a_min": (_opt_float, "none"),
    "field.a_max": (_opt_float, "none"),
    "field.kappa": (_float, "1.0"),
    "field.C_t": (_float, "1.0"),
    "field.p": (_float, "0.6"),
    "field.q": (_float, "0.8"),
    "wavelet.a": (int, "2"),
    "wavelet.c": (_float, "0.3"),
    "wavelet.theta": (_float, "2.0"),
    "wavelet.max_level": (int, "10"),
    "wavelet.k": (int, "1"),
    "fem.dim": (int, "1"),
    "fem.h0": (_opt_float, "none"),
    "fem.L": (int, "3"),
    "fem.quad_degree": (int, "6"),
    "fem.solver_tol": (_float, "1e-12"),
    "qmc.delta": (_float, "0.1"),
    "qmc.lambda_override": (_opt_float, "none"),
    "qmc.seed": (int, "0"),
    "mlqmc.scenario": (int, "1"),
    "mlqmc.tau": (_float, "2.0"),
    "mlqmc.m": (int, "16"),
    "mlqmc.N0_scale": (_float, "1.0"),
    "mlqmc.s_cap": (int, "4096"),
    "mlqmc.N_cap": (int, str(2 ** 20)),
    "mlqmc.L_cap": (int, "12"),
    "run.mode": (_choice(*MODES), "ml"),
    "run.epsilon": (_opt_float, "none"),
    "run.L": (_opt_int, "none"),
    "run.seed": (_opt_int, "none"),
    "run.level": (int, "6"),
    "run.levels": (_int_list, "2,3,4,5,6,7"),
    "run.ref_level": (int, "9"),
    "run.y": (_float_list, "0.5"),
    "run.s": (int, "8"),
    "run.N": (int, "1021"),
    "run.N_values": (_int_list, "127,257,509,1021,2039,4093"),
    "run.shifts": (int, "32"),
    "run.ref_N": (int, "65537"),
    "run.ref_shifts": (int, "16"),
    "run.s_values": (_int_list, "4,8,16,32"),
    "run.s_max": (int, "128"),
    "run.points": (int, "64"),
    "run.qmc_N": (int, "2048"),
    "run.epsilons": (_float_list, "2^-6,2^-8,2^-10"),
    "run.bias_levels": (int, "8"),
    "run.threads": (_opt_int, "none"),
    "output.dir": (str, "out"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict
    raw: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def canonical(self) -> str:
        return "".join(f"{k}={self.raw[k]}\n" for k in sorted(self.raw))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    raw = {k: v for k, (_, v) in SCHEMA.items()}
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, val = (part.strip() for part in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {seen[key]})")
        try:
            SCHEMA[key][0](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        seen[key] = lineno
        raw[key] = val
    values = {k: SCHEMA[k][0](v) for k, v in raw.items()}
    if values["wavelet.k"] != 1:
        raise ConfigError(f"{source}:{seen.get('wavelet.k', 0)}: only wavelet.k = 1 is supported")
    if values["fem.dim"] not in (1, 2):
        raise ConfigError(f"{source}:{seen.get('fem.dim', 0)}: fem.dim must be 1 or 2")
    return ExperimentConfig(values, raw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


# builders

def build_field(cfg: ExperimentConfig):
    dim = cfg["fem.dim"]
    if cfg["field.family"] == "sine":
        basis = SineBasis(cfg["field.c"], cfg["field.theta"], dim=dim)
        domain = Domain(dim, 1.0)
    elif dim == 1:
        basis = HaarBasis1D(cfg["wavelet.a"], cfg["wavelet.max_level"], c=cfg["wavelet.c"],
                            theta=cfg["wavelet.theta"])
        domain = Domain(1, float(cfg["wavelet.a"]))
    else:
        basis = TensorHaar2D(cfg["wavelet.max_level"], c=cfg["wavelet.c"], theta=cfg["wavelet.theta"])
        domain = Domain(2, 1.0)
    return make_field(basis, mean=cfg["field.mean"], domain=domain, a_min=cfg["field.a_min"],
                      a_max=cfg["field.a_max"])


def _lam(cfg: ExperimentConfig) -> float:
    if cfg["qmc.lambda_override"] is not None:
        return cfg["qmc.lambda_override"]
    return lambda_q(cfg["field.q"], cfg["qmc.delta"])


def _seed(cfg: ExperimentConfig) -> int:
    # run.seed overrides the shift seed qmc.seed
    return cfg["run.seed"] if cfg["run.seed"] is not None else cfg["qmc.seed"]


def _h0(cfg: ExperimentConfig, field) -> float:
    return cfg["fem.h0"] if cfg["fem.h0"] is not None else default_h0(field.domain)


def _weights(cfg: ExperimentConfig, field, s_max: int):
    return weights_for(field, cfg["field.p"], cfg["field.q"], _lam(cfg), s_max,
                       kappa=cfg["field.kappa"], C_t=cfg["field.C_t"])


def _level_counts(field):
    basis = field.basis
    if not hasattr(basis, "level_counts"):
        return None
    return [basis.level_counts(n) for n in range(basis.max_level + 1)]


def build_plan(cfg: ExperimentConfig, field) -> MlPlan:
    scenario = cfg["mlqmc.scenario"]
    counts = _level_counts(field)
    if scenario == 1 and counts is None:
        raise ConfigError("scenario 1 needs a wavelet field (field.family = haar)")
    p, q = cfg["field.p"], cfg["field.q"]
    if scenario == 3:
        q = None
    return plan(epsilon=cfg["run.epsilon"], L=cfg["run.L"] if cfg["run.epsilon"] is None else None,
                scenario=scenario, p=p, q=q, tau=cfg["mlqmc.tau"], d=cfg["fem.dim"],
                delta=cfg["qmc.delta"], level_counts=counts, h0=_h0(cfg, field),
                lam=cfg["qmc.lambda_override"], m=cfg["mlqmc.m"], N0_scale=cfg["mlqmc.N0_scale"],
                s_cap=cfg["mlqmc.s_cap"], N_cap=cfg["mlqmc.N_cap"], L_cap=cfg["mlqmc.L_cap"])


# output

def _write_csv(path: Path, digest: str, header: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    buf.write(f"# config-hash: {digest}\n")
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    path.write_text(buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


PLAN_HEADER = ["level", "h", "s", "N", "m", "K", "theta"]


def _systems(cfg, field, meshes) -> list:
    """Level systems with the configured quadrature; the finest one gets a residual-checked solve."""
    systems = [LevelSystem(m, field, quad_degree=cfg["fem.quad_degree"]) for m in meshes]
    solve(meshes[-1], field, np.zeros(1), tol=cfg["fem.solver_tol"])
    return systems


def _run_ml(cfg, field, out: Path, summary: list[str]):
    if cfg["run.epsilon"] is None and cfg["run.L"] is None:
        raise ConfigError("mode ml needs run.epsilon or run.L")
    pl = build_plan(cfg, field)
    w = _weights(cfg, field, int(pl.s.max()))
    hier = build_hierarchy(field.domain, pl.L, pl.h0)
    systems = _systems(cfg, field, hier)
    est = ml_estimate(pl, field, hier, rules=build_rules(pl, w), seed=_seed(cfg),
                      threads=cfg["run.threads"], systems=systems)
    rows = est.rows()
    rows.append(dict(level="total", mean=est.value, variance=est.std_error ** 2,
                     N=int(pl.N.sum()), s=int(pl.s.max()), solves=sum(r["solves"] for r in rows),
                     cost=est.cost_units))
    summary += [f"value {est.value!r} +- {est.std_error!r}", f"cost_units {est.cost_units!r}",
                f"wall_time {est.wall_time:.3f}s"]
    return ["level", "mean", "variance", "N", "s", "solves", "cost"], rows, pl.rows()


def _run_sl(cfg, field, out: Path, summary: list[str]):
    s, level = cfg["run.s"], cfg["run.level"]
    w = _weights(cfg, field, s)
    rule = lattice_rule(s, next_prime(cfg["run.N"]), w)
    mesh = make_mesh(field.domain, level, _h0(cfg, field))
    est = sl_estimate(field, level, s, rule, m=cfg["mlqmc.m"], seed=_seed(cfg),
                      h0=_h0(cfg, field), threads=cfg["run.threads"],
                      system=_systems(cfg, field, [mesh])[0])
    summary += [f"value {est.value!r} +- {est.std_error!r}", f"cost_units {est.cost_units!r}"]
    h = _h0(cfg, field) * 2.0 ** -level
    plan_rows = [dict(level=level, h=h, s=s, N=rule.N, m=cfg["mlqmc.m"], K=h ** -field.spatial_dim * s, theta=0)]
    return ["level", "mean", "variance", "N", "s", "solves", "cost"], est.rows(), plan_rows


def _run_fe(cfg, field, out, summary):
    y = cfg["run.y"]
    rows, fit = fe_convergence(field, cfg["run.levels"], cfg["run.ref_level"], y,
                               quad_degree=cfg["fem.quad_degree"])
    summary.append(f"slope {fit.slope!r} (log2 error vs level)")
    return ["level", "h", "value", "error"], rows, _mesh_rows(cfg, field, cfg["run.levels"])


def _mesh_rows(cfg, field, levels):
    h0 = _h0(cfg, field)
    return [dict(level=l, h=h0 * 2.0 ** -l, s="", N="", m="", K=(h0 * 2.0 ** -l) ** -field.spatial_dim,
                 theta="") for l in levels]


def _run_qmc(cfg, field, out, summary):
    s = cfg["run.s"]
    w = _weights(cfg, field, s)
    rows, fit, ref = qmc_convergence(field, cfg["run.level"], s, cfg["run.N_values"], w,
                                     n_shifts=cfg["run.shifts"], ref_N=cfg["run.ref_N"],
                                     ref_shifts=cfg["run.ref_shifts"], seed=_seed(cfg),
                                     quad_degree=cfg["fem.quad_degree"])
    summary += [f"slope {fit.slope!r} (log RMS vs log N)",
                f"reference {ref['value']!r} +- {ref['std_error']!r} (N={ref['N']})"]
    plan_rows = [dict(level=cfg["run.level"], h="", s=s, N=r["N"], m=cfg["run.shifts"], K="", theta="")
                 for r in rows]
    return ["N", "rms", "mean"], rows, plan_rows


def _run_truncation(cfg, field, out, summary):
    s_max = cfg["run.s_max"]
    w = _weights(cfg, field, s_max)
    rows, fit_p, fit_i = truncation_study(field, cfg["run.level"], cfg["run.s_values"], s_max, w,
                                          n_points=cfg["run.points"], qmc_N=cfg["run.qmc_N"],
                                          seed=_seed(cfg), quad_degree=cfg["fem.quad_degree"])
    summary += [f"pointwise slope {fit_p.slope!r}", f"integral slope {fit_i.slope!r}"]
    plan_rows = [dict(level=cfg["run.level"], h="", s=r["s"], N="", m="", K="", theta="") for r in rows]
    return ["s", "pointwise", "integral"], rows, plan_rows


def _run_compare(cfg, field, out, summary):
    counts = _level_counts(field)
    if counts is None:
        raise ConfigError("compare_ml_sl runs scenario 1 and needs field.family = haar")
    w = _weights(cfg, field, field.basis.size)
    cmp = compare_ml_sl(field, counts, w, cfg["run.epsilons"], tau=cfg["mlqmc.tau"],
                        m=cfg["mlqmc.m"], seed=_seed(cfg), bias_levels=cfg["run.bias_levels"],
                        threads=cfg["run.threads"], quad_degree=cfg["fem.quad_degree"])
    rows = [dict(epsilon=r.epsilon, L=r.L, bias=r.bias, ml_cost=r.ml_cost, ml_std=r.ml_std,
                 sl_cost=r.sl_cost, sl_std=r.sl_std, sl_N=r.sl_N, sl_s=r.sl_s,
                 ratio=r.ml_cost / r.sl_cost) for r in cmp.runs]
    summary += [f"a_ML {cmp.a_ml!r}", f"a_SL {cmp.a_sl!r}", f"reference {cmp.reference!r}"]
    plan_rows = [dict(level=r.L, h="", s=r.sl_s, N=r.sl_N, m=cfg["mlqmc.m"], K="", theta="") for r in cmp.runs]
    header = ["epsilon", "L", "bias", "ml_cost", "ml_std", "sl_cost", "sl_std", "sl_N", "sl_s", "ratio"]
    return header, rows, plan_rows


def _run_ortho(cfg, field, out, summary):
    L = cfg["fem.L"]
    h0 = _h0(cfg, field)
    rows = []
    for l in range(L + 1):
        rep = check_k_orthogonality(field.basis, make_mesh(field.domain, l, h0), k=cfg["wavelet.k"])
        rows.append(dict(level=l, passed=rep.passed, max_violation=rep.max_violation,
                         membership_ok=rep.membership_ok))
    if all(r["passed"] for r in rows):
        summary.append(f"PASS k={cfg['wavelet.k']} for l=0..{L}")
    else:
        bad = [r["level"] for r in rows if not r["passed"]]
        summary.append(f"FAIL k={cfg['wavelet.k']} at levels {bad}")
    return ["level", "passed", "max_violation", "membership_ok"], rows, _mesh_rows(cfg, field, range(L + 1))


RUNNERS = {
    "ml": _run_ml,
    "sl": _run_sl,
    "fe_convergence": _run_fe,
    "qmc_convergence": _run_qmc,
    "truncation": _run_truncation,
    "compare_ml_sl": _run_compare,
    "check_orthogonality": _run_ortho,
}


def run_experiment(config_path, out_dir: Optional[str] = None) -> int:
    cfg = load_config(config_path)
    out = Path(out_dir or cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    field = build_field(cfg)
    t0 = time.perf_counter()
    summary: list[str] = []
    header, rows, plan_rows = RUNNERS[cfg["run.mode"]](cfg, field, out, summary)
    _write_csv(out / "results.csv", cfg.digest, header, rows)
    _write_csv(out / "plan.csv", cfg.digest, PLAN_HEADER, plan_rows)
    elapsed = time.perf_counter() - t0
    with open(out / "run.log", "w") as fh:
        fh.write(f"# config-hash: {cfg.digest}\n")
        fh.write(cfg.canonical())
        fh.write("# summary\n")
        for line in summary:
            fh.write(line + "\n")
        fh.write(f"elapsed {elapsed:.3f}s\n")
    for line in summary:
        print(line)
    return 0


def _cmd_plan(args) -> int:
    cfg = load_config(args.config)
    field = build_field(cfg)
    pl = build_plan(cfg, field)
    out = Path(args.out or cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "plan.csv", cfg.digest, PLAN_HEADER, pl.rows())
    for k, v in pl.summary().items():
        print(f"{k} {v}")
    for r in pl.rows():
        print(" ".join(f"{k}={v}" for k, v in r.items()))
    return 0


def _cmd_cbc(args) -> int:
    cfg = load_config(args.config)
    field = build_field(cfg)
    N = args.n
    w = _weights(cfg, field, args.s)
    rule = cbc_construct(args.s, N, w)
    out = Path(args.out) if args.out else Path(cfg["output.dir"]) / f"z_s{args.s}_N{N}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    rule.save(out)
    print(f"wrote {out} (e^2 = {float(rule.errors[-1])!r})")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="mlqmcfe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="override output.dir")
    p_plan = sub.add_parser("plan", help="print and save the level plan only")
    p_plan.add_argument("config")
    p_plan.add_argument("--out", help="override output.dir")
    p_cbc = sub.add_parser("cbc", help="construct and save a generating vector")
    p_cbc.add_argument("--s", type=int, required=True)
    p_cbc.add_argument("--n", type=int, required=True, help="prime number of points")
    p_cbc.add_argument("--config", required=True)
    p_cbc.add_argument("--out")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return run_experiment(args.config, args.out)
        if args.command == "plan":
            return _cmd_plan(args)
        return _cmd_cbc(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
