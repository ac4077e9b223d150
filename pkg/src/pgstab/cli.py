"""Command-line driver: offline training, online solves, sweeps, benches.

Offline stage: assemble the affine parts, cache the per-part optimal-test
solves, generate the per-block SVD dataset over a parameter grid, train
the surrogate. Online stage: combine W(mu), compress (exactly or
NN-guided), and solve the reduced Petrov-Galerkin system with GMRES.

Outputs are plain CSV/JSON plus the documented binary formats, and runs
are reproducible: identical config and seed give identical files (wall
times excluded).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import assembly, bspline, hmat, krylov, opttest, problems, surrogate

__all__ = ["RunConfig", "run_pipeline", "main"]

PIPELINES = ("galerkin", "pg-dense", "pg-hmat", "pg-hmat-nn")


@dataclass
class RunConfig:
    """Declarative run configuration; every field has a default and the
    effective config is echoed to the output directory."""

    problem: str = "ej2d"
    mesh: str = ""                 # "26x10" / "16"; problem default if empty
    trial_order: int = 0           # 0 = problem default
    test_order: int = 0
    test_continuity: str = ""
    gram: str = ""
    inflow_mode: int = 1
    rank: int = 16
    delta: float = 1e-7
    max_leaf_size: int = 1024
    min_block_size: int = 4
    mode: str = ""                 # sigma | factors; problem default if empty
    depth: int = 4
    grid_start: float = 0.0        # 0 = problem default grid
    grid_stop: float = 0.0
    grid_count: int = 0
    epochs: int = 5000
    hidden: str = "64,64"
    factor_hidden: str = "32"
    learning_rate: float = 5e-3
    seed: int = 0
    tol: float = 1e-10
    max_iter: int = 0              # 0 = system dimension
    pipeline: str = "pg-hmat"
    mu: float = 0.1
    out: str = "runs/out"
    offline_dir: str = ""          # defaults to <out>/offline

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if not hasattr(cfg, key):
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            current = getattr(cfg, key)
            caster = type(current)
            setattr(cfg, key, caster(value) if caster is not bool else value == "true")
        return cfg

    def echo(self) -> str:
        lines = [f"{field.name} = {getattr(self, field.name)}"
                 for field in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    # -- resolved objects --------------------------------------------------

    def problem_spec(self) -> problems.ProblemSpec:
        kw = {}
        if self.trial_order:
            kw["trial_order"] = self.trial_order
        if self.test_order:
            kw["test_order"] = self.test_order
        if self.test_continuity:
            kw["test_continuity"] = self.test_continuity
        if self.gram:
            kw["gram_kind"] = self.gram
        if self.problem == "ej1d":
            if self.mesh:
                kw["elements"] = int(self.mesh)
            return problems.ej1d(**kw)
        if self.mesh:
            nx, _, ny = self.mesh.partition("x")
            kw["nx"], kw["ny"] = int(nx), int(ny or nx)
        if self.problem == "ej2d":
            kw["inflow_mode"] = self.inflow_mode
            return problems.ej2d(**kw)
        if self.problem == "helmholtz":
            return problems.helmholtz(**kw)
        raise ValueError(f"unknown problem {self.problem!r}")

    def compression(self) -> hmat.CompressionParams:
        return hmat.CompressionParams(self.rank, self.delta,
                                      self.max_leaf_size, self.min_block_size)

    def surrogate_mode(self) -> str:
        if self.mode:
            return self.mode
        return surrogate.MODE_FACTORS if self.problem == "helmholtz" \
            else surrogate.MODE_SIGMA

    def grid(self) -> np.ndarray:
        if self.grid_count:
            if self.problem == "helmholtz":
                return np.linspace(self.grid_start, self.grid_stop,
                                   self.grid_count)
            return np.logspace(np.log10(self.grid_start),
                               np.log10(self.grid_stop), self.grid_count)
        if self.problem == "helmholtz":
            return np.linspace(1.0, 10.0, 37)
        return np.logspace(-6, -1, 33)

    def hidden_tuple(self) -> tuple:
        return tuple(int(v) for v in self.hidden.split(",") if v)

    def factor_hidden_tuple(self) -> tuple:
        return tuple(int(v) for v in self.factor_hidden.split(",") if v)


# -- shared assembly/caching -----------------------------------------------------


class ProblemSetup:
    """Assembled forms, Gram factor, and cached per-part solves."""

    def __init__(self, spec: problems.ProblemSpec, counter=None):
        self.spec = spec
        self.trial = spec.trial_space()
        self.test = spec.test_space()
        self.forms = assembly.assemble_affine_parts(spec, self.trial, self.test)
        self.fac = opttest.factor_gram(self.forms.gram, counter)
        self.parts = opttest.solve_parts(self.forms, self.fac, counter)


@dataclass
class PipelineResult:
    mu: float
    pipeline: str
    x_full: np.ndarray
    report: krylov.SolveReport
    errors: problems.ErrorReport
    tree: hmat.HNode | None = None


def run_pipeline(setup: ProblemSetup, mu: float, pipeline: str,
                 params: hmat.CompressionParams | None = None,
                 model: surrogate.SurrogateModel | None = None,
                 tol: float = 1e-10, max_iter: int | None = None,
                 counter: krylov.FlopCounter | None = None) -> PipelineResult:
    """Run one (mu, pipeline) solve and evaluate errors against the exact
    solution. The counter accumulates every online phase."""
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r}")
    spec = setup.spec
    counter = counter if counter is not None else krylov.FlopCounter()
    params = params or hmat.CompressionParams()
    tree = None

    if pipeline == "galerkin":
        x_full, report = krylov.galerkin_solve(spec, mu, tol=tol,
                                               max_iter=max_iter, counter=counter)
        space = spec.galerkin_space()[0]
    else:
        forms = setup.forms
        load = assembly.assemble_load(spec, forms, mu)
        b_mu = forms.evaluate(mu)
        counter.add("assembly", 2 * sum(p.nnz for p in forms.parts))
        if pipeline == "pg-dense":
            w = opttest.combine_parts(setup.parts, forms, mu, counter)
            op = krylov.operator_from_matrix(w, counter, "matvec-H", label="W")
            bt = krylov.operator_from_matrix(b_mu.T.tocsr(), counter,
                                             "matvec-sparse", label="B^T")
            pg_op = krylov.LinearOperator(
                (forms.trial_dim, forms.trial_dim),
                lambda x: bt.apply(op.apply(x)), label="B^T W")
            rhs = w.T @ load
            counter.add("matvec-H", load.size * (2 * w.shape[0] - 1))
        else:
            if pipeline == "pg-hmat":
                w = opttest.combine_parts(setup.parts, forms, mu, counter)
                tree = hmat.create_tree(w, params, counter)
            else:
                if model is None:
                    raise ValueError("pg-hmat-nn requires a trained surrogate model")
                if model.mode == surrogate.MODE_FACTORS:
                    theta = [th(mu) for th in forms.theta]
                    source = surrogate.DenseParts(setup.parts, theta)
                else:
                    source = opttest.combine_parts(setup.parts, forms, mu, counter)
                tree = surrogate.create_tree_nn(source, params, model, mu, counter)
            pg_op = krylov.pg_operator(b_mu, tree, counter)
            rhs = krylov.pg_rhs(load, tree, counter)
        x, report = krylov.gmres(pg_op, rhs, tol=tol, max_iter=max_iter,
                                 counter=counter)
        x_full = assembly.expand_solution(forms, mu, x)
        space = setup.trial
    errors = problems.error_norms(x_full, space, spec.exact(mu), spec.exact_grad(mu))
    return PipelineResult(mu, pipeline, x_full, report, errors, tree)


# -- commands --------------------------------------------------------------------


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo())
    return out


def cmd_offline(cfg: RunConfig) -> dict:
    """Assemble and cache parts, generate the dataset, train the model."""
    out = _outdir(cfg)
    spec = cfg.problem_spec()
    counter = krylov.FlopCounter()
    setup = ProblemSetup(spec, counter)
    params = cfg.compression()
    for k, part in enumerate(setup.parts):
        opttest.save_dense(out / f"w_part_{k}.bin", part)
    (out / "gram_meta.json").write_text(json.dumps({
        "test_dim": setup.forms.test_dim,
        "trial_dim": setup.forms.trial_dim,
        "gram_kind": spec.gram_kind,
        "gram_nnz": int(setup.forms.gram.nnz),
        "problem": spec.kind,
        "mesh": list(spec.mesh),
    }, indent=2, sort_keys=True))

    mode = cfg.surrogate_mode()
    grid = cfg.grid()
    sched = surrogate.build_schedule(setup.forms.test_dim,
                                     setup.forms.trial_dim, cfg.depth)
    dataset = surrogate.generate_dataset(setup.forms, setup.fac, sched, grid,
                                         params, mode, parts=setup.parts)
    surrogate.save_dataset(out / "dataset.bin", dataset)
    holdout = _holdout_indices(len(grid))
    model = surrogate.train(
        dataset, hidden=cfg.hidden_tuple(), epochs=cfg.epochs,
        learning_rate=cfg.learning_rate, seed=cfg.seed,
        holdout_indices=holdout, factor_hidden=cfg.factor_hidden_tuple())
    surrogate.save_model(out / "model.bin", model)
    summary = {
        "dataset": str(out / "dataset.bin"),
        "model": str(out / "model.bin"),
        "blocks": len(sched),
        "grid_points": len(grid),
        "mode": mode,
        "holdout": model.holdout,
        "final_loss": model.loss_history[-1] if model.loss_history else None,
    }
    (out / "offline_summary.json").write_text(json.dumps(summary, indent=2,
                                                         sort_keys=True))
    return summary


def _holdout_indices(t: int) -> list:
    """Roughly one sample in six, interior points only."""
    if t < 12:
        return []
    return [int(round(v)) for v in np.linspace(2, t - 3, min(6, t // 5))]


def _load_model(cfg: RunConfig) -> surrogate.SurrogateModel:
    offline = Path(cfg.offline_dir or (Path(cfg.out) / "offline"))
    model_path = offline / "model.bin"
    if not model_path.exists():
        raise FileNotFoundError(
            f"no trained model at {model_path}; run "
            f"'pgstab offline --problem {cfg.problem} --out {offline}' first")
    return surrogate.load_model(model_path)


def _write_solution_csv(path, result: PipelineResult):
    with open(path, "w") as fh:
        fh.write("x,y,u_h,u_exact,error\n")
        for x, y, uh, ue in result.errors.samples:
            fh.write(f"{x:.16g},{y:.16g},{uh:.16g},{ue:.16g},{uh - ue:.16g}\n")


def _report_json(result: PipelineResult) -> dict:
    data = result.report.to_json()
    data.update({
        "mu": result.mu,
        "pipeline": result.pipeline,
        "l2_error": result.errors.l2,
        "relative_l2_error": result.errors.relative_l2,
        "h1_semi_error": result.errors.h1_semi,
        "overshoot": result.errors.overshoot,
    })
    return data


def cmd_solve(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    spec = cfg.problem_spec()
    setup = ProblemSetup(spec)
    model = _load_model(cfg) if cfg.pipeline == "pg-hmat-nn" else None
    result = run_pipeline(setup, cfg.mu, cfg.pipeline, cfg.compression(),
                          model, cfg.tol, cfg.max_iter or None)
    _write_solution_csv(out / "solution.csv", result)
    report = _report_json(result)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if result.tree is not None:
        (out / "hmat_summary.txt").write_text(hmat.structure_summary(result.tree))
        hmat.save_hmatrix(out / "hmat.bin", result.tree, cfg.compression())
    return report


def cmd_sweep(cfg: RunConfig, values, pipelines=None) -> list:
    """Run every (mu, pipeline) combination; partial failures are recorded
    per row and the sweep continues."""
    out = _outdir(cfg)
    pipelines = list(pipelines or [cfg.pipeline])
    spec = cfg.problem_spec()
    setup = ProblemSetup(spec)
    model = None
    if "pg-hmat-nn" in pipelines:
        model = _load_model(cfg)
    rows = []
    for mu in values:
        for pipeline in pipelines:
            tag = f"{spec.param_name}{mu:g}-{pipeline}"
            row = {"mu": float(mu), "pipeline": pipeline, "status": "ok"}
            try:
                result = run_pipeline(setup, mu, pipeline, cfg.compression(),
                                      model, cfg.tol, cfg.max_iter or None)
                rundir = out / tag
                rundir.mkdir(parents=True, exist_ok=True)
                _write_solution_csv(rundir / "solution.csv", result)
                report = _report_json(result)
                (rundir / "report.json").write_text(
                    json.dumps(report, indent=2, sort_keys=True))
                row.update(
                    iterations=result.report.iterations,
                    final_residual=result.report.final_residual,
                    l2_error=result.errors.l2,
                    overshoot=result.errors.overshoot,
                    **{f"flops_{k}": v for k, v in result.report.flops.items()},
                )
            except Exception as exc:  # keep sweeping, record the failure
                row["status"] = f"error: {exc}"
            rows.append(row)
    _write_rows_csv(out / "sweep.csv", rows)
    return rows


def _write_rows_csv(path, rows):
    keys = ["mu", "pipeline", "status", "iterations", "final_residual",
            "l2_error", "overshoot"]
    extra = sorted({k for row in rows for k in row} - set(keys))
    keys += extra
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row.get(k, "")) for k in keys) + "\n")


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.16g}"
    return str(value)


def cmd_compress(cfg: RunConfig) -> dict:
    """Compress W(mu) and write the structure summary plus fidelity stats."""
    out = _outdir(cfg)
    spec = cfg.problem_spec()
    setup = ProblemSetup(spec)
    counter = krylov.FlopCounter()
    w = opttest.combine_parts(setup.parts, setup.forms, cfg.mu, counter)
    opttest.save_dense(out / "w.bin", w)
    params = cfg.compression()
    tree = hmat.create_tree(w, params, counter)
    hmat.save_hmatrix(out / "hmat.bin", tree, params)
    (out / "hmat_summary.txt").write_text(hmat.structure_summary(tree))
    dense = hmat.decompress(tree)
    stats = hmat.tree_stats(tree)
    stats.update(
        mu=cfg.mu,
        rel_frobenius_error=float(np.linalg.norm(dense - w) / np.linalg.norm(w)),
        error_bound=float(hmat.leaf_error_bound(tree)),
        dense_floats=int(w.size),
        flops=counter.snapshot()["flops"],
    )
    (out / "compress_stats.json").write_text(json.dumps(stats, indent=2,
                                                        sort_keys=True))
    return stats


def cmd_bench(cfg: RunConfig, values) -> dict:
    """Flop tables mirroring the paper's stabilized-vs-Galerkin comparison.

    The stabilized table counts kernel flops (every phase except
    nn-inference, which is reported in its own column)."""
    out = _outdir(cfg)
    spec = cfg.problem_spec()
    setup = ProblemSetup(spec)
    model = _load_model(cfg)
    stab_rows, gal_rows = [], []
    for mu in values:
        counter = krylov.FlopCounter()
        result = run_pipeline(setup, mu, "pg-hmat-nn", cfg.compression(),
                              model, cfg.tol, cfg.max_iter or None, counter)
        nn_counter = krylov.FlopCounter()
        if model.mode == surrogate.MODE_FACTORS:
            theta = [th(mu) for th in setup.forms.theta]
            source = surrogate.DenseParts(setup.parts, theta)
        else:
            source = opttest.combine_parts(setup.parts, setup.forms, mu)
        exact_counter = krylov.FlopCounter()
        hmat_tree = hmat.create_tree(
            source.block(0, setup.forms.test_dim, 0, setup.forms.trial_dim)
            if isinstance(source, surrogate.DenseParts) else source,
            cfg.compression(), exact_counter)
        iters = max(result.report.iterations, 1)
        stab_rows.append({
            "mu": float(mu),
            "compress_flops_with_dnn": counter.phase("admissibility")
            + counter.phase("svd"),
            "compress_flops_without_dnn": exact_counter.phase("admissibility")
            + exact_counter.phase("svd"),
            "nn_inference_flops": counter.phase("nn-inference"),
            "hx_flops_per_iter": counter.phase("matvec-H") // (iters + 2),
            "btx_flops_per_iter": counter.phase("matvec-sparse") // (iters + 1),
            "iterations": result.report.iterations,
            "total_kernel_flops": result.report.kernel_flops,
            "total_flops": result.report.total_flops,
        })
        gal_counter = krylov.FlopCounter()
        gal = run_pipeline(setup, mu, "galerkin", cfg.compression(),
                           None, cfg.tol, cfg.max_iter or None, gal_counter)
        gi = max(gal.report.iterations, 1)
        gal_rows.append({
            "mu": float(mu),
            "iterations": gal.report.iterations,
            "flops_per_iter": gal.report.flops.get("matvec-sparse", 0) // (gi + 1),
            "total_kernel_flops": gal.report.kernel_flops,
        })
    _write_rows_csv(out / "bench_stabilized.csv", stab_rows)
    _write_rows_csv(out / "bench_galerkin.csv", gal_rows)
    ratios = [s["total_kernel_flops"] / max(g["total_kernel_flops"], 1)
              for s, g in zip(stab_rows, gal_rows)]
    summary = {"stabilized": stab_rows, "galerkin": gal_rows,
               "kernel_flop_ratios": ratios}
    (out / "bench_summary.json").write_text(json.dumps(summary, indent=2,
                                                       sort_keys=True))
    return summary


def cmd_verify(cfg: RunConfig) -> int:
    """Small built-in oracle suite; prints one PASS/FAIL line per check."""
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except AssertionError as exc:
            checks.append((name, False, str(exc)))

    def partition_of_unity():
        space = bspline.BSplineSpace1D(3, 7)
        rng = np.random.default_rng(0)
        for x in rng.uniform(0, 1, 200):
            _, vals = bspline.eval_basis(space, x)
            assert abs(vals.sum() - 1) < 1e-12

    def quadrature():
        rule = bspline.gauss_rule(4)
        for deg in range(8):
            exact = (1 - (-1) ** (deg + 1)) / (deg + 1)
            got = np.sum(rule.weights * rule.points ** deg)
            assert abs(got - exact) < 1e-13, f"degree {deg}"

    def pg_equals_mixed():
        spec = problems.ej1d(elements=10)
        setup = ProblemSetup(spec)
        load = assembly.assemble_load(spec, setup.forms, 0.1)
        x_mix, _ = opttest.mixed_solve_oracle(setup.forms, 0.1, load)
        res = run_pipeline(setup, 0.1, "pg-dense", tol=1e-12)
        forms = setup.forms
        assert np.linalg.norm(res.x_full - x_mix) <= 1e-8 * np.linalg.norm(x_mix)

    def compression_roundtrip():
        rng = np.random.default_rng(3)
        m = rng.standard_normal((96, 80)) @ rng.standard_normal((80, 64))
        tree = hmat.create_tree(m, hmat.CompressionParams())
        x = rng.standard_normal((64, 5))
        assert np.abs(hmat.hmatvec(tree, x) - hmat.decompress(tree) @ x).max() < 1e-10

    def transpose_duality():
        rng = np.random.default_rng(4)
        m = rng.standard_normal((40, 30))
        tree = hmat.create_tree(m, hmat.CompressionParams(max_rank=8, threshold=1e-10))
        x, y = rng.standard_normal(30), rng.standard_normal(40)
        lhs = np.dot(hmat.hmatvec(tree, x), y)
        rhs = np.dot(x, hmat.hmatvec_transpose(tree, y))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1)

    check("partition-of-unity", partition_of_unity)
    check("quadrature-exactness", quadrature)
    check("pg-mixed-equivalence", pg_equals_mixed)
    check("hmat-matvec-consistency", compression_roundtrip)
    check("hmat-transpose-duality", transpose_duality)
    failed = 0
    for name, ok, msg in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}{': ' + msg if msg else ''}")
        failed += not ok
    return 1 if failed else 0


# -- argument parsing --------------------------------------------------------------


def _add_common(parser):
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--problem", choices=("ej1d", "ej2d", "helmholtz"))
    parser.add_argument("--mesh", help="elements, e.g. 16 or 26x10")
    parser.add_argument("--orders", help="trial,test polynomial orders, e.g. 2,3")
    parser.add_argument("--epsilon", type=float, help="EJ diffusion parameter")
    parser.add_argument("--kappa", type=float, help="Helmholtz wavenumber")
    parser.add_argument("--rank", type=int, help="compression max rank r")
    parser.add_argument("--delta", type=float, help="singular value threshold")
    parser.add_argument("--pipeline", choices=PIPELINES)
    parser.add_argument("--tol", type=float, help="GMRES relative tolerance")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--offline-dir", help="directory with offline artifacts")
    parser.add_argument("--mode", choices=("sigma", "factors"))
    parser.add_argument("--depth", type=int, help="surrogate schedule depth")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--grid", help="start,stop,count surrogate grid")
    parser.add_argument("--test-continuity", choices=("smooth", "c0"))
    parser.add_argument("--gram", choices=("h1", "h1-semi", "weighted-h1"))


def _build_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    direct = {"problem": "problem", "mesh": "mesh", "rank": "rank",
              "delta": "delta", "pipeline": "pipeline", "tol": "tol",
              "seed": "seed", "out": "out", "offline_dir": "offline_dir",
              "mode": "mode", "depth": "depth", "epochs": "epochs",
              "test_continuity": "test_continuity", "gram": "gram"}
    for arg_name, cfg_name in direct.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(cfg, cfg_name, value)
    if getattr(args, "orders", None):
        trial, _, test = args.orders.partition(",")
        cfg.trial_order = int(trial)
        if test:
            cfg.test_order = int(test)
    if getattr(args, "grid", None):
        start, stop, count = args.grid.split(",")
        cfg.grid_start, cfg.grid_stop = float(start), float(stop)
        cfg.grid_count = int(count)
    mu = getattr(args, "kappa", None) if cfg.problem == "helmholtz" \
        else getattr(args, "epsilon", None)
    if mu is None:
        mu = getattr(args, "epsilon", None) or getattr(args, "kappa", None)
    if mu is not None:
        cfg.mu = mu
    return cfg


def _parse_values(text) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pgstab",
        description="Stabilized Petrov-Galerkin solver with hierarchically "
                    "compressed optimal test functions")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("offline", "solve", "compress", "verify"):
        _add_common(sub.add_parser(name))
    sweep = sub.add_parser("sweep")
    _add_common(sweep)
    sweep.add_argument("--values", required=True,
                       help="comma-separated parameter values")
    sweep.add_argument("--pipelines",
                       help="comma-separated pipeline names")
    bench = sub.add_parser("bench")
    _add_common(bench)
    bench.add_argument("--values", required=True)

    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args)
        if args.command == "offline":
            summary = cmd_offline(cfg)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "solve":
            report = cmd_solve(cfg)
            print(json.dumps(report, indent=2, sort_keys=True))
        elif args.command == "sweep":
            pipelines = args.pipelines.split(",") if args.pipelines else None
            rows = cmd_sweep(cfg, _parse_values(args.values), pipelines)
            bad = [r for r in rows if r["status"] != "ok"]
            print(json.dumps({"rows": len(rows), "failures": len(bad)},
                             indent=2))
            return 1 if bad else 0
        elif args.command == "compress":
            stats = cmd_compress(cfg)
            print(json.dumps(stats, indent=2, sort_keys=True))
        elif args.command == "bench":
            summary = cmd_bench(cfg, _parse_values(args.values))
            print(json.dumps({"kernel_flop_ratios":
                              summary["kernel_flop_ratios"]}, indent=2))
        elif args.command == "verify":
            return cmd_verify(cfg)
        return 0
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
