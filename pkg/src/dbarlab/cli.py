"""Command-line entry point: `dbarlab <command> --config run.yaml`."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .assembler import (FormError, RejectedInput, TransferBlocks, UnsupportedDegree, form_norm,
                        slot_norms, solve_box, solve_dbar)
from .io import (ConfigError, RunConfig, load_config, read_form, read_spectrum, write_csv, write_form,
                 write_json, write_labels_csv, write_report, write_spectrum)
from .mesh import MeshError
from .solver import SolverError
from .spectrum import SigmaLabel, sphere_stub_spectrum, validate_spectrum

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_REJECTED, EXIT_VIOLATED, EXIT_INCONCLUSIVE = 0, 2, 3, 4, 5, 6
EXPERIMENTS = ("noncompact", "negreg", "disc", "hypo", "sweep", "converge")
VERDICT_EXIT = {ex.REPRODUCED: EXIT_OK, ex.VIOLATED: EXIT_VIOLATED, ex.INCONCLUSIVE: EXIT_INCONCLUSIVE}

# experiment parameters given as [t, s] pairs
_POINT_PARAMS = {"center", "ball_center", "z0", "wave"}


def _err(msg: str):
    print(f"dbarlab: {msg}", file=sys.stderr)


def _label(params: dict, cfg: RunConfig, default=(1, 2.0, 1.0)) -> SigmaLabel:
    d = params.pop("label", {}) or {}
    return SigmaLabel(int(d.get("q", default[0])), float(d.get("gamma", default[1])),
                      float(d.get("lambda", default[2])), float(d.get("nu", cfg.nu)))


def _kwargs(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if k in _POINT_PARAMS and isinstance(v, (list, tuple)):
            v = complex(float(v[0]), float(v[1]))
        elif isinstance(v, list):
            v = tuple(v)
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_solve_box(cfg: RunConfig) -> int:
    if cfg.input is None:
        raise ConfigError("solve-box needs `input:` naming a form CSV")
    cx, _ = cfg.build_spectrum()
    space = cfg.build_space()
    f = read_form(cfg.path(cfg.input), cx, space)
    if f.q != cfg.q:
        raise ConfigError(f"input form has degree {f.q}, config says q={cfg.q}")
    mode = cfg.solver.get("mode", "plus_one")
    sol = solve_box(f, TransferBlocks.from_complex(cx), mode)
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    write_form(out / "solution.csv", sol.form)
    if mode == "kernel_orthogonal":
        write_form(out / "kernel_part.csv", sol.kernel_part)
    labels = {lab.key: lab for lab in cx.labels()}
    rows = [[slot, *key, labels[key].gamma, labels[key].lam, r] for (slot, key), r in sorted(sol.constants.items())]
    write_csv(out / "constants.csv", ["slot", "block", "level", "index", "gamma", "lambda", "ratio"], rows)
    write_json(out / "residuals.json", {"mode": mode, "q": f.q, "residual": sol.residual,
                                        "input_norm": form_norm(f), "solution_norm": form_norm(sol.form)})
    print(f"solve-box: {len(sol.constants)} slots, residual {sol.residual:.3e}")
    return EXIT_OK


def cmd_solve_dbar(cfg: RunConfig) -> int:
    if cfg.input is None:
        raise ConfigError("solve-dbar needs `input:` naming a form CSV")
    cx, _ = cfg.build_spectrum()
    space = cfg.build_space()
    data = read_form(cfg.path(cfg.input), cx, space)
    if data.q != cfg.q:
        raise ConfigError(f"input form has degree {data.q}, config says q={cfg.q}")
    out = cfg.output
    try:
        sol = solve_dbar(data, TransferBlocks.from_complex(cx), tol=float(cfg.solver.get("tol", 1e-8)),
                         solver_tol=float(cfg.solver.get("solver_tol", 1e-7)))
    except RejectedInput as exc:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "rejected.json", exc.diagnostics)
        _err(str(exc))
        return EXIT_REJECTED
    out.mkdir(parents=True, exist_ok=True)
    write_form(out / "solution.csv", sol.phi)
    norms = slot_norms(sol.phi)
    rows = [[slot, *key, v] for (slot, key), v in sorted(norms.items())]
    write_csv(out / "slot_norms.csv", ["slot", "block", "level", "index", "norm"], rows)
    write_json(out / "residuals.json", {"q": data.q, "residual": sol.residual, "ratio": sol.ratio})
    print(f"solve-dbar: residual {sol.residual:.3e}, |phi|/|data| = {sol.ratio:.6g}")
    return EXIT_OK


def run_experiment(name: str, cfg: RunConfig) -> ex.ExperimentReport:
    params = dict(cfg.experiments.get(name) or {})
    if name == "noncompact":
        return ex.run_noncompactness(_label(params, cfg), **_kwargs(params))
    if name == "negreg":
        return ex.run_negregularity(_label(params, cfg), **_kwargs(params))
    if name == "disc":
        return ex.run_disc_nonsurjectivity(**_kwargs(params))
    if name == "hypo":
        with_cohomology, _ = cfg.build_spectrum()
        _, _, without = sphere_stub_spectrum(cfg.n, int(params.pop("lambda_cap", 3)), nu=cfg.nu)
        return ex.run_hypoellipticity_demo(with_cohomology, without, cfg.q, **_kwargs(params))
    if name == "sweep":
        kind = params.pop("kind", "basic")
        count = int(params.pop("labels", 50))
        _, _, stub = sphere_stub_spectrum(cfg.n, int(params.pop("lambda_cap", 6)), nu=cfg.nu)
        labels = sorted(stub.labels(), key=lambda l: (l.gamma, abs(l.lam), l.lam, l.q, l.key))[:count]
        params.setdefault("h_levels", cfg.mesh["h"] if len(cfg.mesh["h"]) > 1 else (0.1, 0.07))
        params.setdefault("seed", cfg.seed)
        return ex.run_estimate_sweep(kind, labels, **_kwargs(params))
    if name == "converge":
        label = _label(params, cfg, default=(1, 1.0, 0.5))
        params.setdefault("h0", cfg.mesh["h"][0])
        return ex.run_convergence(label, **_kwargs(params))
    raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")


def cmd_experiment(name: str, cfg: RunConfig) -> int:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    try:
        report = run_experiment(name, cfg)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from exc
    write_report(cfg.output / name, report)
    print(f"{name}: {report.verdict}")
    return VERDICT_EXIT[report.verdict]


def cmd_spectrum_synth(cfg: RunConfig) -> int:
    cx, meta = cfg.build_spectrum()
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_spectrum(cfg.output / "spectrum.json", cx, meta)
    write_labels_csv(cfg.output / "labels.csv", cx.labels())
    rep = validate_spectrum(cx.labels(), meta)
    print(f"spectrum: {len(cx.labels())} labels, constraints {'pass' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_CONFIG


def cmd_spectrum_validate(path: Path, out: Path | None) -> int:
    cx, meta = read_spectrum(path)
    rep = validate_spectrum(cx.labels(), meta)
    rows = [[c, "" if l is None else l.q, "" if l is None else l.gamma, "" if l is None else l.lam, m]
            for c, l, m in rep.violations]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "violations.csv", ["constraint", "q", "gamma", "lambda", "message"], rows)
        write_json(out / "validation.json", {"passed": rep.passed, "labels": len(cx.labels()),
                                             "constraints": sorted(rep.constraints)})
    for c, _, m in rep.violations:
        _err(f"constraint {c}: {m}")
    print(f"spectrum {path}: {len(cx.labels())} labels, {len(rep.violations)} violations")
    return EXIT_OK if rep.passed else EXIT_CONFIG


def cmd_mesh_build(cfg: RunConfig) -> int:
    for h in cfg.mesh["h"]:
        mesh = cfg.build_mesh(h)
        d = cfg.output / f"mesh_h{h:g}"
        d.mkdir(parents=True, exist_ok=True)
        write_csv(d / "nodes.csv", ["node", "t", "s", "boundary"],
                  [[i, p[0], p[1], int(b)] for i, (p, b) in enumerate(zip(mesh.nodes, mesh.boundary))])
        write_csv(d / "triangles.csv", ["triangle", "a", "b", "c"],
                  [[i, *map(int, tri)] for i, tri in enumerate(mesh.triangles)])
        write_json(d / "mesh.json", {"h": h, "nodes": mesh.n_nodes, "triangles": mesh.n_triangles,
                                     "boundary_nodes": int(np.sum(mesh.boundary)),
                                     "min_area": float(mesh.areas().min())})
        print(f"mesh h={h:g}: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dbarlab", description="Reduced d-bar Neumann solvers and experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", "-c", type=Path, help="YAML run configuration (defaults if omitted)")
        sp.add_argument("--output", "-o", type=Path, help="override the output directory")
        return sp

    with_config(sub.add_parser("solve-box", help="solve (1 + box) u = f or box u = f - Pf"))
    with_config(sub.add_parser("solve-dbar", help="solve dbar phi = data with phi orthogonal to ker dbar"))
    e = with_config(sub.add_parser("experiment", help="run one verification experiment"))
    e.add_argument("name", help=", ".join(EXPERIMENTS))
    s = sub.add_parser("spectrum", help="synthesize or validate a spectrum file")
    ssub = s.add_subparsers(dest="action", required=True)
    with_config(ssub.add_parser("synth", help="write the configured spectrum to spectrum.json"))
    v = ssub.add_parser("validate", help="check a spectrum file against the spectral constraints")
    v.add_argument("file", type=Path)
    v.add_argument("--output", "-o", type=Path)
    m = sub.add_parser("mesh", help="mesh the configured domain")
    msub = m.add_subparsers(dest="action", required=True)
    with_config(msub.add_parser("build", help="write nodes and triangles for each mesh size"))
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.output is not None:
        cfg.output = args.output
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "spectrum" and args.action == "validate":
            return cmd_spectrum_validate(args.file, args.output)
        cfg = _config(args)
        if args.command == "solve-box":
            return cmd_solve_box(cfg)
        if args.command == "solve-dbar":
            return cmd_solve_dbar(cfg)
        if args.command == "experiment":
            return cmd_experiment(args.name, cfg)
        if args.command == "spectrum":
            return cmd_spectrum_synth(cfg)
        return cmd_mesh_build(cfg)
    except (ConfigError, UnsupportedDegree) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except (FormError, MeshError) as exc:
        _err(f"invalid input: {exc}")
        return EXIT_CONFIG
    except (SolverError, np.linalg.LinAlgError, RuntimeError, ArithmeticError) as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except ValueError as exc:
        _err(f"invalid configuration: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
