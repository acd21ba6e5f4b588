"""Run configuration, spectrum and form files, report emission.

Config files are YAML mappings; see README.md for the schema. All numeric output is
written with `repr` of Python floats and JSON with sorted keys, so equal inputs give
byte-identical files.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .assembler import FourierForm
from .experiments import ExperimentReport, Table, _plain
from .fem import FESpace
from .halfplane import CoefficientField
from .hyperbolic import DomainSpec
from .mesh import Mesh, build_mesh
from .solver import function_space
from .spectrum import SpectralComplex, SpectrumMeta, meta_for, sphere_stub_spectrum, synth_complex

SCHEMA_VERSION = 1
THREADS_ENV = "DBARLAB_THREADS"


class ConfigError(ValueError):
    """The run configuration or one of the files it names is invalid."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    n: int = 4
    q: int = 1
    nu: float = 0.0
    seed: int = 0
    threads: int = 1
    output: Path = Path("dbarlab-out")
    domain: dict = field(default_factory=lambda: {"kind": "disc", "center": [0.0, 2.0], "radius": 1.0})
    spectrum: dict = field(default_factory=lambda: {"kind": "synth", "dims": [2, 3, 2],
                                                    "lambdas": [0.0, 1.0, 2.5], "seed": 3})
    mesh: dict = field(default_factory=lambda: {"h": [0.1], "degree": 1})
    solver: dict = field(default_factory=lambda: {"tol": 1e-8, "solver_tol": 1e-7, "mode": "plus_one"})
    experiments: dict = field(default_factory=dict)
    input: Path | None = None
    base: Path = Path(".")

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 3:
            raise ConfigError(f"n must be an integer >= 3 (got {self.n!r})")
        if not isinstance(self.q, int) or not 1 <= self.q <= self.n - 2:
            raise ConfigError(f"q must satisfy 1 <= q <= n-2 = {self.n - 2} (got q={self.q!r}); "
                              "the solvers assume the form degree lies strictly inside that range")
        if self.nu < 0:
            raise ConfigError("nu must be non-negative")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        hs = self.mesh.get("h", [0.1])
        self.mesh["h"] = [float(h) for h in (hs if isinstance(hs, list) else [hs])]
        if not self.mesh["h"] or min(self.mesh["h"]) <= 0:
            raise ConfigError("mesh.h must list positive sizes")
        if self.mesh.get("degree", 1) not in (1, 2):
            raise ConfigError("mesh.degree must be 1 or 2")
        mode = self.solver.get("mode", "plus_one")
        if mode not in ("plus_one", "kernel_orthogonal"):
            raise ConfigError(f"solver.mode must be plus_one or kernel_orthogonal (got {mode!r})")

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    # -- derived objects

    def build_domain(self) -> DomainSpec:
        d = self.domain
        kind = d.get("kind", "disc")
        if kind == "disc":
            t, s = d.get("center", [0.0, 2.0])
            return DomainSpec.disc(complex(t, s), float(d.get("radius", 1.0)), nu=self.nu)
        if kind == "polygon":
            return DomainSpec.from_vertices(d["vertices"], nu=self.nu)
        if kind == "file":
            data = _load_mapping(self.path(d["file"]))
            return DomainSpec.from_vertices(data["vertices"], nu=self.nu)
        raise ConfigError(f"unknown domain kind {kind!r}")

    def build_spectrum(self) -> tuple[SpectralComplex, SpectrumMeta]:
        sp = self.spectrum
        kind = sp.get("kind", "synth")
        gamma0 = float(sp.get("gamma0", 1.0))
        if kind == "synth":
            cx = synth_complex(self.n, sp.get("dims", [2, 3, 2]), sp.get("lambdas", [0.0, 1.0, 2.5]),
                               int(sp.get("seed", self.seed)), nu=self.nu)
            return cx, meta_for(cx, gamma0)
        if kind == "stub":
            _, meta, cx = sphere_stub_spectrum(self.n, int(sp.get("lambda_cap", 3)), nu=self.nu)
            return cx, meta
        if kind == "file":
            return read_spectrum(self.path(sp["file"]))
        raise ConfigError(f"unknown spectrum kind {kind!r}")

    def build_mesh(self, h: float | None = None) -> Mesh:
        return build_mesh(self.build_domain(), self.mesh["h"][0] if h is None else h)

    def build_space(self, h: float | None = None) -> FESpace:
        return function_space(self.build_mesh(h), int(self.mesh.get("degree", 1)))


_FIELDS = {"n", "q", "nu", "seed", "threads", "output", "domain", "spectrum", "mesh", "solver",
           "experiments", "input"}


def _load_mapping(path: Path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping")
    return data


def config_from_mapping(data: dict, base: Path = Path(".")) -> RunConfig:
    unknown = set(data) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kw = dict(data)
    for key in ("output", "input"):
        if kw.get(key) is not None:
            kw[key] = Path(kw[key])
    defaults = RunConfig.__dataclass_fields__
    for key in ("domain", "spectrum", "mesh", "solver"):
        if key in kw:
            merged = defaults[key].default_factory()
            if kw[key].get("kind", merged.get("kind")) != merged.get("kind"):
                merged = {}
            merged.update(kw[key])
            kw[key] = merged
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            kw["threads"] = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from exc
    try:
        cfg = RunConfig(base=base, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if not cfg.output.is_absolute():
        cfg.output = base / cfg.output
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return config_from_mapping(_load_mapping(path), base=path.parent)


# ---------------------------------------------------------------------------
# spectrum files


def write_spectrum(path, cx: SpectralComplex, meta: SpectrumMeta):
    blocks = []
    for b in cx.blocks:
        blocks.append({"lambda": b.lam, "dims": list(b.dims),
                       "re": [np.real(D).tolist() for D in b.differentials],
                       "im": [np.imag(D).tolist() for D in b.differentials]})
    data = {"schema": SCHEMA_VERSION, "n": cx.n, "nu": cx.nu, "gamma0": meta.gamma0,
            "c_growth": meta.c_growth, "blocks": blocks}
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def read_spectrum(path) -> tuple[SpectralComplex, SpectrumMeta]:
    data = _load_mapping(Path(path))
    try:
        blocks = {}
        for b in data["blocks"]:
            ds = [np.array(r, dtype=float) + 1j * np.array(i, dtype=float) for r, i in zip(b["re"], b["im"])]
            dims = [int(d) for d in b["dims"]]
            ds = [D.reshape(dims[q + 1], dims[q]) for q, D in enumerate(ds)]
            blocks[float(b["lambda"])] = (dims, ds)
        cx = SpectralComplex.from_differentials(int(data["n"]), blocks, float(data.get("nu", 0.0)))
        meta = SpectrumMeta(cx.n, float(data.get("gamma0", 1.0)), float(data.get("c_growth", 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed spectrum file {path}: {exc}") from exc
    return cx, meta


def write_labels_csv(path, labels):
    rows = [[l.q, l.gamma, l.lam, l.nu, "" if l.gamma_bar is None else l.gamma_bar, *l.key] for l in labels]
    write_csv(path, ["q", "gamma", "lambda", "nu", "gamma_bar", "block", "level", "index"], rows)


# ---------------------------------------------------------------------------
# forms as CSV: one row per (slot, label, degree of freedom)


FORM_COLUMNS = ["slot", "block", "level", "index", "dof", "t", "s", "re", "im"]


def write_form(path, phi: FourierForm):
    xy = phi.space.dof_coords
    rows = []
    for slot, lab, f in phi.slots():
        for i, v in enumerate(f.values):
            rows.append([slot, *lab.key, i, xy[i, 0], xy[i, 1], v.real, v.imag])
    write_csv(path, FORM_COLUMNS, rows, header=[("q", phi.q)])


def read_form(path, spectrum: SpectralComplex, space: FESpace) -> FourierForm:
    by_key = {lab.key: lab for lab in spectrum.labels()}
    q = None
    slots = {"top": {}, "bot": {}}
    try:
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("# q="):
                    q = int(line.split("=", 1)[1])
                elif not line.startswith("#"):
                    break
            fh.seek(0)
            reader = csv.DictReader(row for row in fh if not row.startswith("#"))
            for row in reader:
                key = (int(row["block"]), int(row["level"]), int(row["index"]))
                if key not in by_key:
                    raise ConfigError(f"{path}: label {key} is not in the spectrum")
                vals = slots[row["slot"]].setdefault(by_key[key], np.zeros(space.n_dofs, dtype=complex))
                vals[int(row["dof"])] = complex(float(row["re"]), float(row["im"]))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except (KeyError, ValueError, IndexError) as exc:
        raise ConfigError(f"malformed form file {path}: {exc}") from exc
    if q is None:
        raise ConfigError(f"{path}: missing '# q=' header line")
    return FourierForm(q, {l: CoefficientField(space, v) for l, v in slots["top"].items()},
                       {l: CoefficientField(space, v) for l, v in slots["bot"].items()}, spectrum, space)


# ---------------------------------------------------------------------------
# output


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, columns, rows, header=()):
    with open(path, "w", newline="") as fh:
        for k, v in header:
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(x) for x in r])


def write_json(path, data):
    Path(path).write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")


def _plot_spec(name: str, table: Table) -> dict | None:
    """Vega-Lite line chart of the first numeric column against the last one."""
    if len(table.columns) < 2 or not table.rows:
        return None
    x, y = table.columns[0], table.columns[-1]
    return {"$schema": "https://vega.github.io/schema/vega-lite/v5.json",
            "data": {"url": f"{name}.csv", "format": {"type": "csv"}},
            "mark": {"type": "line", "point": True},
            "encoding": {"x": {"field": x, "type": "quantitative"},
                         "y": {"field": y, "type": "quantitative"}}}


def write_report(directory, report: ExperimentReport) -> Path:
    """report.json, one CSV per table and a Vega-Lite plot spec beside each CSV."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(report.to_json() + "\n")
    for name, table in sorted(report.tables.items()):
        rows = [[_flat(c) for c in r] for r in table.rows]
        write_csv(d / f"{name}.csv", table.columns, rows)
        spec = _plot_spec(name, table)
        if spec is not None:
            write_json(d / f"{name}.vl.json", spec)
    return d


def _flat(x):
    if isinstance(x, (complex, np.complexfloating)):
        return f"{float(np.real(x))!r}{float(np.imag(x)):+}j"
    if isinstance(x, (list, tuple, np.ndarray)):
        return ";".join(_cell(v) for v in np.ravel(x))
    return x
