"""Sample-set schema, bundled drop-test fixtures, designs of experiments and CSV I/O.

A sample set maps material parameter vectors to indentation depths (mm) per
impact case. Every set on disk is one CSV file::

    # rpclay sampleset v1; provenance=fixture_A1
    run_id,A,B,n,C,m,eps_dot_ref,A1,A2,A3,B0,B1,rho0,ise,depth_1,depth_2,depth_3

Optional ``ann_<case>`` columns carry surrogate predictions next to the solver
depths. Floats are written with ``repr`` so a load/save cycle is exact.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .constitutive import PARAM_COLUMNS, MaterialParams
from .errors import EmptyResultError, InvalidParameterError, SchemaError, UnknownFixtureError
from .solver import ImpactCase

SCHEMA_VERSION = 1
PROVENANCES = ("fixture_A1", "fixture_B1", "generated_oat", "generated_factorial",
               "generated_subset")
CASE_IDS = (1, 2, 3)

# Screened parameters in the order the one-at-a-time table lists them.
OAT_PARAMETERS = ("A1", "A2", "B", "n", "C", "eps_dot_ref", "ise", "m")
OAT_FACTORS = (0.25, 0.5, 2.0, 4.0)

FACTORIAL_LEVELS = {
    "B": (59.5, 119.0, 238.0, 476.0, 952.0),
    "n": (0.0725, 0.145, 0.29, 0.58, 1.16),
    "C": (0.0625, 0.125, 0.25, 0.5, 1.0),
}

_FIXTURE_FILES = {
    "fixture_A1": "table_a1.csv",
    "fixture_B1": "table_b1.csv",
}


@dataclass
class SampleRow:
    run_id: int
    params: MaterialParams
    depths: dict[int, float]
    predicted: dict[int, float] | None = None

    def __post_init__(self):
        for cid, d in self.depths.items():
            if d < 0:
                raise InvalidParameterError(f"run {self.run_id}: negative depth {d} for case {cid}")

    def is_complete(self, cases: Iterable[int] = CASE_IDS) -> bool:
        return all(c in self.depths and math.isfinite(self.depths[c]) for c in cases)


@dataclass
class SampleSet:
    rows: list[SampleRow]
    provenance: str
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise SchemaError(f"unknown provenance {self.provenance!r}")
        ids = [r.run_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError("run_ids must be unique")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def case_ids(self) -> tuple[int, ...]:
        found = sorted({c for r in self.rows for c in r.depths})
        return tuple(found)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.params.get(name) for r in self.rows], dtype=float)

    def features(self, names: Sequence[str] = ("B", "n", "C")) -> np.ndarray:
        return np.column_stack([self.column(n) for n in names])

    def depths(self, case: int) -> np.ndarray:
        return np.array([r.depths.get(case, math.nan) for r in self.rows], dtype=float)

    def predictions(self, case: int) -> np.ndarray:
        return np.array([(r.predicted or {}).get(case, math.nan) for r in self.rows])


# -- fixtures ----------------------------------------------------------------

def _fixture_path(filename: str):
    return resources.files("rpclay").joinpath("fixtures", filename)


def fixture_text(name: str) -> str:
    if name not in _FIXTURE_FILES:
        raise UnknownFixtureError(f"unknown fixture {name!r}; known: {sorted(_FIXTURE_FILES)}")
    return _fixture_path(_FIXTURE_FILES[name]).read_text(encoding="utf-8")


def load_fixture(name: str) -> SampleSet:
    """Published drop-test tables bundled with the package ("fixture_A1", "fixture_B1")."""
    return loads(fixture_text(name))


def load_cases() -> tuple[ImpactCase, ...]:
    text = _fixture_path("cases.csv").read_text(encoding="utf-8")
    rows = csv.DictReader(io.StringIO(text))
    return tuple(
        ImpactCase(int(r["id"]), float(r["diameter_mm"]), float(r["mass_g"]),
                   float(r["v0_m_s"]), float(r["ref_depth_mm"]), float(r["ref_tol_mm"]))
        for r in rows
    )


def load_defaults() -> MaterialParams:
    text = _fixture_path("defaults.csv").read_text(encoding="utf-8")
    values = {r["parameter"]: float(r["value"]) for r in csv.DictReader(io.StringIO(text))}
    return MaterialParams.from_flat(values)


# -- designs -----------------------------------------------------------------

def gen_oat_design(defaults: MaterialParams) -> list[MaterialParams]:
    """33 one-at-a-time variants: x1/4, x1/2, x2, x4 per screened parameter, then the baseline."""
    design = []
    for name in OAT_PARAMETERS:
        base = defaults.get(name)
        for f in OAT_FACTORS:
            design.append(defaults.updated(**{name: base * f}))
    design.append(defaults)
    return design


def gen_factorial_design(defaults: MaterialParams,
                         levels: dict[str, Sequence[float]] | None = None) -> list[MaterialParams]:
    """Full factorial over B, n, C in lexicographic (B, n, C) order."""
    levels = levels or FACTORIAL_LEVELS
    return [defaults.updated(B=b, n=n, C=c)
            for b, n, c in itertools.product(levels["B"], levels["n"], levels["C"])]


def subsample(sset: SampleSet, fraction: float, seed: int) -> SampleSet:
    """Seeded uniform draw of round(fraction*N) rows without replacement, original order kept."""
    if not 0 < fraction <= 1:
        raise InvalidParameterError(f"fraction must be in (0, 1], got {fraction}")
    k = round(fraction * len(sset))
    if k == 0:
        raise EmptyResultError(f"fraction {fraction} of {len(sset)} rows leaves no rows")
    if k == len(sset):
        return SampleSet(list(sset.rows), sset.provenance, dict(sset.meta))
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(sset), size=k, replace=False))
    return SampleSet([sset.rows[i] for i in picked], "generated_subset", dict(sset.meta))


def from_depths(mats: Sequence[MaterialParams], depths: np.ndarray,
                provenance: str, case_ids: Sequence[int] = CASE_IDS) -> SampleSet:
    rows = [SampleRow(i + 1, m, {c: float(depths[i, j]) for j, c in enumerate(case_ids)})
            for i, m in enumerate(mats)]
    return SampleSet(rows, provenance)


# -- CSV persistence ---------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def dumps(sset: SampleSet) -> str:
    cases = sset.case_ids
    with_ann = any(r.predicted for r in sset.rows)
    header = ["run_id", *PARAM_COLUMNS, *(f"depth_{c}" for c in cases)]
    if with_ann:
        header += [f"ann_{c}" for c in cases]
    meta = "".join(f"; {k}={v}" for k, v in sorted(sset.meta.items()))
    buf = io.StringIO()
    buf.write(f"# rpclay sampleset v{SCHEMA_VERSION}; provenance={sset.provenance}{meta}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in sset.rows:
        flat = r.params.to_flat()
        line = [str(r.run_id), *(_fmt(flat[p]) for p in PARAM_COLUMNS)]
        line += [_fmt(r.depths.get(c, math.nan)) for c in cases]
        if with_ann:
            line += [_fmt((r.predicted or {}).get(c, math.nan)) for c in cases]
        w.writerow(line)
    return buf.getvalue()


def _parse_banner(line: str) -> tuple[str, dict[str, str]]:
    parts = [p.strip() for p in line.lstrip("#").split(";")]
    if not parts or parts[0] != f"rpclay sampleset v{SCHEMA_VERSION}":
        raise SchemaError(f"unsupported sample-set banner: {line.strip()!r}")
    kv = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
    provenance = kv.pop("provenance", None)
    if provenance is None:
        raise SchemaError("sample-set banner lacks provenance")
    return provenance, kv


def loads(text: str, cases: Sequence[int] = CASE_IDS) -> SampleSet:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise SchemaError("missing '# rpclay sampleset' banner line")
    provenance, meta = _parse_banner(lines[0])
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("missing header row") from None
    required = ["run_id", *PARAM_COLUMNS, *(f"depth_{c}" for c in cases)]
    for col in required:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    known = set(required) | {f"ann_{c}" for c in cases}
    extra = [c for c in header if c not in known]
    if extra:
        raise SchemaError(f"unexpected column(s) {extra}")
    pos = {name: i for i, name in enumerate(header)}
    ann_cols = [c for c in cases if f"ann_{c}" in pos]
    rows = []
    for lineno, rec in enumerate(reader, start=3):
        if len(rec) != len(header):
            raise SchemaError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
        params = MaterialParams.from_flat({p: float(rec[pos[p]]) for p in PARAM_COLUMNS})
        depths = {c: float(rec[pos[f"depth_{c}"]]) for c in cases}
        pred = {c: float(rec[pos[f"ann_{c}"]]) for c in ann_cols} or None
        rows.append(SampleRow(int(rec[pos["run_id"]]), params, depths, pred))
    return SampleSet(rows, provenance, meta)


def save(sset: SampleSet, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps(sset), encoding="utf-8", newline="\n")
    return path


def load(path: str | Path, cases: Sequence[int] = CASE_IDS) -> SampleSet:
    return loads(Path(path).read_text(encoding="utf-8"), cases)
