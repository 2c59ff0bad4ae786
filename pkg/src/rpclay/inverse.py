"""Exhaustive inverse search over a (B, n, C) grid through per-case surrogates.

Every grid point is pushed through the three case surrogates, scored against
the reference depths, and filtered twice: per case by relative error, then
jointly. The lowest-scoring joint candidates are re-run through the forward
solver to pick the final parameter set.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import mlp
from .constitutive import MaterialParams
from .dataset import SampleSet, subsample
from .errors import EmptySelectionError, OverflowGridError, RpclayError
from .solver import DEFAULT_CASES, ImpactCase, SolverConfig, simulate

DEFAULT_REFS = (16.0, 25.0, 19.0)
FEATURES = ("B", "n", "C")


@dataclass(frozen=True)
class GridSpec:
    mins: tuple[float, float, float] = (59.5, 0.0725, 0.0625)
    maxs: tuple[float, float, float] = (952.0, 1.16, 1.0)
    levels: int = 100
    max_points: int = 10_000_000

    def __post_init__(self):
        if len(self.mins) != 3 or len(self.maxs) != 3:
            raise ValueError("GridSpec bounds need three components (B, n, C)")
        if any(lo >= hi for lo, hi in zip(self.mins, self.maxs)):
            raise ValueError(f"mins {self.mins} must be below maxs {self.maxs}")
        if self.levels < 2:
            raise ValueError("levels must be >= 2")


class Grid:
    """Lazily enumerated linear grid in lexicographic (i, j, k) order."""

    def __init__(self, spec: GridSpec):
        if spec.levels ** 3 > spec.max_points:
            raise OverflowGridError(
                f"{spec.levels}^3 = {spec.levels ** 3} points exceeds cap {spec.max_points}")
        self.spec = spec
        self.levels = spec.levels
        self.axes = [np.linspace(lo, hi, spec.levels) for lo, hi in zip(spec.mins, spec.maxs)]

    def __len__(self) -> int:
        return self.levels ** 3

    def unravel(self, flat):
        L = self.levels
        flat = np.asarray(flat)
        return flat // (L * L), (flat // L) % L, flat % L

    def ravel(self, i: int, j: int, k: int) -> int:
        return (i * self.levels + j) * self.levels + k

    def params(self, flat) -> np.ndarray:
        i, j, k = self.unravel(flat)
        return np.stack([self.axes[0][i], self.axes[1][j], self.axes[2][k]], axis=-1)

    def at(self, i: int, j: int, k: int) -> tuple[float, float, float]:
        return (float(self.axes[0][i]), float(self.axes[1][j]), float(self.axes[2][k]))

    def nearest(self, point: Sequence[float]) -> tuple[int, int, int]:
        return tuple(int(np.argmin(np.abs(ax - p))) for ax, p in zip(self.axes, point))

    def chunks(self, size: int = 131072) -> Iterator[tuple[int, int]]:
        n = len(self)
        for start in range(0, n, size):
            yield start, min(start + size, n)

    def __iter__(self) -> Iterator[tuple[tuple[int, int, int], tuple[float, float, float]]]:
        L = self.levels
        for i in range(L):
            for j in range(L):
                for k in range(L):
                    yield (i, j, k), self.at(i, j, k)


def build_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


def objective(k1, k2, k3, refs: Sequence[float] = DEFAULT_REFS):
    """Mean absolute depth mismatch (mm) over the three cases; works elementwise."""
    r1, r2, r3 = refs
    return (np.abs(r1 - np.asarray(k1)) + np.abs(r2 - np.asarray(k2))
            + np.abs(r3 - np.asarray(k3))) / 3.0


@dataclass
class SweepResult:
    grid: Grid
    preds: np.ndarray  # (N, 3) predicted depth per case, mm
    score: np.ndarray  # (N,)
    refs: tuple[float, ...]


def sweep(models: Sequence, grid: Grid, refs: Sequence[float] = DEFAULT_REFS,
          chunk: int = 131072, jobs: int = 1) -> SweepResult:
    """Evaluate all grid points through the per-case surrogates.

    ``models`` are MlpModel instances or any callables mapping an (N, 3)
    parameter array to (N,) depths. Chunks write disjoint slices, so the
    merged result does not depend on evaluation order.
    """
    n = len(grid)
    preds = np.empty((n, len(models)))

    def predictor(m):
        return (lambda X: mlp.forward(m, X)) if isinstance(m, mlp.MlpModel) else m

    fns = [predictor(m) for m in models]

    def work(bounds):
        start, stop = bounds
        X = grid.params(np.arange(start, stop))
        for c, f in enumerate(fns):
            preds[start:stop, c] = f(X)

    bounds = list(grid.chunks(chunk))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(work, bounds))
    else:
        for b in bounds:
            work(b)
    score = objective(preds[:, 0], preds[:, 1], preds[:, 2], refs)
    return SweepResult(grid, preds, score, tuple(refs))


@dataclass
class Candidate:
    idx: tuple[int, int, int]
    params: tuple[float, float, float]
    k1: float
    k2: float
    k3: float
    score: float

    @property
    def preds(self) -> tuple[float, float, float]:
        return (self.k1, self.k2, self.k3)

    def as_dict(self) -> dict:
        B, n, C = self.params
        return {"idx": list(self.idx), "B": B, "n": n, "C": C,
                "k1": self.k1, "k2": self.k2, "k3": self.k3, "score": self.score}


@dataclass
class InverseResult:
    refs: tuple[float, ...]
    per_case_low_error: dict[int, np.ndarray]  # flat indices, best first
    common: np.ndarray  # flat indices, best first
    top_k: list[Candidate]
    per_case_cap: float
    common_cap: float
    grid_spec: GridSpec
    validation: "ValidationReport | None" = None
    sweep_stats: dict = field(default_factory=dict)
    common_rows: np.ndarray | None = field(default=None, repr=False)  # (len(common), 4)

    def to_dict(self) -> dict:
        return {
            "format": "rpclay-inverse",
            "version": 1,
            "refs": list(self.refs),
            "grid": {"mins": list(self.grid_spec.mins), "maxs": list(self.grid_spec.maxs),
                     "levels": self.grid_spec.levels},
            "per_case_cap": self.per_case_cap,
            "common_cap": self.common_cap,
            "per_case_counts": {str(c): int(len(v)) for c, v in self.per_case_low_error.items()},
            "common_count": int(len(self.common)),
            "sweep": self.sweep_stats,
            "top_k": [c.as_dict() for c in self.top_k],
        }

    def common_csv(self, grid: Grid | None = None) -> str:
        grid = grid or Grid(self.grid_spec)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["flat", "i", "j", "k", "B", "n", "C", "k1", "k2", "k3", "score"])
        P = grid.params(self.common)
        I, J, K = grid.unravel(self.common)
        rows = self.common_rows if self.common_rows is not None else np.full((len(self.common), 4), np.nan)
        for f, i, j, k, p, r in zip(self.common, I, J, K, P, rows):
            w.writerow([int(f), int(i), int(j), int(k), *(repr(float(x)) for x in p),
                        *(repr(float(x)) for x in r)])
        return buf.getvalue()


def candidate_from_dict(d: dict) -> Candidate:
    return Candidate(tuple(d["idx"]), (d["B"], d["n"], d["C"]),
                     d["k1"], d["k2"], d["k3"], d["score"])


def select(sw: SweepResult, per_case_cap: float = 0.10, common_cap: float = 0.11,
           k: int = 10, absolute: bool = False) -> InverseResult:
    """Keep low-error candidates per case and jointly; rank the joint set by score.

    Errors are relative to the reference depth unless ``absolute`` is set, in
    which case both caps are in mm. Ties are broken by grid index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if per_case_cap < 0 or common_cap < 0:
        raise ValueError("error caps must be >= 0")
    refs = np.asarray(sw.refs, dtype=float)
    err = np.abs(sw.preds - refs)
    if not absolute:
        err = err / refs
    flat = np.arange(len(sw.score))
    # strictly under the cap, except that an exact match always qualifies
    ok = (err < per_case_cap) | (err == 0.0)
    per_case = {}
    for c in range(err.shape[1]):
        hit = np.flatnonzero(ok[:, c])
        per_case[c + 1] = hit[np.lexsort((flat[hit], err[hit, c]))]
    mean_err = err.mean(axis=1)
    joint = np.all(ok, axis=1) & ((mean_err < common_cap) | (mean_err == 0.0))
    common = np.flatnonzero(joint)
    if common.size == 0:
        raise EmptySelectionError(
            f"no candidate within {per_case_cap} per case and {common_cap} on average")
    common = common[np.lexsort((common, sw.score[common]))]
    top = []
    for f in common[:k]:
        i, j, kk = (int(v) for v in sw.grid.unravel(int(f)))
        top.append(Candidate((i, j, kk), sw.grid.at(i, j, kk),
                             *(float(v) for v in sw.preds[f]), float(sw.score[f])))
    stats = {"n_points": int(len(sw.score)), "min_score": float(sw.score.min()),
             "mean_score": float(sw.score.mean())}
    rows = np.column_stack([sw.preds[common], sw.score[common]])
    return InverseResult(tuple(sw.refs), per_case, common, top, per_case_cap, common_cap,
                         sw.grid.spec, sweep_stats=stats, common_rows=rows)


# -- validation --------------------------------------------------------------

@dataclass
class ValidationRow:
    label: str
    params: tuple[float, float, float]
    ann: tuple[float, ...] | None
    solver: tuple[float, ...]
    refs: tuple[float, ...]
    error: str | None = None

    @property
    def ann_abs_error(self) -> tuple[float, ...] | None:
        if self.ann is None:
            return None
        return tuple(abs(a - s) for a, s in zip(self.ann, self.solver))

    @property
    def ann_rel_error(self) -> tuple[float, ...] | None:
        if self.ann is None:
            return None
        return tuple(abs(a - s) / s for a, s in zip(self.ann, self.solver))

    @property
    def rel_error(self) -> tuple[float, ...]:
        return tuple(abs(s - r) / r for s, r in zip(self.solver, self.refs))

    @property
    def mean_rel_error(self) -> float:
        if self.error is not None:
            return math.nan
        return float(np.mean(self.rel_error))

    def as_dict(self) -> dict:
        B, n, C = self.params
        d = {"label": self.label, "B": B, "n": n, "C": C,
             "solver": list(self.solver), "rel_error": list(self.rel_error),
             "mean_rel_error": self.mean_rel_error}
        if self.ann is not None:
            d["ann"] = list(self.ann)
            d["ann_abs_error"] = list(self.ann_abs_error)
        if self.error:
            d["error"] = self.error
        return d


@dataclass
class ValidationReport:
    rows: list[ValidationRow]
    optimum: ValidationRow
    default: ValidationRow | None

    def to_dict(self) -> dict:
        return {
            "format": "rpclay-validation",
            "version": 1,
            "optimum": self.optimum.as_dict(),
            "default": self.default.as_dict() if self.default else None,
            "before_mean_rel_error": self.default.mean_rel_error if self.default else None,
            "after_mean_rel_error": self.optimum.mean_rel_error,
            "rows": [r.as_dict() for r in self.rows],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = len(self.optimum.solver)
        w.writerow(["label", "B", "n", "C",
                    *(f"ann_{c + 1}" for c in range(n)), *(f"solver_{c + 1}" for c in range(n)),
                    *(f"abs_err_{c + 1}" for c in range(n)), *(f"rel_err_{c + 1}" for c in range(n)),
                    "mean_rel_error"])
        for r in self.rows + ([self.default] if self.default else []):
            ann = r.ann or (math.nan,) * n
            abs_e = r.ann_abs_error or (math.nan,) * n
            w.writerow([r.label, *(repr(float(x)) for x in r.params), *map(repr, ann),
                        *map(repr, r.solver), *map(repr, abs_e), *map(repr, r.rel_error),
                        repr(r.mean_rel_error)])
        return buf.getvalue()


def _solve(label, bnc, ann, base, cases, cfg, refs):
    mat = base.updated(B=bnc[0], n=bnc[1], C=bnc[2])
    try:
        depths = tuple(simulate(c, mat, cfg).depth for c in cases)
        return ValidationRow(label, tuple(bnc), ann, depths, tuple(refs))
    except RpclayError as exc:
        nan = (math.nan,) * len(cases)
        return ValidationRow(label, tuple(bnc), ann, nan, tuple(refs), f"{type(exc).__name__}: {exc}")


def validate(result: InverseResult, cases: Sequence[ImpactCase] = DEFAULT_CASES,
             cfg: SolverConfig | None = None, base: MaterialParams | None = None,
             include_default: bool = True, jobs: int = 1) -> ValidationReport:
    """Re-run the forward solver on every top-k candidate and pick the best one."""
    if not result.top_k:
        raise EmptySelectionError("no top-k candidates to validate")
    cfg = cfg or SolverConfig()
    base = base or MaterialParams()
    refs = result.refs

    def run(item):
        rank_, cand = item
        return _solve(f"top{rank_ + 1}", cand.params, cand.preds, base, cases, cfg, refs)

    items = list(enumerate(result.top_k))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, items))
    else:
        rows = [run(it) for it in items]
    ok = [r for r in rows if r.error is None]
    if not ok:
        raise EmptySelectionError("forward solver failed on every top-k candidate")
    optimum = min(ok, key=lambda r: r.mean_rel_error)  # min keeps the first on ties
    default = None
    if include_default:
        default = _solve("default", (base.jc.B, base.jc.n, base.jc.C), None, base, cases, cfg, refs)
    report = ValidationReport(rows, optimum, default)
    result.validation = report
    return report


# -- reduced-training-set study ----------------------------------------------

ABLATION_FRACTIONS = (0.75, 0.5, 0.25, 0.10, 0.05)


@dataclass
class AblationRun:
    fraction: float
    repeat: int
    seed: int
    n_rows: int
    accuracy: float = math.nan
    ann_rel_error: tuple[float, ...] = ()
    optimum_rel_error: float = math.nan
    error: str | None = None


@dataclass
class AblationReport:
    runs: list[AblationRun]

    def summary(self) -> list[dict]:
        out = []
        for f in sorted({r.fraction for r in self.runs}, reverse=True):
            runs = [r for r in self.runs if r.fraction == f]
            good = [r for r in runs if r.error is None]
            per_case = (np.mean([r.ann_rel_error for r in good], axis=0).tolist()
                        if good else [])
            out.append({
                "fraction": f,
                "n_rows": runs[0].n_rows,
                "repeats": len(runs),
                "failed": len(runs) - len(good),
                "mean_accuracy": float(np.mean([r.accuracy for r in good])) if good else math.nan,
                "mean_ann_rel_error_per_case": per_case,
            })
        return out

    def mean_accuracy(self, fraction: float) -> float:
        for s in self.summary():
            if math.isclose(s["fraction"], fraction):
                return s["mean_accuracy"]
        raise KeyError(fraction)

    def to_dict(self) -> dict:
        return {
            "format": "rpclay-ablation",
            "version": 1,
            "summary": self.summary(),
            "runs": [{"fraction": r.fraction, "repeat": r.repeat, "seed": r.seed,
                      "n_rows": r.n_rows, "accuracy": r.accuracy,
                      "ann_rel_error": list(r.ann_rel_error),
                      "optimum_rel_error": r.optimum_rel_error, "error": r.error}
                     for r in self.runs],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fraction", "repeat", "seed", "n_rows", "accuracy",
                    "ann_rel_err_1", "ann_rel_err_2", "ann_rel_err_3", "optimum_rel_error", "error"])
        for r in self.runs:
            e = list(r.ann_rel_error) or [math.nan] * 3
            w.writerow([repr(r.fraction), r.repeat, r.seed, r.n_rows, repr(r.accuracy),
                        *map(repr, e), repr(r.optimum_rel_error), r.error or ""])
        return buf.getvalue()


def fit_surrogates(sset: SampleSet, hidden: Sequence[int], cfg: mlp.TrainConfig,
                   cases: Sequence[int] = (1, 2, 3)) -> list[mlp.MlpModel]:
    models = []
    for c in cases:
        X, y = mlp.case_data(sset, c, FEATURES)
        name = f"{mlp.CASE_PREFIX.get(c, 'M')}-{'x'.join(map(str, hidden))}"
        models.append(mlp.train(X, y, mlp.architecture(hidden), cfg, name=name).model)
    return models


def ablation(data: SampleSet, fractions: Sequence[float] = ABLATION_FRACTIONS,
             repeats: int = 10, seed: int = 0, hidden: Sequence[int] = (50, 50),
             train_cfg: mlp.TrainConfig | None = None, grid_spec: GridSpec | None = None,
             refs: Sequence[float] = DEFAULT_REFS, cases: Sequence[ImpactCase] = DEFAULT_CASES,
             solver_cfg: SolverConfig | None = None, base: MaterialParams | None = None,
             per_case_cap: float = 0.10, common_cap: float = 0.11, k: int = 10,
             jobs: int = 1) -> AblationReport:
    """Retrain on seeded random subsets and measure surrogate-vs-solver accuracy.

    Accuracy of one repeat is ``1 - mean |ANN - solver| / solver`` over the
    validated top-k sets and all cases. Failed repeats are recorded, not raised.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if any(not 0 < f <= 1 for f in fractions):
        raise ValueError("fractions must lie in (0, 1]")
    train_cfg = train_cfg or mlp.TrainConfig()
    grid = Grid(grid_spec or GridSpec())
    runs = []
    for f in fractions:
        for r in range(repeats):
            s = seed + r
            run = AblationRun(f, r, s, round(f * len(data)))
            try:
                sub = subsample(data, f, s)
                cfg = mlp.TrainConfig(**{**train_cfg.__dict__, "seed": s})
                models = fit_surrogates(sub, hidden, cfg, [c.id for c in cases])
                res = select(sweep(models, grid, refs, jobs=jobs), per_case_cap, common_cap, k)
                rep = validate(res, cases, solver_cfg, base, include_default=False, jobs=jobs)
                good = [row for row in rep.rows if row.error is None]
                rel = np.array([row.ann_rel_error for row in good])
                run.ann_rel_error = tuple(float(x) for x in rel.mean(axis=0))
                run.accuracy = float(1.0 - rel.mean())
                run.optimum_rel_error = rep.optimum.mean_rel_error
            except (RpclayError, ValueError) as exc:
                run.error = f"{type(exc).__name__}: {exc}"
            runs.append(run)
    return AblationReport(runs)
