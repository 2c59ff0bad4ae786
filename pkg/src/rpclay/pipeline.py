"""Stage runners behind the command-line interface.

Each stage reads its inputs, writes its outputs into the run directory and
returns a small dict for the caller. Every JSON output carries the config
hash; every CSV output starts with a ``#`` banner line carrying it. A stage
that fails keeps whatever it already wrote under a ``.partial`` suffix.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import replace
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, correlation, dataset, inverse, mlp, solver
from .config import PipelineConfig, config_hash, dumps as dump_config
from .errors import ConfigError, RpclayError, SchemaError

logger = logging.getLogger(__name__)


class StageError(RpclayError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class HashMismatchError(ConfigError):
    pass


class RunDir:
    """Output directory bound to one config hash; tracks files written per stage."""

    def __init__(self, cfg: PipelineConfig, out: Path | None = None):
        self.cfg = cfg
        self.path = Path(out or cfg.out_dir)
        self.path.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(cfg)
        self._written: list[Path] = []
        self.timings: dict[str, float] = {}

    def _write(self, rel: str, text: str) -> Path:
        p = self.path / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8", newline="\n")
        for stale in (p.with_name(p.name + ".partial"),):
            if stale.exists():
                stale.unlink()
        self._written.append(p)
        return p

    def json(self, rel: str, payload: dict) -> Path:
        body = {"config_hash": self.hash, **payload}
        return self._write(rel, json.dumps(body, indent=1, sort_keys=False) + "\n")

    def csv(self, rel: str, kind: str, text: str) -> Path:
        return self._write(rel, f"# rpclay {kind} v1; config_hash={self.hash}\n{text}")

    def sampleset(self, rel: str, sset: dataset.SampleSet) -> Path:
        sset.meta["config_hash"] = self.hash
        return self._write(rel, dataset.dumps(sset))

    @contextmanager
    def stage(self, name: str):
        self._written = []
        t0 = time.perf_counter()
        try:
            yield self
        except BaseException as exc:
            for p in self._written:
                if p.exists():
                    os.replace(p, p.with_name(p.name + ".partial"))
            if isinstance(exc, (ConfigError, KeyboardInterrupt)):
                raise
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 3)

    def manifest(self, command: str, started: datetime, extra: dict | None = None) -> Path:
        payload = {
            "format": "rpclay-manifest",
            "version": 1,
            "command": command,
            "package_version": __version__,
            "seed": self.cfg.seed,
            "jobs": self.cfg.jobs,
            "out": str(self.path),
            "kernel_backend": solver.BACKEND,
            "started": started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "timings_s": self.timings,
            **(extra or {}),
        }
        name = "manifest.json" if command == "pipeline" else f"manifest_{command}.json"
        return self.json(name, payload)

    def write_config(self) -> Path:
        # the run directory is recorded in the manifest; keep this file location-free
        return self._write("config.ini", dump_config(replace(self.cfg, out=".")))

    def check_hash(self, found: str | None, what: str) -> None:
        if found is not None and found != self.hash:
            raise HashMismatchError(
                f"{what} was produced under config hash {found}, current config is {self.hash}")


def _read_banner_hash(path: Path) -> str | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    for part in first.lstrip("#").split(";"):
        if part.strip().startswith("config_hash="):
            return part.strip().split("=", 1)[1]
    return None


def _load_json(path: Path, what: str) -> dict:
    if not path.is_file():
        raise ConfigError(f"{what} {str(path)!r} not found")
    return json.loads(path.read_text(encoding="utf-8"))


# -- stages ------------------------------------------------------------------

def simulate_stage(run: RunDir, overrides: dict[str, float] | None = None,
                   case_ids=None) -> dict:
    cfg = run.cfg
    mat = cfg.material.updated(**(overrides or {}))
    cases = [c for c in cfg.cases if case_ids is None or c.id in case_ids]
    if not cases:
        raise ConfigError(f"no impact case matches {case_ids}")
    with run.stage("simulate"):
        results = {}
        for c in cases:
            res = solver.simulate(c, mat, cfg.solver)
            work, ke = solver.energy_balance(res, c)
            results[c.id] = {"depth_mm": res.depth, "eroded": res.eroded, "time_s": res.time,
                             "work_J": res.work, "kinetic_energy_J": ke}
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["t_s", "displacement_mm", "velocity_m_s", "force_N"])
            for row in res.series:
                w.writerow([repr(float(x)) for x in row])
            run.csv(f"simulation_case{c.id}_series.csv", "series", buf.getvalue())
        run.json("simulation.json", {"format": "rpclay-simulation", "version": 1,
                                     "material": mat.as_dict(),
                                     "cases": {str(k): v for k, v in results.items()}})
    return results


def doe_stage(run: RunDir, design: str) -> dataset.SampleSet:
    cfg = run.cfg
    if design == "oat":
        mats = dataset.gen_oat_design(cfg.material)
        prov = "generated_oat"
    elif design == "factorial":
        mats = dataset.gen_factorial_design(cfg.material, cfg.design_levels)
        prov = "generated_factorial"
    else:
        raise ConfigError(f"unknown design {design!r} (oat|factorial)")
    with run.stage(f"doe_{design}"):
        rows = solver.simulate_batch(cfg.cases, mats, cfg.solver, jobs=cfg.jobs)
        failed = [r for r in rows if r.error]
        run.csv(f"batch_{design}.csv", "batch", batch_csv(rows))
        depths = solver.batch_depths(rows, len(cfg.cases))
        sset = dataset.from_depths(mats, depths, prov, [c.id for c in cfg.cases])
        run.sampleset(f"dataset_{design}.csv", sset)
        if failed:
            raise RpclayError(f"{len(failed)} of {len(rows)} runs failed, first: {failed[0].error}")
    return sset


def batch_csv(rows) -> str:
    """run_id, case_id, 13 material columns, depth_mm, eroded."""
    from .constitutive import PARAM_COLUMNS

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id", "case_id", *PARAM_COLUMNS, "depth_mm", "eroded"])
    for r in rows:
        flat = r.params.to_flat()
        eroded = int(r.result.eroded) if r.result is not None else ""
        w.writerow([r.mat_index + 1, r.case_id, *(repr(float(flat[p])) for p in PARAM_COLUMNS),
                    repr(float(r.depth)), eroded])
    return buf.getvalue()


def _resolve_dataset(run: RunDir, source: str | None, default: str) -> dataset.SampleSet:
    src = source or default
    if src in ("fixture_A1", "fixture_B1"):
        if run.cfg.fixtures:
            name = {"fixture_A1": "table_a1.csv", "fixture_B1": "table_b1.csv"}[src]
            return dataset.load(Path(run.cfg.fixtures) / name)
        return dataset.load_fixture(src)
    path = Path(src)
    if not path.is_absolute() and not path.exists():
        path = run.path / src
    if not path.is_file():
        raise ConfigError(f"dataset {src!r} not found")
    run.check_hash(_read_banner_hash(path), f"dataset {path}")
    return dataset.load(path, [c.id for c in run.cfg.cases])


def screen_stage(run: RunDir, source: str | None = None) -> correlation.ScreeningReport:
    sset = _resolve_dataset(run, source, "fixture_A1")
    with run.stage("screen"):
        rep = correlation.screen(sset, run.cfg.screen_threshold)
        rep.meta = {"source": source or "fixture_A1", "provenance": sset.provenance}
        run.json("screening.json", rep.to_dict())
        run.csv("screening.csv", "screening", rep.to_csv())
    return rep


def train_stage(run: RunDir, source: str | None = None) -> dict:
    cfg = run.cfg
    sset = _resolve_dataset(run, source, "dataset_factorial.csv")
    archs = [(s, h) for s, h in mlp.ARCHITECTURES if s in cfg.architectures]
    with run.stage("train"):
        data = {c.id: mlp.case_data(sset, c.id) for c in cfg.cases}
        ranked = mlp.run_architecture_grid(data, cfg.train_cfg, archs, jobs=cfg.jobs)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["case", "rank", "name", "hidden", "n_params", "epochs_run",
                    "train_rmse", "train_r2", "val_rmse", "val_r2"])
        table, best = [], {}
        for case, entries in sorted(ranked.items()):
            for rank_, e in enumerate(entries, start=1):
                r = e.result
                w.writerow([case, rank_, e.name, "x".join(map(str, e.hidden)), r.model.n_params,
                            r.epochs_run, repr(r.train.rmse), repr(r.train.r2),
                            repr(r.validation.rmse), repr(r.validation.r2)])
                table.append({"case": case, "rank": rank_, "name": e.name, "hidden": list(e.hidden),
                              "epochs_run": r.epochs_run, "train": r.train.as_dict(),
                              "validation": r.validation.as_dict()})
            top = entries[0]
            best[case] = top.name
            (run.path / "models").mkdir(exist_ok=True)
            mlp.save_model(top.result.model, run.path / "models" / f"case{case}.json",
                           {"config_hash": run.hash, "case": case,
                            "train_metrics": top.result.train.as_dict(),
                            "validation_metrics": top.result.validation.as_dict()})
            run._written.append(run.path / "models" / f"case{case}.json")
            run.csv(f"models/history_case{case}.csv", "history", mlp.history_csv(top.result.model))
        run.csv("architecture_grid.csv", "architecture-grid", buf.getvalue())
        run.json("metrics.json", {"format": "rpclay-metrics", "version": 1,
                                  "best": {str(k): v for k, v in best.items()},
                                  "grid": table})
    return {"best": best, "ranked": ranked}


def _load_models(run: RunDir, models_dir: str | None) -> list[mlp.MlpModel]:
    d = Path(models_dir) if models_dir else run.path / "models"
    models = []
    for c in run.cfg.cases:
        p = d / f"case{c.id}.json"
        doc = _load_json(p, "model")
        run.check_hash(doc.get("config_hash"), f"model {p}")
        try:
            models.append(mlp.model_from_dict(doc))
        except SchemaError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    return models


def invert_stage(run: RunDir, models_dir: str | None = None) -> inverse.InverseResult:
    cfg = run.cfg
    models = _load_models(run, models_dir)
    with run.stage("invert"):
        grid = inverse.build_grid(cfg.grid)
        sw = inverse.sweep(models, grid, cfg.refs, chunk=cfg.chunk, jobs=cfg.jobs)
        res = inverse.select(sw, cfg.per_case_cap, cfg.common_cap, cfg.top_k, cfg.absolute)
        doc = res.to_dict()
        doc["models"] = [m.name for m in models]
        run.json("inverse.json", doc)
        run.csv("inverse_common.csv", "inverse-common", res.common_csv(grid))
    return res


def _result_from_json(doc: dict) -> inverse.InverseResult:
    g = doc["grid"]
    spec = inverse.GridSpec(tuple(g["mins"]), tuple(g["maxs"]), int(g["levels"]))
    top = [inverse.candidate_from_dict(c) for c in doc["top_k"]]
    return inverse.InverseResult(tuple(doc["refs"]), {}, np.array([], dtype=int), top,
                                 doc["per_case_cap"], doc["common_cap"], spec)


def validate_stage(run: RunDir, result_path: str | None = None) -> inverse.ValidationReport:
    cfg = run.cfg
    p = Path(result_path) if result_path else run.path / "inverse.json"
    doc = _load_json(p, "inverse result")
    run.check_hash(doc.get("config_hash"), f"inverse result {p}")
    res = _result_from_json(doc)
    with run.stage("validate"):
        rep = inverse.validate(res, cfg.cases, cfg.solver, cfg.material, jobs=cfg.jobs)
        run.json("validation.json", rep.to_dict())
        run.csv("validation.csv", "validation", rep.to_csv())
    return rep


def ablate_stage(run: RunDir, source: str | None = None) -> inverse.AblationReport:
    cfg = run.cfg
    p = Path(source) if source else run.path / "dataset_factorial.csv"
    if source is None and not p.exists():
        sset = doe_stage(run, "factorial")
    else:
        sset = _resolve_dataset(run, str(p), "dataset_factorial.csv")
    a = cfg.ablation
    grid = inverse.GridSpec(cfg.grid.mins, cfg.grid.maxs, a.grid_levels, cfg.grid.max_points)
    tcfg = replace(cfg.train_cfg, epochs=a.epochs)
    with run.stage("ablate"):
        rep = inverse.ablation(sset, a.fractions, a.repeats, cfg.seed, a.hidden, tcfg, grid,
                               cfg.refs, cfg.cases, cfg.solver, cfg.material,
                               cfg.per_case_cap, cfg.common_cap, cfg.top_k, jobs=cfg.jobs)
        run.json("ablation.json", rep.to_dict())
        run.csv("ablation.csv", "ablation", rep.to_csv())
    return rep


def run_pipeline(run: RunDir) -> dict:
    """doe -> screen -> train -> invert -> validate [-> ablate], then the summary."""
    cfg = run.cfg
    run.write_config()
    oat = doe_stage(run, "oat")
    screen = screen_stage(run, "dataset_oat.csv")
    if sorted(screen.selected) != sorted(inverse.FEATURES):
        logger.warning("screening selected %s; surrogates still use B, n, C", screen.selected)
    doe_stage(run, "factorial")
    trained = train_stage(run, "dataset_factorial.csv")
    res = invert_stage(run)
    rep = validate_stage(run)
    summary = {
        "format": "rpclay-summary",
        "version": 1,
        "screened_parameters": screen.selected,
        "oat_rows": len(oat),
        "best_models": {str(k): v for k, v in trained["best"].items()},
        "surrogate_validation_r2": {
            str(c): entries[0].result.validation.r2 for c, entries in trained["ranked"].items()},
        "refs": list(cfg.refs),
        "common_count": int(len(res.common)),
        "optimum": dict(zip(("B", "n", "C"), rep.optimum.params)),
        "optimum_solver_depths": list(rep.optimum.solver),
        "optimum_ann_depths": list(rep.optimum.ann),
        "default_solver_depths": list(rep.default.solver),
        "before_mean_rel_error": rep.default.mean_rel_error,
        "after_mean_rel_error": rep.optimum.mean_rel_error,
    }
    if cfg.ablation.in_pipeline:
        abl = ablate_stage(run, str(run.path / "dataset_factorial.csv"))
        summary["ablation"] = abl.summary()
    run.json("summary.json", summary)
    return summary


def format_summary(summary: dict) -> str:
    o = summary["optimum"]
    lines = [
        f"screened parameters : {', '.join(summary['screened_parameters'])}",
        f"best surrogates     : {', '.join(summary['best_models'].values())}",
        f"joint candidates    : {summary['common_count']}",
        f"optimum (B, n, C)   : ({o['B']:.3f} kPa, {o['n']:.4f}, {o['C']:.4f})",
        "solver depths (mm)  : " + ", ".join(f"{d:.3f}" for d in summary["optimum_solver_depths"]),
        "reference (mm)      : " + ", ".join(f"{d:.3f}" for d in summary["refs"]),
        f"mean relative error : {100 * summary['before_mean_rel_error']:.2f}% (defaults) -> "
        f"{100 * summary['after_mean_rel_error']:.2f}% (optimum)",
    ]
    return "\n".join(lines)


def now() -> datetime:
    return datetime.now(timezone.utc)
