"""Pipeline configuration stored as a sectioned key/value (INI) file.

Every published constant used by the pipeline (drop cases, default material
set, factorial levels, grid bounds, reference depths) lives in the default
configuration rather than in code paths, so a run can be audited from its
config file alone. ``rpclay default-config`` prints the defaults.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .constitutive import MaterialParams
from .dataset import FACTORIAL_LEVELS
from .errors import ConfigError
from .inverse import ABLATION_FRACTIONS, DEFAULT_REFS, GridSpec
from .mlp import ARCHITECTURES, TrainConfig
from .solver import DEFAULT_CASES, ImpactCase, SolverConfig

MATERIAL_KEYS = ("A", "B", "n", "C", "m", "eps_dot_ref", "T0", "Tm",
                 "A1", "A2", "A3", "B0", "B1", "rho0", "ise")
# keys that never influence results and so stay out of the config hash
_UNHASHED = {("run", "jobs"), ("paths", "out"), ("paths", "fixtures")}


@dataclass
class AblationSettings:
    fractions: tuple[float, ...] = ABLATION_FRACTIONS
    repeats: int = 10
    hidden: tuple[int, ...] = (50, 50)
    epochs: int = 20000
    grid_levels: int = 100
    in_pipeline: bool = False


@dataclass
class PipelineConfig:
    seed: int = 0
    jobs: int = 1
    out: str = "out"
    fixtures: str = ""
    material: MaterialParams = field(default_factory=MaterialParams)
    cases: tuple[ImpactCase, ...] = DEFAULT_CASES
    solver: SolverConfig = field(default_factory=SolverConfig)
    design_levels: dict = field(default_factory=lambda: {k: tuple(v) for k, v in FACTORIAL_LEVELS.items()})
    screen_threshold: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig)
    architectures: tuple[str, ...] = tuple(s for s, _ in ARCHITECTURES)
    grid: GridSpec = field(default_factory=GridSpec)
    refs: tuple[float, ...] = DEFAULT_REFS
    per_case_cap: float = 0.10
    common_cap: float = 0.11
    top_k: int = 10
    absolute: bool = False
    chunk: int = 131072
    ablation: AblationSettings = field(default_factory=AblationSettings)

    @property
    def train_cfg(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def _f(x) -> str:
    return repr(float(x))


def _floats(xs) -> str:
    return ", ".join(_f(x) for x in xs)


def _ints(xs) -> str:
    return ", ".join(str(int(x)) for x in xs)


def to_parser(cfg: PipelineConfig) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["run"] = {"seed": str(cfg.seed), "jobs": str(cfg.jobs)}
    cp["paths"] = {"out": cfg.out, "fixtures": cfg.fixtures}
    flat = cfg.material.to_flat() | {"T0": cfg.material.jc.T0, "Tm": cfg.material.jc.Tm}
    cp["material"] = {k: _f(flat[k]) for k in MATERIAL_KEYS}
    for c in cfg.cases:
        cp[f"case.{c.id}"] = {"diameter_mm": _f(c.diameter), "mass_g": _f(c.mass),
                              "v0_m_s": _f(c.v0), "ref_depth_mm": _f(c.ref_depth),
                              "ref_tol_mm": _f(c.ref_tol)}
    s = cfg.solver
    cp["solver"] = {"dt": _f(s.dt), "t_max": _f(s.t_max), "strain_shape_k": _f(s.strain_shape_k),
                    "inertia_coeff": _f(s.inertia_coeff), "constraint_factor": _f(s.constraint_factor),
                    "eos_confinement": str(s.eos_confinement).lower(),
                    "stop_velocity": _f(s.stop_velocity), "record_stride": str(s.record_stride)}
    cp["design"] = {f"{k}_levels": _floats(v) for k, v in cfg.design_levels.items()}
    cp["screen"] = {"threshold": _f(cfg.screen_threshold)}
    t = cfg.train
    cp["train"] = {"epochs": str(t.epochs), "split": _f(t.split), "lr": _f(t.lr),
                   "adam_beta1": _f(t.adam_beta1), "adam_beta2": _f(t.adam_beta2),
                   "adam_eps": _f(t.adam_eps), "batch": str(t.batch),
                   "patience": str(t.patience), "tol": _f(t.tol),
                   "target_transform": t.target_transform,
                   "input_transform": t.input_transform,
                   "architectures": ", ".join(cfg.architectures)}
    g = cfg.grid
    cp["grid"] = {"B_min": _f(g.mins[0]), "B_max": _f(g.maxs[0]),
                  "n_min": _f(g.mins[1]), "n_max": _f(g.maxs[1]),
                  "C_min": _f(g.mins[2]), "C_max": _f(g.maxs[2]),
                  "levels": str(g.levels), "max_points": str(g.max_points)}
    cp["inverse"] = {"refs": _floats(cfg.refs), "per_case_cap": _f(cfg.per_case_cap),
                     "common_cap": _f(cfg.common_cap), "top_k": str(cfg.top_k),
                     "absolute": str(cfg.absolute).lower(), "chunk": str(cfg.chunk)}
    a = cfg.ablation
    cp["ablation"] = {"fractions": _floats(a.fractions), "repeats": str(a.repeats),
                      "hidden": _ints(a.hidden), "epochs": str(a.epochs),
                      "grid_levels": str(a.grid_levels),
                      "in_pipeline": str(a.in_pipeline).lower()}
    return cp


def dumps(cfg: PipelineConfig) -> str:
    import io

    buf = io.StringIO()
    to_parser(cfg).write(buf)
    return buf.getvalue()


def config_hash(cfg: PipelineConfig) -> str:
    """Short SHA-256 over every result-affecting setting."""
    cp = to_parser(cfg)
    lines = []
    for sec in cp.sections():
        for key, val in cp[sec].items():
            if (sec, key) not in _UNHASHED:
                lines.append(f"{sec}.{key}={val}")
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def _split(val: str) -> list[str]:
    return [v.strip() for v in val.split(",") if v.strip()]


def _bool(val: str) -> bool:
    v = val.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {val!r}")


def from_parser(cp: configparser.ConfigParser) -> PipelineConfig:
    """Overlay a parsed file on the defaults; unknown sections or keys are errors."""
    base = to_parser(PipelineConfig())
    for sec in cp.sections():
        if sec not in base and not sec.startswith("case."):
            raise ConfigError(f"unknown config section [{sec}]")
        for key in cp[sec]:
            known = base[sec] if sec in base else base["case.1"]
            if key not in known:
                raise ConfigError(f"unknown config key {sec}.{key}")
            if sec not in base:
                base[sec] = dict(base["case.1"])
            base[sec][key] = cp[sec][key]
    s = base
    try:
        cases = tuple(
            ImpactCase(int(sec.split(".", 1)[1]), float(s[sec]["diameter_mm"]),
                       float(s[sec]["mass_g"]), float(s[sec]["v0_m_s"]),
                       float(s[sec]["ref_depth_mm"]), float(s[sec]["ref_tol_mm"]))
            for sec in sorted((x for x in s.sections() if x.startswith("case.")),
                              key=lambda x: int(x.split(".", 1)[1]))
        )
        mat = MaterialParams.from_flat({k: float(s["material"][k]) for k in MATERIAL_KEYS})
        sv = s["solver"]
        solver = SolverConfig(
            dt=float(sv["dt"]), t_max=float(sv["t_max"]),
            strain_shape_k=float(sv["strain_shape_k"]), inertia_coeff=float(sv["inertia_coeff"]),
            constraint_factor=float(sv["constraint_factor"]),
            eos_confinement=_bool(sv["eos_confinement"]),
            stop_velocity=float(sv["stop_velocity"]), record_stride=int(sv["record_stride"]))
        tr = s["train"]
        train = TrainConfig(
            epochs=int(tr["epochs"]), split=float(tr["split"]), lr=float(tr["lr"]),
            adam_beta1=float(tr["adam_beta1"]), adam_beta2=float(tr["adam_beta2"]),
            adam_eps=float(tr["adam_eps"]), batch=int(tr["batch"]),
            patience=int(tr["patience"]), tol=float(tr["tol"]),
            target_transform=tr["target_transform"].strip(),
            input_transform=tr["input_transform"].strip())
        archs = tuple(_split(tr["architectures"]))
        valid = {suffix for suffix, _ in ARCHITECTURES}
        if not archs or any(a not in valid for a in archs):
            raise ValueError(f"architectures must be drawn from {sorted(valid)}")
        g = s["grid"]
        grid = GridSpec((float(g["B_min"]), float(g["n_min"]), float(g["C_min"])),
                        (float(g["B_max"]), float(g["n_max"]), float(g["C_max"])),
                        int(g["levels"]), int(g["max_points"]))
        inv = s["inverse"]
        refs = tuple(float(x) for x in _split(inv["refs"]))
        if len(refs) != len(cases):
            raise ValueError(f"{len(refs)} reference depths for {len(cases)} cases")
        ab = s["ablation"]
        ablation = AblationSettings(
            tuple(float(x) for x in _split(ab["fractions"])), int(ab["repeats"]),
            tuple(int(x) for x in _split(ab["hidden"])), int(ab["epochs"]),
            int(ab["grid_levels"]), _bool(ab["in_pipeline"]))
        design = {k: tuple(float(x) for x in _split(s["design"][f"{k}_levels"]))
                  for k in ("B", "n", "C")}
        cfg = PipelineConfig(
            seed=int(s["run"]["seed"]), jobs=int(s["run"]["jobs"]),
            out=s["paths"]["out"], fixtures=s["paths"]["fixtures"],
            material=mat, cases=cases, solver=solver, design_levels=design,
            screen_threshold=float(s["screen"]["threshold"]), train=train,
            architectures=archs, grid=grid, refs=refs,
            per_case_cap=float(inv["per_case_cap"]), common_cap=float(inv["common_cap"]),
            top_k=int(inv["top_k"]), absolute=_bool(inv["absolute"]), chunk=int(inv["chunk"]),
            ablation=ablation)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if cfg.fixtures and not Path(cfg.fixtures).is_dir():
        raise ConfigError(f"fixtures directory {cfg.fixtures!r} does not exist")
    return cfg


def loads(text: str) -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return from_parser(cp)


def load(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    return loads(path.read_text(encoding="utf-8"))


def default_config() -> PipelineConfig:
    return PipelineConfig()


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    """Copy of ``cfg`` with top-level fields replaced; ``None`` values are ignored."""
    names = {f.name for f in fields(PipelineConfig)}
    bad = set(kw) - names
    if bad:
        raise ConfigError(f"unknown config field(s) {sorted(bad)}")
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
