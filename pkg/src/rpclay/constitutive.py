"""Johnson-Cook flow stress and polynomial equation of state for RP clay.

Parameters are held in the units the clay literature uses (kPa for the
Johnson-Cook stresses, GPa for the EOS stiffnesses). Conversion to SI happens
once, at solver entry, through the constants below.

Flow stress::

    sigma = (A + B*eps_p**n) * (1 + C*ln(eps_dot/eps_dot_ref)) * (1 - T_h**m)

    T_h = (T - T0) / (Tm - T0)

Pressure::

    p = A1*mu + A2*mu**2 + A3*mu**3 + (B0 + B1*mu)*rho0*e    mu > 0
    p = A1*mu + A2*mu**2 + B0*rho0*e                         mu <= 0
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

from .errors import DomainError, InvalidParameterError

KPA = 1.0e3
GPA = 1.0e9

# Reference and melt temperature are not published for RP clay; inert while
# the pipeline runs isothermally at T0.
DEFAULT_T0 = 296.15
DEFAULT_TM = 329.15
# Clay density is not published either; typical literature value.
DEFAULT_RHO0 = 1600.0


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise InvalidParameterError(msg)


@dataclass(frozen=True)
class JcParams:
    """Johnson-Cook constants. Stresses in kPa, rate in 1/s, temperatures in K."""

    A: float = 0.01
    B: float = 238.0
    n: float = 0.29
    C: float = 0.25
    m: float = 0.502
    eps_dot_ref: float = 0.118
    T0: float = DEFAULT_T0
    Tm: float = DEFAULT_TM

    def __post_init__(self):
        _require(self.A >= 0, f"A must be >= 0, got {self.A}")
        _require(self.B > 0, f"B must be > 0, got {self.B}")
        _require(self.n > 0, f"n must be > 0, got {self.n}")
        _require(self.C >= 0, f"C must be >= 0, got {self.C}")
        _require(self.m > 0, f"m must be > 0, got {self.m}")
        _require(self.eps_dot_ref > 0, f"eps_dot_ref must be > 0, got {self.eps_dot_ref}")
        _require(self.Tm > self.T0, f"Tm ({self.Tm}) must exceed T0 ({self.T0})")


@dataclass(frozen=True)
class EosParams:
    """Polynomial EOS constants. A1..A3 in GPa, rho0 in kg/m^3."""

    A1: float = 2.804
    A2: float = 40.7
    A3: float = -36.0
    B0: float = 1.7
    B1: float = 1.7
    rho0: float = DEFAULT_RHO0

    def __post_init__(self):
        _require(self.A1 > 0, f"A1 must be > 0, got {self.A1}")
        _require(self.rho0 > 0, f"rho0 must be > 0, got {self.rho0}")


# Column order used by every CSV that carries a material parameter set.
PARAM_COLUMNS = (
    "A", "B", "n", "C", "m", "eps_dot_ref",
    "A1", "A2", "A3", "B0", "B1", "rho0",
    "ise",
)
_JC_FIELDS = ("A", "B", "n", "C", "m", "eps_dot_ref", "T0", "Tm")
_EOS_FIELDS = ("A1", "A2", "A3", "B0", "B1", "rho0")


@dataclass(frozen=True)
class MaterialParams:
    jc: JcParams = field(default_factory=JcParams)
    eos: EosParams = field(default_factory=EosParams)
    ise: float = 5.0

    def __post_init__(self):
        _require(self.ise > 0, f"ise must be > 0, got {self.ise}")

    def get(self, name: str) -> float:
        if name == "ise":
            return self.ise
        if name in _JC_FIELDS:
            return getattr(self.jc, name)
        if name in _EOS_FIELDS:
            return getattr(self.eos, name)
        raise KeyError(name)

    def updated(self, **values: float) -> "MaterialParams":
        """Copy with the named flat parameters replaced (e.g. ``B=119.0``)."""
        jc = {k: v for k, v in values.items() if k in _JC_FIELDS}
        eos = {k: v for k, v in values.items() if k in _EOS_FIELDS}
        unknown = set(values) - set(jc) - set(eos) - {"ise"}
        if unknown:
            raise KeyError(f"unknown material parameter(s): {sorted(unknown)}")
        return MaterialParams(
            jc=replace(self.jc, **jc),
            eos=replace(self.eos, **eos),
            ise=values.get("ise", self.ise),
        )

    def to_flat(self) -> dict[str, float]:
        return {name: self.get(name) for name in PARAM_COLUMNS}

    def as_dict(self) -> dict:
        return {"jc": asdict(self.jc), "eos": asdict(self.eos), "ise": self.ise}

    @classmethod
    def from_flat(cls, values: dict[str, float], base: "MaterialParams | None" = None):
        return (base or cls()).updated(**values)


@dataclass(frozen=True)
class FlowState:
    eps_p: float
    eps_dot: float
    T: float = DEFAULT_T0

    def __post_init__(self):
        _require(self.eps_p >= 0, f"eps_p must be >= 0, got {self.eps_p}")
        _require(self.eps_dot >= 0, f"eps_dot must be >= 0, got {self.eps_dot}")


@dataclass(frozen=True)
class EosState:
    mu: float
    e: float = 0.0

    def __post_init__(self):
        _require(self.mu > -1, f"mu must be > -1, got {self.mu}")


def thermal_factor(p: JcParams, T: float) -> float:
    """Thermal softening bracket; exactly 1 at or below the reference temperature."""
    if T > p.Tm:
        raise DomainError(f"T={T} K exceeds the melting temperature {p.Tm} K")
    if T <= p.T0:
        return 1.0
    return 1.0 - ((T - p.T0) / (p.Tm - p.T0)) ** p.m


def rate_factor(p: JcParams, eps_dot: float) -> float:
    # Sub-reference rates are floored so the bracket never drops below 1.
    if eps_dot <= p.eps_dot_ref:
        return 1.0
    return 1.0 + p.C * math.log(eps_dot / p.eps_dot_ref)


def jc_flow_stress(p: JcParams, s: FlowState) -> float:
    """Johnson-Cook flow stress in kPa."""
    hardening = p.A + p.B * s.eps_p ** p.n
    sigma = hardening * rate_factor(p, s.eps_dot) * thermal_factor(p, s.T)
    return max(sigma, 0.0)


def eos_pressure(p: EosParams, s: EosState) -> float:
    """Polynomial EOS pressure in Pa.

    The tension branch keeps the ``+A2*mu**2`` term exactly as the model is
    usually published, even though its sign is unusual under tension.
    """
    mu = s.mu
    a1, a2, a3 = p.A1 * GPA, p.A2 * GPA, p.A3 * GPA
    if mu > 0:
        return a1 * mu + a2 * mu**2 + a3 * mu**3 + (p.B0 + p.B1 * mu) * p.rho0 * s.e
    return a1 * mu + a2 * mu**2 + p.B0 * p.rho0 * s.e


class Strength(NamedTuple):
    stress: float
    eroded: bool


def effective_strength(p: MaterialParams, s: FlowState, post_erosion: bool = False) -> Strength:
    """Flow stress with the plastic strain capped at the erosion strain.

    A point at or beyond ``ise`` is flagged eroded. With ``post_erosion`` set,
    an eroded point carries no strength at all.
    """
    eroded = s.eps_p >= p.ise
    if eroded and post_erosion:
        return Strength(0.0, True)
    capped = FlowState(min(s.eps_p, p.ise), s.eps_dot, s.T)
    return Strength(jc_flow_stress(p.jc, capped), eroded)
