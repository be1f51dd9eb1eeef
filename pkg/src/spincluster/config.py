"""Cluster configuration and the TOML-backed config file format."""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .physics import (CouplingPair, DipoleGeometry, DomainError, NSpinParams, NVParams,
                      dipolar_coupling)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
MAX_SPINS = 5


class ConfigError(ValueError):
    """Malformed or inconsistent configuration input."""


@dataclass(frozen=True)
class NSpin:
    """One dark spin, given either by position (m) or by its couplings (Hz)."""

    p: float = 0.0
    delta: float | None = None
    omega: float | None = None
    position: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not -1.0 <= self.p <= 1.0:
            raise DomainError(f"polarization must lie in [-1, 1], got {self.p}")
        if self.position is not None:
            object.__setattr__(self, "position", tuple(float(x) for x in self.position))
            if len(self.position) != 3:
                raise DomainError("position must be a 3-vector")
        elif self.delta is None:
            raise DomainError("spin needs either a position or a delta coupling")

    def coupling(self) -> CouplingPair:
        if self.position is not None:
            return dipolar_coupling(DipoleGeometry.from_vector(self.position))
        return CouplingPair(omega=float(self.omega or 0.0), delta=float(self.delta))


@dataclass(frozen=True)
class ClusterConfig:
    b_app: float = 0.024
    nv: NVParams = field(default_factory=NVParams)
    nspin: NSpinParams = field(default_factory=NSpinParams)
    spins: tuple[NSpin, ...] = ()
    t_dse: float = 6.7e-7
    gamma_opt: float = 3.3e6
    lock_rabi: float = 2.0e7
    rw_rabi: float = 2.0e6
    include_nn: bool = False
    n_relaxation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "spins", tuple(self.spins))
        if not 1 <= len(self.spins) <= MAX_SPINS:
            raise DomainError(f"cluster must hold 1..{MAX_SPINS} spins, got {len(self.spins)}")
        for name in ("t_dse", "gamma_opt", "lock_rabi", "rw_rabi"):
            v = getattr(self, name)
            if not (v > 0):
                raise DomainError(f"{name} must be positive, got {v}")
        if self.b_app < 0:
            raise DomainError("b_app must be non-negative")

    @property
    def n(self) -> int:
        return len(self.spins)

    @property
    def t1_n(self) -> float:
        return self.nspin.t1_n

    @property
    def polarizations(self) -> list[float]:
        return [s.p for s in self.spins]

    def couplings(self) -> list[CouplingPair]:
        return [s.coupling() for s in self.spins]

    def with_polarizations(self, ps) -> "ClusterConfig":
        ps = list(ps)
        if len(ps) != self.n:
            raise ValueError("one polarization per spin required")
        return replace(self, spins=tuple(replace(s, p=float(p)) for s, p in zip(self.spins, ps)))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, allow_nan=False,
                          default=_jsonable).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def cluster_from_couplings(deltas, omegas=None, ps=None, **kw) -> ClusterConfig:
    n = len(deltas)
    omegas = [0.0] * n if omegas is None else list(omegas)
    ps = [0.0] * n if ps is None else list(ps)
    spins = tuple(NSpin(p=float(p), delta=float(d), omega=float(o))
                  for d, o, p in zip(deltas, omegas, ps))
    return ClusterConfig(spins=spins, **kw)


# ---- config files ---------------------------------------------------------

_TOP_KEYS = {"schema_version", "cluster", "nv", "nspin", "spin", "run", "sequence"}
_CLUSTER_KEYS = {"b_app", "t_dse", "gamma_opt", "lock_rabi", "rw_rabi", "include_nn",
                 "n_relaxation"}


def parse_config(text: str, source: str = "<config>") -> tuple[ClusterConfig, dict]:
    """Parse config text into a cluster config and the raw run/sequence tables."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown top-level keys {sorted(unknown)}")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{source}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    cl = doc.get("cluster", {})
    bad = set(cl) - _CLUSTER_KEYS
    if bad:
        raise ConfigError(f"{source}: unknown [cluster] keys {sorted(bad)}")
    try:
        nv = NVParams(**{k: (tuple(v) if k == "hyperfine_weights" else float(v))
                         for k, v in doc.get("nv", {}).items()})
        nspin = NSpinParams(**{k: float(v) for k, v in doc.get("nspin", {}).items()})
        spins = []
        for i, entry in enumerate(doc.get("spin", [])):
            entry = dict(entry)
            if "position" in entry:
                entry["position"] = tuple(float(x) for x in entry["position"])
            spins.append(NSpin(**entry))
        cfg = ClusterConfig(nv=nv, nspin=nspin, spins=tuple(spins), **cl)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    run = {"run": doc.get("run", {}), "sequence": doc.get("sequence", {})}
    return cfg, run


def load_config(path) -> tuple[ClusterConfig, dict]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def dump_config(cfg: ClusterConfig) -> str:
    """Render ``cfg`` back to config-file text (round-trips through parse_config)."""
    lines = [f"schema_version = {SCHEMA_VERSION}", "", "[cluster]"]
    for k in sorted(_CLUSTER_KEYS):
        v = getattr(cfg, k)
        lines.append(f"{k} = {_toml_value(v)}")
    lines += ["", "[nv]"]
    for k, v in asdict(cfg.nv).items():
        lines.append(f"{k} = {_toml_value(v)}")
    lines += ["", "[nspin]"]
    for k, v in asdict(cfg.nspin).items():
        lines.append(f"{k} = {_toml_value(v)}")
    for s in cfg.spins:
        lines += ["", "[[spin]]", f"p = {_toml_value(s.p)}"]
        if s.position is not None:
            lines.append(f"position = {_toml_value(s.position)}")
        else:
            lines.append(f"delta = {_toml_value(s.delta)}")
            if s.omega is not None:
                lines.append(f"omega = {_toml_value(s.omega)}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ConfigError("non-finite values cannot be written to a config file")
        return repr(v)
    return repr(v)
