"""Named measurement sequences, generated as DSL text and parsed.

Time parameters are in seconds, frequencies in Hz.  ``tau`` is always the
total free-precession time; echo sequences split it into two halves.
"""

from __future__ import annotations

from .dsl import PulseSequence, parse_sequence


class BuiltinError(ValueError):
    pass


# name -> (required params, optional params with defaults)
BUILTIN_PARAMS = {
    "DEER": (("tau", "f_start", "f_stop"), {"count": 101, "t_init": None}),
    "DSE_D": (("tau_stop",), {"tau_start": 0.0, "count": 41, "t_init": None}),
    "DSE_U": (("tau_stop",), {"tau_start": 0.0, "count": 41, "t_init": None}),
    "IDSE_D": (("tau",), {"count": 25, "t_init": None}),
    "IDSE_U": (("tau",), {"count": 25, "t_init": None}),
    "HH_DPLUS": (("lock_stop",), {"lock_start": 0.0, "count": 101, "t_init": None}),
    "HH_DMINUS": (("lock_stop",), {"lock_start": 0.0, "count": 101, "t_init": None}),
    "HH_ALT": (("lock_stop",), {"lock_start": 0.0, "count": 101, "t_init": None}),
}

BUILTIN_NAMES = tuple(BUILTIN_PARAMS)


def _num(v: float) -> str:
    """Shortest clean decimal for a value already scaled to its DSL unit."""
    v = float(f"{float(v):.12g}")
    r = repr(v)
    return r[:-2] if r.endswith(".0") else r


def _ns(t: float) -> str:
    return _num(t * 1e9)


def _pump(t_init) -> list[str]:
    return [] if not t_init else [f"pump {_ns(t_init)}ns"]


def _resolve(name: str, params: dict) -> dict:
    if name not in BUILTIN_PARAMS:
        raise BuiltinError(f"unknown builtin {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    required, optional = BUILTIN_PARAMS[name]
    missing = [k for k in required if params.get(k) is None]
    if missing:
        raise BuiltinError(f"{name} needs parameter(s): {', '.join(missing)}")
    unknown = set(params) - set(required) - set(optional)
    if unknown:
        raise BuiltinError(f"{name} does not take parameter(s): {', '.join(sorted(unknown))}")
    out = dict(optional)
    out.update({k: v for k, v in params.items() if v is not None})
    if int(out["count"]) < 1:
        raise BuiltinError("count must be positive")
    return out


def builtin_text(name: str, **params) -> str:
    p = _resolve(name, params)
    n = int(p["count"])
    lines = [f"sequence {name}"]
    if name == "DEER":
        lines.append(f"sweep f MHz {_num(p['f_start'] / 1e6)} {_num(p['f_stop'] / 1e6)} {n}")
        half = _ns(p["tau"] / 2)
        lines += _pump(p["t_init"])
        lines += ["pulse NV x 90", f"delay {half}ns", "pulse NV x 180 & pulse N x 180 freq f",
                  f"delay {half}ns", "pulse NV x 90", "readout"]
    elif name in ("DSE_D", "DSE_U"):
        lines.append(f"sweep tau ns {_ns(p['tau_start'])} {_ns(p['tau_stop'])} {n}")
        lines += _pump(p["t_init"])
        if name == "DSE_U":
            lines.append("pulse N x 180")
        lines += ["pulse NV x 90", "delay tau/2", "pulse NV x 180 & pulse N x 180",
                  "delay tau/2", "pulse NV y 90"]
        if name == "DSE_D":
            lines.append("pulse N x 180")
        lines.append("readout")
    elif name in ("IDSE_D", "IDSE_U"):
        lines.append(f"sweep alpha deg 0 360 {n}")
        half = _ns(p["tau"] / 2)
        lines += _pump(p["t_init"])
        if name == "IDSE_U":
            lines.append("pulse N x 180")
        lines += ["pulse NV x 90", f"delay {half}ns", "pulse NV x 180 & pulse N x 180",
                  f"delay {half}ns", "pulse NV alpha 90"]
        if name == "IDSE_D":
            lines.append("pulse N x 180")
        lines.append("readout")
    else:
        lines.append(f"sweep tl ns {_ns(p['lock_start'])} {_ns(p['lock_stop'])} {n}")
        lines += _pump(p["t_init"])
        nv_lock = {"HH_DPLUS": "+ tl", "HH_DMINUS": "- tl", "HH_ALT": "+ tl alt"}[name]
        lines += ["pulse NV -x 90 & pulse N x 90",
                  f"lock NV {nv_lock} & lock N + tl",
                  "pulse NV x 90 & pulse N -x 90",
                  "readout"]
    return "\n".join(lines) + "\n"


def builtin(name: str, **params) -> PulseSequence:
    return parse_sequence(builtin_text(name, **params), name=name)
