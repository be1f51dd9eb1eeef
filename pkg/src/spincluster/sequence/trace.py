"""Sweep results and their CSV / JSON serialisations."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

# quantities whose values are probabilities and must stay in [0, 1]
BOUNDED = {"p0"}


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Trace:
    """One sweep: x in SI units (s, Hz or rad) against a measured quantity."""

    x: tuple
    p0: tuple
    unit: str
    seq: str
    cfg_hash: str
    seed: int | None = None
    sigma: tuple | None = None
    quantity: str = "p0"

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        y = tuple(float(v) for v in self.p0)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p0", y)
        if len(x) != len(y) or not x:
            raise TraceError(f"x and values must be non-empty and equally long ({len(x)}, {len(y)})")
        if not all(math.isfinite(v) for v in x + y):
            raise TraceError("trace values must be finite")
        dx = np.diff(x)
        if len(x) > 1 and not (np.all(dx > 0) or np.all(dx < 0)):
            raise TraceError("x must be strictly monotonic")
        if self.quantity in BOUNDED and not all(0.0 <= v <= 1.0 for v in y):
            raise TraceError("probabilities must lie in [0, 1]")
        if self.sigma is not None:
            s = tuple(float(v) for v in self.sigma)
            if len(s) != len(y) or any(not (v >= 0 and math.isfinite(v)) for v in s):
                raise TraceError("sigma must be finite, non-negative and match x")
            object.__setattr__(self, "sigma", s)

    @property
    def xs(self) -> np.ndarray:
        return np.asarray(self.x)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.p0)

    def as_dict(self) -> dict:
        return {
            "seq": self.seq,
            "cfg": self.cfg_hash,
            "seed": self.seed,
            "unit": self.unit,
            "quantity": self.quantity,
            "x": list(self.x),
            "values": list(self.p0),
            "sigma": None if self.sigma is None else list(self.sigma),
        }


# angles are written in degrees so the files read naturally
_DISPLAY = {"rad": ("deg", 180.0 / math.pi)}


def _g(v: float) -> str:
    return format(v, ".12g")


def trace_to_csv(tr: Trace) -> str:
    unit, scale = _DISPLAY.get(tr.unit, (tr.unit, 1.0))
    out = io.StringIO()
    seed = "none" if tr.seed is None else str(tr.seed)
    out.write(f"# seq={tr.seq} cfg={tr.cfg_hash} seed={seed}\n")
    out.write(f"# unit={unit} quantity={tr.quantity}\n")
    cols = ["x", tr.quantity] + (["sigma"] if tr.sigma is not None else [])
    out.write(",".join(cols) + "\n")
    for i, (x, y) in enumerate(zip(tr.x, tr.p0)):
        row = [_g(x * scale), _g(y)]
        if tr.sigma is not None:
            row.append(_g(tr.sigma[i]))
        out.write(",".join(row) + "\n")
    return out.getvalue()


def trace_from_csv(text: str) -> Trace:
    meta: dict[str, str] = {}
    rows: list[list[float]] = []
    header = None
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for item in line[1:].split():
                if "=" in item:
                    k, v = item.split("=", 1)
                    meta[k] = v
            continue
        if header is None:
            header = line.split(",")
            if header[0] != "x" or len(header) not in (2, 3):
                raise TraceError(f"line {ln}: expected header 'x,<quantity>[,sigma]'")
            continue
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError:
            raise TraceError(f"line {ln}: non-numeric value") from None
        if len(vals) != len(header):
            raise TraceError(f"line {ln}: expected {len(header)} columns")
        rows.append(vals)
    if header is None or not rows:
        raise TraceError("no data rows")
    for key in ("seq", "cfg"):
        if key not in meta:
            raise TraceError(f"missing '{key}=' in header comment")
    unit = meta.get("unit", "")
    si_unit, scale = unit, 1.0
    for si, (disp, sc) in _DISPLAY.items():
        if unit == disp:
            si_unit, scale = si, 1.0 / sc
    arr = np.asarray(rows)
    seed = meta.get("seed", "none")
    return Trace(
        x=tuple(arr[:, 0] * scale),
        p0=tuple(arr[:, 1]),
        unit=si_unit,
        seq=meta["seq"],
        cfg_hash=meta["cfg"],
        seed=None if seed == "none" else int(seed),
        sigma=tuple(arr[:, 2]) if arr.shape[1] == 3 else None,
        quantity=header[1],
    )


def trace_to_json(tr: Trace) -> str:
    return json.dumps(tr.as_dict(), sort_keys=True, allow_nan=False, indent=2) + "\n"


def trace_from_json(text: str) -> Trace:
    d = json.loads(text)
    return Trace(x=tuple(d["x"]), p0=tuple(d["values"]), unit=d["unit"], seq=d["seq"],
                 cfg_hash=d["cfg"], seed=d.get("seed"), quantity=d.get("quantity", "p0"),
                 sigma=None if d.get("sigma") is None else tuple(d["sigma"]))
