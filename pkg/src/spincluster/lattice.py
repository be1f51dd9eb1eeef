"""Diamond lattice sites around the NV and site posteriors from measured couplings.

Sites are stored with integer coordinates in units of a/4 in the cubic
frame; the vacancy sits at the origin and the NV nitrogen at (1, 1, 1).
Cartesian positions are rotated so that the NV axis [111] is z.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .physics import (CONST, Constants, CouplingPair, DipoleGeometry, DomainError, dipolar_coupling,
                      dipolar_coupling_array)

LATTICE_CONSTANT = 0.3567e-9
MAX_RADIUS = 5e-9
NUMBER_DENSITY = 8 / LATTICE_CONSTANT**3
NV_NITROGEN = (1, 1, 1)
LOG_UNDERFLOW = -745.0      # exp() of anything lower is zero in double precision
LEVELS = (0.68, 0.95)
CHI2_COMPATIBLE = 13.8155   # chi2 (2 dof) at p = 1e-3

# cubic frame -> NV frame: rows are the new x, y, z axes
_Z = np.array([1.0, 1.0, 1.0]) / math.sqrt(3)
_X = np.array([1.0, 1.0, -2.0]) / math.sqrt(6)
ROTATION = np.vstack([_X, np.cross(_Z, _X), _Z])


class LocalizationError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSite:
    indices: tuple[int, int, int]      # cubic coordinates in units of a/4
    position: tuple[float, float, float]
    r: float
    theta: float
    multiplicity: int = 1

    @property
    def r_perp(self) -> float:
        return math.hypot(self.position[0], self.position[1])

    @property
    def z(self) -> float:
        return self.position[2]

    def as_dict(self) -> dict:
        return {"indices": list(self.indices), "xyz": list(self.position), "r": self.r,
                "theta": self.theta, "r_perp": self.r_perp, "z": self.z,
                "multiplicity": self.multiplicity}


def _diamond_points(n: int) -> np.ndarray:
    g = np.arange(-n, n + 1)
    p = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    even = np.all(p % 2 == 0, axis=1) & (p.sum(axis=1) % 4 == 0)
    odd = np.all(p % 2 == 1, axis=1) & ((p.sum(axis=1) - 3) % 4 == 0)
    return p[even | odd]


def _class_keys(xyz: np.ndarray) -> np.ndarray:
    # (r_perp, z) rounded to 1e-15 m
    rp = np.hypot(xyz[:, 0], xyz[:, 1])
    return np.round(np.column_stack([rp, xyz[:, 2]]) * 1e15).astype(np.int64)


def generate_sites(radius: float, *, exclude_nv: bool = True,
                   a: float = LATTICE_CONSTANT) -> list[LatticeSite]:
    """All carbon sites with 0 < r <= radius, ordered by (r, z, indices).

    ``exclude_nv`` removes the NV nitrogen; the vacancy is always excluded.
    ``multiplicity`` counts the sites sharing the same (r_perp, z) circle.
    """
    if not (0 < radius <= MAX_RADIUS) or not math.isfinite(radius):
        raise DomainError(f"radius must lie in (0, {MAX_RADIUS:g}] m, got {radius!r}")
    q = a / 4
    pts = _diamond_points(int(math.ceil(radius / q)) + 1)
    xyz = (pts * q) @ ROTATION.T
    r = np.linalg.norm(xyz, axis=1)
    keep = (r > 0) & (r <= radius * (1 + 1e-12))
    if exclude_nv:
        keep &= ~np.all(pts == NV_NITROGEN, axis=1)
    pts, xyz, r = pts[keep], xyz[keep], r[keep]
    keys = _class_keys(xyz)
    labels = _first_seen_labels(keys)
    counts = np.bincount(labels)
    rk = np.round(r * 1e15).astype(np.int64)
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], keys[:, 1], rk))
    theta = np.arccos(np.clip(xyz[:, 2] / r, -1.0, 1.0))
    return [LatticeSite(tuple(int(v) for v in pts[i]), tuple(float(v) for v in xyz[i]),
                        float(r[i]), float(theta[i]), int(counts[labels[i]])) for i in order]


def site_predictions(site: LatticeSite, const: Constants = CONST) -> CouplingPair:
    return dipolar_coupling(DipoleGeometry(site.r, site.theta), const)


def _predictions(sites) -> tuple[np.ndarray, np.ndarray]:
    """(delta, omega) arrays; same values as ``site_predictions`` per site."""
    omega, delta = dipolar_coupling_array([s.r for s in sites], [s.theta for s in sites])
    return delta, omega


def _first_seen_labels(keys: np.ndarray) -> np.ndarray:
    """Integer label per row of ``keys``, numbered in order of first appearance."""
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=int)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inv.reshape(-1)]


def degeneracy_groups(sites) -> np.ndarray:
    """Group label per site: sites with identical predicted (delta, |omega|) share one."""
    d, o = _predictions(sites)
    scale = max(float(np.max(np.abs(np.r_[d, o]))), 1.0)
    keys = np.round(np.column_stack([d, np.abs(o)]) / scale * 1e9).astype(np.int64)
    return _first_seen_labels(keys)


@dataclass(frozen=True)
class PosteriorMap:
    sites: tuple[LatticeSite, ...]
    prob: np.ndarray
    sets: dict             # level -> tuple of site indices
    groups: np.ndarray
    warning: str = ""

    def as_dict(self) -> dict:
        s68, s95 = (set(self.sets[lev]) for lev in LEVELS)
        return {
            "warning": self.warning,
            "sets": {str(round(lev * 100)): list(self.sets[lev]) for lev in LEVELS},
            "sites": [
                {"index": i, "indices": list(s.indices), "xyz": list(s.position),
                 "prob": float(self.prob[i]), "in68": i in s68, "in95": i in s95}
                for i, s in enumerate(self.sites)
            ],
        }


def _z_scores(sites, delta_hat, sigma_delta, omega_hat, sigma_omega):
    d, o = _predictions(sites)
    zd = (d - delta_hat) / sigma_delta if math.isfinite(sigma_delta) else np.zeros(len(d))
    if omega_hat is None or not math.isfinite(sigma_omega):
        zo = np.zeros(len(d))
    else:
        zo = (np.abs(o) - omega_hat) / sigma_omega
    return zd, zo


def _confidence_sets(prob: np.ndarray, groups: np.ndarray) -> dict:
    n_groups = int(groups.max()) + 1
    gmass = np.bincount(groups, weights=prob, minlength=n_groups)
    gsize = np.bincount(groups, minlength=n_groups)
    per_site = gmass / gsize
    # highest per-site probability first; ties resolved by first site index
    first = np.full(n_groups, len(groups))
    np.minimum.at(first, groups, np.arange(len(groups)))
    order = sorted(range(n_groups), key=lambda g: (-per_site[g], first[g]))
    cum = np.cumsum(gmass[order])
    out = {}
    for lev in LEVELS:
        k = int(np.searchsorted(cum, lev - 1e-12)) + 1
        chosen = set(order[:min(k, n_groups)])
        out[lev] = tuple(i for i in range(len(groups)) if groups[i] in chosen)
    return out


def localize(delta_hat: float, sigma_delta: float, omega_hat: float | None, sigma_omega: float | None,
             sites) -> PosteriorMap:
    """Posterior over ``sites`` for one spin given its measured couplings (Hz).

    Flat prior; Gaussian likelihood in delta and in |omega|.  ``omega_hat``
    may be None for a delta-only map.  Confidence sets are built from whole
    groups of sites that predict the same couplings, in order of decreasing
    probability, until the 68 % / 95 % mass is reached.
    """
    sites = tuple(sites)
    if not sites:
        raise LocalizationError("no candidate sites")
    if not sigma_delta > 0 or (omega_hat is not None and not (sigma_omega or 0) > 0):
        raise LocalizationError("uncertainties must be positive")
    warning = ""
    if omega_hat is None:
        warning = "no omega given: delta-only localization (ring-shaped regions)"
        sigma_omega = math.inf
    else:
        omega_hat = abs(omega_hat)
    zd, zo = _z_scores(sites, delta_hat, sigma_delta, omega_hat, sigma_omega)
    loglik = -0.5 * (zd**2 + zo**2)
    top = float(loglik.max())
    if top < LOG_UNDERFLOW:
        best = np.argsort(-loglik, kind="stable")[:5]
        lines = [f"site {list(sites[i].indices)} r={sites[i].r * 1e9:.3f} nm: "
                 f"z_delta={zd[i]:.1f} z_omega={zo[i]:.1f}" for i in best]
        raise LocalizationError("no site is compatible with the couplings; best candidates:\n  "
                                + "\n  ".join(lines))
    w = np.exp(loglik - top)
    prob = w / w.sum()
    if -2 * top > CHI2_COMPATIBLE:
        i = int(np.argmax(loglik))
        warning = (warning + "; " if warning else "") + (
            f"best site is a poor match (z_delta={zd[i]:.1f}, z_omega={zo[i]:.1f})")
    if not math.isfinite(sigma_delta) and not math.isfinite(sigma_omega):
        warning = (warning + "; " if warning else "") + "infinite uncertainties: uniform map"
    groups = degeneracy_groups(sites)
    return PosteriorMap(sites, prob, _confidence_sets(prob, groups), groups, warning)


@dataclass(frozen=True)
class Circle:
    r_perp: float
    z: float
    prob: float
    multiplicity: int
    level: str            # "68", "95" or ""


def project_rperp(pm: PosteriorMap) -> list[Circle]:
    """Aggregate sites onto (r_perp, z) circles with summed probability."""
    keys = _class_keys(np.array([s.position for s in pm.sites]))
    s68, s95 = (set(pm.sets[lev]) for lev in LEVELS)
    acc: dict = {}
    for i, (k, s) in enumerate(zip(map(tuple, keys), pm.sites)):
        c = acc.setdefault(k, [s.r_perp, s.z, 0.0, 0, 2])
        c[2] += float(pm.prob[i])
        c[3] += 1
        c[4] = min(c[4], 0 if i in s68 else 1 if i in s95 else 2)
    out = [Circle(rp, z, p, m, ("68", "95", "")[lv]) for rp, z, p, m, lv in acc.values()]
    return sorted(out, key=lambda c: (c.z, c.r_perp))


def circles_to_csv(circles, header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r_perp", "z", "prob", "multiplicity", "set"])
    for c in circles:
        w.writerow([format(c.r_perp, ".12g"), format(c.z, ".12g"), format(c.prob, ".12g"),
                    c.multiplicity, c.level])
    return buf.getvalue()


def posterior_to_json(pm: PosteriorMap, **meta) -> str:
    d = dict(meta)
    d.update(pm.as_dict())
    return json.dumps(d, sort_keys=True, allow_nan=False, indent=2) + "\n"


def forward_noisy(site: LatticeSite, rel: float, rng: np.random.Generator, floor: float = 1.0):
    """Couplings of ``site`` with relative Gaussian noise; returns (d, sd, o, so)."""
    c = site_predictions(site)
    sd = max(rel * abs(c.delta), floor)
    so = max(rel * abs(c.omega), floor)
    return c.delta + rng.normal(0, sd), sd, abs(c.omega + rng.normal(0, so)), so


def coverage(true_radius: float = 1.5e-9, search_radius: float = 3e-9, *, n_draws: int = 100,
             rel: float = 0.05, level: float = 0.95, seed: int = 0) -> dict:
    """Forward-inverse check: how often each true site lands in the ``level`` set.

    Every site within ``true_radius`` generates ``n_draws`` noisy coupling
    pairs (relative error ``rel``, 1 Hz floor); each is localized over all
    sites within ``search_radius``.  Returns ``{site indices: hit rate}``.
    Sites predicting the same couplings give identical maps, so each
    degeneracy group is simulated once and its rate shared.
    """
    from scipy import sparse

    cand = generate_sites(search_radius)
    groups = degeneracy_groups(cand)
    n_groups = int(groups.max()) + 1
    gsize = np.bincount(groups, minlength=n_groups)
    G = sparse.csr_matrix((np.ones(len(cand)), (np.arange(len(cand)), groups)),
                          shape=(len(cand), n_groups))
    d_all, o_all = _predictions(cand)
    o_all = np.abs(o_all)
    rng = np.random.default_rng(seed)
    rates: dict = {}
    done: dict = {}
    for i, s in enumerate(cand):
        if s.r > true_radius * (1 + 1e-12):
            continue
        g = groups[i]
        if g not in done:
            sd = max(rel * abs(d_all[i]), 1.0)
            so = max(rel * o_all[i], 1.0)
            dh = d_all[i] + rng.normal(0, sd, n_draws)
            oh = np.abs(o_all[i] + rng.normal(0, so, n_draws))
            # sites further than 12 sigma from the truth carry no mass; groups stay whole
            near = np.flatnonzero((np.abs(d_all - d_all[i]) < 12 * sd)
                                  & (np.abs(o_all - o_all[i]) < 12 * so))
            ll = -0.5 * (((d_all[near][None, :] - dh[:, None]) / sd) ** 2
                         + ((o_all[near][None, :] - oh[:, None]) / so) ** 2)
            w = np.exp(ll - ll.max(axis=1, keepdims=True))
            P = w / w.sum(axis=1, keepdims=True)
            gl = np.unique(groups[near])
            Gs = G[near][:, gl]
            gm = np.asarray(Gs.T @ P.T).T
            order = np.argsort(-(gm / gsize[gl]), axis=1, kind="stable")
            cum = np.cumsum(np.take_along_axis(gm, order, axis=1), axis=1)
            k = (cum < level - 1e-12).sum(axis=1) + 1
            rank = np.argmax(order == np.searchsorted(gl, g), axis=1)
            done[g] = float(np.mean(rank < k))
        rates[s.indices] = done[g]
    return rates
