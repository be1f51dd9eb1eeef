import json
import math

import numpy as np
import pytest

from spincluster import lattice as lat
from spincluster.physics import DomainError


@pytest.fixture(scope="module")
def sites2():
    return lat.generate_sites(2e-9)


def test_nearest_neighbours():
    near = lat.generate_sites(0.16e-9)
    assert len(near) == 3
    assert len(lat.generate_sites(0.16e-9, exclude_nv=False)) == 4
    assert all(s.r == pytest.approx(math.sqrt(3) / 4 * lat.LATTICE_CONSTANT) for s in near)
    assert lat.generate_sites(0.1e-9) == []


def test_radius_domain():
    for r in (0.0, -1e-9, 6e-9, float("nan")):
        with pytest.raises(DomainError):
            lat.generate_sites(r)


def test_number_density():
    r = 4e-9
    n = len(lat.generate_sites(r))
    assert n / (4 / 3 * math.pi * r**3) == pytest.approx(lat.NUMBER_DENSITY, rel=0.05)


def test_count_scales_with_volume(sites2):
    n1 = len(lat.generate_sites(1e-9))
    assert len(sites2) / n1 == pytest.approx(8, rel=0.1)


def test_ordering_and_invariants(sites2):
    rs = np.array([s.r for s in sites2])
    assert np.all(np.diff(rs) > -1e-20)
    for s in sites2:
        assert s.r == pytest.approx(math.hypot(s.r_perp, s.z))
        assert 0 <= s.theta <= math.pi
        assert s.indices != lat.NV_NITROGEN
    keys = lat._class_keys(np.array([s.position for s in sites2]))
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    assert [s.multiplicity for s in sites2] == list(counts[inv.reshape(-1)])


def test_on_axis_sites_have_zero_rperp(sites2):
    axis = [s for s in sites2 if all(v == s.indices[0] for v in s.indices)]
    assert axis
    for s in axis:
        assert s.r_perp == pytest.approx(0.0, abs=1e-20)
        assert s.multiplicity == 1


def test_generic_sites_have_multiplicity_six(sites2):
    assert any(s.multiplicity == 6 for s in sites2)


def test_threefold_rotation_maps_lattice_onto_itself(sites2):
    c, s = math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    xyz = np.array([st.position for st in sites2])
    rot = xyz @ R.T
    key = lambda a: set(map(tuple, np.round(a * 1e14).astype(np.int64)))
    assert key(rot) == key(xyz)


def test_rotation_matrix_is_orthonormal():
    assert np.allclose(lat.ROTATION @ lat.ROTATION.T, np.eye(3))
    assert np.allclose(lat.ROTATION[2], np.ones(3) / math.sqrt(3))


def test_vectorized_predictions_match_scalar(sites2):
    d, o = lat._predictions(sites2[:50])
    for s, dd, oo in zip(sites2[:50], d, o):
        c = lat.site_predictions(s)
        assert dd == pytest.approx(c.delta, rel=1e-12)
        assert oo == pytest.approx(c.omega, rel=1e-12)


def test_posterior_is_normalized(sites2):
    s = sites2[40]
    c = lat.site_predictions(s)
    pm = lat.localize(c.delta, 0.05 * abs(c.delta), c.omega, 0.05 * abs(c.omega), sites2)
    assert pm.prob.sum() == pytest.approx(1.0)
    assert np.all(pm.prob >= 0)
    i = sites2.index(s)
    assert i in pm.sets[0.68] and set(pm.sets[0.68]) <= set(pm.sets[0.95])
    groups = pm.groups
    for lev in lat.LEVELS:
        members = set(pm.sets[lev])
        for g in {groups[j] for j in members}:
            assert set(np.flatnonzero(groups == g)) <= members
        assert pm.prob[list(members)].sum() >= lev - 1e-12


def test_uniform_map_covers_about_68_percent(sites2):
    pm = lat.localize(1e6, math.inf, 1e5, math.inf, sites2)
    assert "uniform" in pm.warning
    assert np.allclose(pm.prob, 1 / len(sites2))
    frac = len(pm.sets[0.68]) / len(sites2)
    assert 0.68 <= frac < 0.70


def test_noise_free_round_trip(sites2):
    hits = n = 0
    for i, s in enumerate(sites2):
        if s.r > 1e-9:
            break
        n += 1
        c = lat.site_predictions(s)
        pm = lat.localize(c.delta, max(0.01 * abs(c.delta), 1.0), c.omega,
                          max(0.01 * abs(c.omega), 1.0), sites2)
        hits += i in set(pm.sets[0.68])
    assert hits / n > 0.99


def test_delta_only_map_warns(sites2):
    pm = lat.localize(-1.0e6, 5e4, None, None, sites2)
    assert "delta-only" in pm.warning


def test_incompatible_couplings_raise(sites2):
    with pytest.raises(lat.LocalizationError) as ei:
        lat.localize(1e9, 1.0, 1e9, 1.0, sites2)
    assert "best candidates" in str(ei.value)
    with pytest.raises(lat.LocalizationError):
        lat.localize(1e6, 0.0, 1e5, 1e3, sites2)
    with pytest.raises(lat.LocalizationError):
        lat.localize(1e6, 1e3, 1e5, 1e3, [])


def test_poor_match_warning(sites2):
    c = lat.site_predictions(sites2[0])
    pm = lat.localize(c.delta * 1.3, 0.05 * abs(c.delta), c.omega, 0.05 * abs(c.omega), sites2[:1])
    assert "poor match" in pm.warning


def test_projection_conserves_probability(sites2):
    c = lat.site_predictions(sites2[100])
    pm = lat.localize(c.delta, 0.1 * abs(c.delta), c.omega, 0.1 * abs(c.omega), sites2)
    circles = lat.project_rperp(pm)
    assert sum(ci.prob for ci in circles) == pytest.approx(1.0)
    assert sum(ci.multiplicity for ci in circles) == len(sites2)
    csv = lat.circles_to_csv(circles, "# test\n")
    assert csv.splitlines()[1] == "r_perp,z,prob,multiplicity,set"
    assert len(csv.splitlines()) == len(circles) + 2
    d = json.loads(lat.posterior_to_json(pm, spin=1))
    assert d["spin"] == 1


def test_coverage_small_shell():
    rates = lat.coverage(true_radius=0.3e-9, search_radius=1e-9, n_draws=200, seed=1)
    assert len(rates) == len(lat.generate_sites(0.3e-9))
    assert min(rates.values()) >= 0.9
