import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alloyloc.green import GoodnessThresholds
from alloyloc.lattice import Box, build_cover, sup_norm
from alloyloc.model import (BoxHamiltonian, analyze_symbol,
                            assemble_hamiltonian, constant_config,
                            default_potential, laplacian_kernel, sample_config,
                            spectral_edge)
from alloyloc.msa import (CrossingDetected, DegenerateEigenvalue,
                          NoQualifyingLabel, SeparationViolated,
                          block_goodness, double_bad_probability,
                          eigen_variation, energy_grid,
                          finite_difference_variation, influence,
                          influence_bounds, localization_report, msa_run,
                          scale_schedule, select_free_sites, wegner_distances,
                          wegner_estimate)
from alloyloc.randomness import ConfigSampler, evaluate_trials
from alloyloc.uncertainty import ParameterSchedule, schedule_parameters

KERNEL = laplacian_kernel(1)
PROFILE = analyze_symbol(KERNEL)


def random_hamiltonian(N, lam, seed):
    p = default_potential(1, lam=lam)
    box = Box((0,), N)
    cfg = sample_config(seed, box.grown(p.truncation_radius))
    return p, box, cfg, assemble_hamiltonian(box, KERNEL, p, cfg)


# ---------------------------------------------------------------------------
# scales and covers

def test_scale_schedule_example():
    s = scale_schedule(schedule_parameters(50, 1e-8), 3)
    assert s.scales == (52, 194, 1123)
    assert s.violations() == []
    assert round(52 ** (4 / 3)) == 194 and round(194 ** (4 / 3)) == 1123


def test_scale_schedule_depth_one():
    assert scale_schedule(52, 1).scales == (52,)
    with pytest.raises(ValueError):
        scale_schedule(52, 0)


@given(st.integers(100, 5000), st.integers(1, 4))
def test_scale_ratios(N0, depth):
    s = scale_schedule(N0, depth)
    for a, b in zip(s.scales, s.scales[1:]):
        assert 4 / 3 * 0.99 <= math.log(b) / math.log(a) <= 4 / 3 * 1.01


def test_violations_detects_off_band():
    from alloyloc.msa import ScaleSchedule
    assert ScaleSchedule((52, 250)).violations()


# ---------------------------------------------------------------------------
# free sites

def test_free_sites_all_qualify():
    cover = build_cover(420, 4)
    labels = list(cover.labels)
    r0 = min(labels, key=lambda r: abs(r[0]))
    sel = select_free_sites(cover, labels, r0)
    assert sel.block_side == 1
    chosen = set(sel.R_set)
    # every label outside the exclusion cube survives, none inside it does
    assert all(abs(r[0] - r0[0]) > 40 for r in chosen)
    expected = {r for r in labels if abs(r[0] - r0[0]) > 40 and
                abs(cover.labels[r][0] - cover.labels[r0][0]) > 200}
    assert chosen == expected
    assert len(chosen) > 0


def test_free_sites_one_per_block():
    cover = build_cover(2000, 30)
    labels = list(cover.labels)
    r0 = min(labels, key=lambda r: abs(r[0]))
    sel = select_free_sites(cover, lambda r: True, r0, exclusion=0, min_distance=0)
    side = math.ceil(math.log(30) ** 2 / 3)
    assert sel.block_side == side
    lo = min(r[0] for r in labels)
    keys = [(r[0] - lo) // side for r in sel.R_set]
    assert len(keys) == len(set(keys))


def test_free_sites_distance_invariant():
    cover = build_cover(600, 4)
    r0 = (0,) if (0,) in cover.labels else sorted(cover.labels)[len(cover.labels) // 2]
    sel = select_free_sites(cover, lambda r: True, r0, block_side=3)
    assert len(sel.free_sites) > 0
    c0 = np.asarray(cover.labels[r0])
    for s in sel.free_sites:
        assert sup_norm(np.asarray(s) - c0) > 50 * cover.N


def test_free_sites_none_qualify():
    cover = build_cover(100, 4)
    with pytest.raises(NoQualifyingLabel):
        select_free_sites(cover, [], sorted(cover.labels)[0])


def test_free_sites_bad_r0():
    cover = build_cover(100, 4)
    with pytest.raises(KeyError):
        select_free_sites(cover, list(cover.labels), (10_000,))


# ---------------------------------------------------------------------------
# eigenvalue variation

def test_single_site_variation():
    p = default_potential(1, lam=1.0)
    box = Box((0,), 0)
    H = assemble_hamiltonian(box, KERNEL, p, constant_config(box))
    assert eigen_variation(H, p, (0,), 0) == pytest.approx(1.0, abs=1e-15)


def test_variation_matches_finite_difference():
    errs = []
    for seed in range(20):
        p, box, cfg, H = random_hamiltonian(16, 1.0, seed)
        vecs = H.eigh()[1]
        site = (int(box.sites()[np.argmax(np.abs(vecs[:, -1])), 0]),)
        f = eigen_variation(H, p, site, -1)
        fd = finite_difference_variation(H, p, site, -1)
        errs.append(abs(f - fd) / abs(fd))
    assert max(errs) < 1e-5


@given(st.integers(0, 10_000), st.integers(-12, 12), st.floats(0.1, 4.0))
def test_variation_positive(seed, site, lam):
    p, box, cfg, H = random_hamiltonian(12, lam, seed)
    try:
        assert eigen_variation(H, p, (site,), -1) > 0
    except DegenerateEigenvalue:
        pass


def test_degenerate_eigenvalue_rejected():
    p = default_potential(1, lam=1.0)
    H = BoxHamiltonian(Box((0,), 1), np.diag([1.0, 1.0, 0.0]), {})
    with pytest.raises(DegenerateEigenvalue):
        eigen_variation(H, p, (0,), -1)


@pytest.mark.parametrize("seed", range(5))
def test_eigenvalues_monotone_in_free_coordinate(seed):
    p, box, cfg, _ = random_hamiltonian(10, 1.0, seed)
    site = (3,)
    ts = np.linspace(-1, 1, 12)
    spectra = [np.linalg.eigvalsh(assemble_hamiltonian(
        box, KERNEL, p, cfg.with_overrides({site: t})).matrix) for t in ts]
    assert np.all(np.diff(np.array(spectra), axis=0) >= -1e-12)


# ---------------------------------------------------------------------------
# influence

def test_single_site_influence():
    p = default_potential(1, lam=1.0)
    box = Box((0,), 0)
    rep = influence(box, KERNEL, p, constant_config(box), (0,), 0)
    assert rep.I_l == pytest.approx(2.0, abs=1e-12)
    assert rep.I_quadrature == pytest.approx(2.0, abs=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_influence_two_ways(seed):
    p, box, cfg, H = random_hamiltonian(12, 2.0, seed)
    peak = int(box.sites()[np.argmax(np.abs(H.eigh()[1][:, -1])), 0])
    try:
        rep = influence(box, KERNEL, p, cfg, (peak,), -1, gamma_N=0.5)
    except CrossingDetected:
        return
    assert rep.I_l >= 0
    assert abs(rep.I_l - rep.I_quadrature) < 1e-6
    lo, hi = rep.margins()
    assert math.isfinite(lo) and math.isfinite(hi)


def test_influence_bounds_shape():
    la, lb = influence_bounds(27, 0.5, C1=1.0, C2=2.0)
    base = math.log(27) ** 2 * 27
    assert la == pytest.approx(2 * base) and lb == pytest.approx(0.5 * base)


def test_influence_decreases_with_distance():
    p = default_potential(1, lam=2.0)
    box = Box((0,), 30)
    means = {2: [], 8: [], 16: []}
    for seed in range(12):
        cfg = sample_config(seed, box.grown(p.truncation_radius))
        H = assemble_hamiltonian(box, KERNEL, p, cfg)
        peak = int(box.sites()[np.argmax(np.abs(H.eigh()[1][:, -1])), 0])
        for d in means:
            site = peak + d if peak + d <= 30 else peak - d
            try:
                means[d].append(influence(box, KERNEL, p, cfg, (site,), -1, points=11).I_l)
            except CrossingDetected:
                pass
    avg = [np.mean(means[d]) for d in (2, 8, 16)]
    assert avg[0] > avg[1] > avg[2]


# ---------------------------------------------------------------------------
# Wegner and double-bad estimates

def test_wegner_extremes():
    p = default_potential(1, lam=1.0)
    E = spectral_edge(p, PROFILE) - 1.0
    assert wegner_estimate(p, KERNEL, 10, E, 100.0, 20, 0).p_hat == 1.0
    assert wegner_estimate(p, KERNEL, 10, E, 1e-300, 20, 0).p_hat == 0.0
    with pytest.raises(ValueError):
        wegner_estimate(p, KERNEL, 10, E, 0.0, 20, 0)


def test_wegner_monotone_in_eta():
    p = default_potential(1, lam=1.0)
    E = spectral_edge(p, PROFILE) - 0.5
    dist = wegner_distances(p, KERNEL, Box((0,), 15), E, 200, 4)
    ps = [wegner_estimate(p, KERNEL, 15, E, eta, 200, 4, distances=dist).p_hat
          for eta in (0.001, 0.01, 0.05, 0.1, 0.5)]
    assert all(a <= b for a, b in zip(ps, ps[1:]))
    direct = wegner_estimate(p, KERNEL, 15, E, 0.05, 200, 4)
    assert direct.p_hat == ps[2]


def test_energy_grid_spacing():
    g = energy_grid(5.0, 0.2, 0.01)
    assert g[0] == pytest.approx(4.9) and g[-1] == 5.0
    assert np.diff(g).max() <= 0.005 + 1e-15


def test_double_bad_separation():
    p = default_potential(1, lam=1.0)
    with pytest.raises(SeparationViolated):
        double_bad_probability(p, KERNEL, 10, (0,), (22,), [4.5], GoodnessThresholds(0.5), 5, 0)


def test_double_bad_free_operator():
    p = default_potential(1, lam=0.0)
    est = double_bad_probability(p, KERNEL, 10, (0,), (40,), [0.5, 1.0], GoodnessThresholds(0.25), 20, 0)
    assert est.p_hat == 1.0


def test_double_bad_independence():
    p = default_potential(1, lam=1.0)
    E = spectral_edge(p, PROFILE) - 0.5
    th = GoodnessThresholds(0.9)
    trials = 600
    both = double_bad_probability(p, KERNEL, 10, (0,), (40,), [E], th, trials, 8, fixed_energy=True)[0]
    # the same seeded configs (smallest box holding both blocks, plus one)
    g1, g2 = block_goodness(KERNEL, p, E, 10, (0,)), block_goodness(KERNEL, p, E, 10, (40,))
    res = evaluate_trials([lambda c: not g1(c, th), lambda c: not g2(c, th)],
                          ConfigSampler(Box((20,), 31 + p.truncation_radius)), trials, 8)
    assert both.hits == int((res[:, 0] & res[:, 1]).sum())
    p1, p2 = res.mean(axis=0)
    # both ~ p1 p2 within the sampling error of the product
    se = math.sqrt(p1 * p2 * (1 - p1 * p2) / trials) + math.sqrt(p1 * (1 - p1) / trials) * p2 \
        + math.sqrt(p2 * (1 - p2) / trials) * p1
    assert abs(both.p_hat - p1 * p2) <= 3 * se


# ---------------------------------------------------------------------------
# localization diagnostics

def test_delta_eigenvectors():
    H = BoxHamiltonian(Box((0,), 2), np.diag([1.0, 2.0, 3.0, 4.0, 5.0]), {})
    for d in localization_report(H):
        assert d.ipr == pytest.approx(1.0)
        assert d.concentration_radius == 0
    assert localization_report(H, top=1)[0].peak_site == (2,)


def test_free_states_are_extended():
    p = default_potential(1, lam=0.0)
    box = Box((0,), 100)
    H = assemble_hamiltonian(box, KERNEL, p, constant_config(box))
    for d in localization_report(H, top=5):
        assert d.ipr < 10 / box.size
        assert abs(d.decay_slope) < 0.05
        assert d.concentration_radius > box.radius / 2


def test_disordered_edge_states_localize():
    p = default_potential(1, lam=2.0)
    box = Box((0,), 150)
    H = assemble_hamiltonian(box, KERNEL, p, sample_config(0, box.grown(p.truncation_radius)))
    E = spectral_edge(p, PROFILE)
    reps = localization_report(H, edge_window=(E - 3.0, E))
    assert len(reps) > 0
    assert reps[0].eigenvalue >= reps[-1].eigenvalue
    assert all(r.decay_slope > 0 for r in reps[:5])
    assert all(r.concentration_radius < 30 for r in reps[:5])


# ---------------------------------------------------------------------------
# run record

def test_msa_run_record():
    p = default_potential(1, lam=5.0)
    sched = ParameterSchedule.from_factors(L=1, Lp=0, K=5, Kp=16)  # N0 = 16
    rec = msa_run(KERNEL, p, sched, depth=2, trials=5, seed=1, influence_count=2)
    assert rec["scales"]["scales"] == [16, 40]
    assert rec["classifications"][0]["N"] == 16
    assert rec["wegner"]["trials"] == 5
    assert "free_sites" in rec and isinstance(rec["influence"], list)
    again = msa_run(KERNEL, p, sched, depth=2, trials=5, seed=1, influence_count=2)
    assert again == rec
