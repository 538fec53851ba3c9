import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alloyloc.lattice import Box, sup_norm
from alloyloc.uncertainty import (DegenerateProjection, Infeasible,
                                  ParameterSchedule, ScheduleError,
                                  SupportViolation, construct_b, dft, dft_matrix,
                                  idft, schedule_parameters, up_experiment,
                                  write_up_csv)


def naive_dft(a, N, dim):
    """Direct double sum over sites, independent of the Kronecker build."""
    sites = Box.centered(N, dim).sites()
    q = 2 * N + 1
    phase = np.exp(-2j * np.pi * (sites @ sites.T) / q)
    return phase @ a / q ** (dim / 2)


@pytest.mark.parametrize("N, dim", [(2, 1), (4, 1), (7, 1), (2, 2), (4, 2)])
def test_dft_unitary_and_roundtrip(N, dim):
    rng = np.random.default_rng(N * 10 + dim)
    a = rng.standard_normal((2 * N + 1) ** dim) + 1j * rng.standard_normal((2 * N + 1) ** dim)
    ah = dft(a, N, dim)
    assert abs(np.linalg.norm(ah) - np.linalg.norm(a)) < 1e-12 * np.linalg.norm(a)
    assert np.abs(idft(ah, N, dim) - a).max() < 1e-12
    assert np.allclose(ah, naive_dft(a, N, dim), atol=1e-12)


def test_dft_of_delta():
    for N, dim in [(3, 1), (2, 2)]:
        a = np.zeros((2 * N + 1) ** dim)
        a[a.size // 2] = 1.0
        assert np.allclose(dft(a, N, dim), (2 * N + 1) ** (-dim / 2))


def test_dft_matrix_unitary():
    F = dft_matrix(3, 2)
    assert np.abs(F.conj().T @ F - np.eye(F.shape[0])).max() < 1e-12


def test_dft_shape_check():
    with pytest.raises(ValueError):
        dft(np.ones(6), 2, 1)


# ---------------------------------------------------------------------------
# schedules

def test_schedule_example():
    s = schedule_parameters(50, 1e-8)
    assert (s.N0, s.L, s.Lp, s.K, s.Kp) == (52, 2, 1, 10, 17)
    assert 2 * s.N0 + 1 == 105 == 15 * 7
    assert s.warnings()  # K/K' = 10/17 is far from small


def test_schedule_requires_strict_order():
    with pytest.raises(ScheduleError):
        ParameterSchedule.from_factors(1, 1, 1, 1)
    with pytest.raises(ScheduleError):
        schedule_parameters(50, 0.5)  # L = L' = 1


def test_schedule_rejects_bad_factorization():
    with pytest.raises(ScheduleError) as err:
        ParameterSchedule(10, 1e-8, 2, 1, 3, 3, 1e-6)
    assert "(2L+1)(2K+1)" in str(err.value)


def test_schedule_target_too_small():
    with pytest.raises(ScheduleError):
        schedule_parameters(3, 1e-8)


def test_schedule_symbolic_formulas():
    s = schedule_parameters(50, 1e-8)
    assert s.log10_delta_formula == pytest.approx(-1000 * math.log10(math.log(52)))
    assert s.log10_gamma0_formula == pytest.approx(-2000 * math.log10(math.log(52 ** 2)))
    assert s.gamma0 == 1e-6
    assert set(s.to_dict()) >= {"N0", "L", "Lp", "K", "Kp", "warnings"}


@given(st.integers(20, 2000), st.floats(1e-14, 1e-6))
def test_schedule_arithmetic(target, delta):
    try:
        s = schedule_parameters(target, delta)
    except (ScheduleError, Infeasible):
        return
    q = 2 * s.N0 + 1
    assert s.N0 >= target
    assert (2 * s.L + 1) * (2 * s.K + 1) == q
    assert (2 * s.Lp + 1) * (2 * s.Kp + 1) == q
    assert s.Lp < s.L and s.K < s.Kp
    assert s.violations() == []
    # the first admissible scale is returned
    div = (2 * s.L + 1) * (2 * s.Lp + 1)
    assert all((2 * n + 1) % div for n in range(target, s.N0))


# ---------------------------------------------------------------------------
# construct_b

def up_schedule(Kp):
    return ParameterSchedule.from_factors(L=Kp, Lp=1, K=1, Kp=Kp)


def test_delta_input_is_fixed_point():
    s = ParameterSchedule.from_factors(L=4, Lp=1, K=0, Kp=1)
    a = np.zeros(2 * s.N0 + 1)
    a[s.N0] = 1.0
    res = construct_b(a, s)
    assert res.rel_error < 1e-14
    assert np.allclose(res.b, a, atol=1e-14)


def test_support_violation():
    s = up_schedule(5)
    a = np.zeros(2 * s.N0 + 1)
    a[s.N0 + s.K + 1] = 1.0
    with pytest.raises(SupportViolation):
        construct_b(a, s)


def test_zero_input_degenerate():
    s = up_schedule(3)
    with pytest.raises(DegenerateProjection):
        construct_b(np.zeros(2 * s.N0 + 1), s)


def coset_defect_oracle(b, sched, dim=1):
    """Max spread of b^ over each coset, read off independently."""
    N0, Lp = sched.N0, sched.Lp
    bh = naive_dft(b, N0, dim)
    sites = Box.centered(N0, dim).sites()
    q = 2 * N0 + 1
    groups = {}
    for idx, n in enumerate(sites):
        rep = tuple(np.floor_divide(n + Lp, 2 * Lp + 1))
        groups.setdefault(rep, []).append(bh[idx])
    assert len(groups) == (2 * sched.Kp + 1) ** dim
    assert sum(len(v) for v in groups.values()) == q ** dim
    return max(np.ptp(np.real(v)) + np.ptp(np.imag(v)) for v in groups.values())


@pytest.mark.parametrize("Kp", [3, 5, 9, 15])
def test_construct_b_exact_properties(Kp):
    s = up_schedule(Kp)
    rng = np.random.default_rng(Kp)
    box = Box.centered(s.N0, 1)
    inside = sup_norm(box.sites()) <= s.K
    for _ in range(10):
        a = np.zeros(box.size, dtype=complex)
        a[inside] = rng.standard_normal(inside.sum()) + 1j * rng.standard_normal(inside.sum())
        res = construct_b(a, s)
        assert res.coset_constancy_defect < 1e-10
        assert res.norm_defect < 1e-10
        assert coset_defect_oracle(res.b, s) < 1e-10
        assert abs(np.linalg.norm(res.b) - np.linalg.norm(a)) < 1e-10


def test_construct_b_two_dimensional():
    s = ParameterSchedule.from_factors(L=2, Lp=1, K=1, Kp=2)
    rng = np.random.default_rng(0)
    box = Box.centered(s.N0, 2)
    a = np.where(sup_norm(box.sites()) <= s.K, rng.standard_normal(box.size), 0.0)
    res = construct_b(a, s, dim=2)
    assert res.coset_constancy_defect < 1e-10 and res.norm_defect < 1e-10
    assert coset_defect_oracle(res.b, s, dim=2) < 1e-10


def test_up_experiment_trend():
    rows = up_experiment([up_schedule(k) for k in (3, 5, 9, 15)], draws=40, seed=1)
    means = [r["mean"] for r in rows]
    assert all(x >= y for x, y in zip(means, means[1:]))
    assert [r["ratio"] for r in rows] == pytest.approx([1 / 3, 1 / 5, 1 / 9, 1 / 15])


def test_up_csv(tmp_path):
    rows = up_experiment([up_schedule(3)], draws=5, seed=0)
    path = tmp_path / "up.csv"
    write_up_csv(rows, path, header_comment="test")
    lines = path.read_text().splitlines()
    assert lines[0] == "# test"
    data = list(csv.DictReader(lines[1:]))
    assert data[0]["K"] == "1" and data[0]["Kp"] == "3"
    assert float(data[0]["mean_rel_error"]) == rows[0]["mean"]
