import dataclasses
import json

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from surface_stokes.killing import (
    FilterPolicy,
    comparison_sides,
    filter_velocity,
    forcing_diagnostics,
    forcing_filter_pipeline,
    threshold_select,
    threshold_value,
    write_reports,
)
from surface_stokes.solver import SaddleFactorization, solve_eigen, solve_stokes

C11 = (1e-6, 0.0096, 0.0096)  # lambda_1..3 for c = 1.1


def test_policy_parsing():
    assert FilterPolicy.parse("none").mode == "none"
    assert FilterPolicy.parse("manual").mode == "manual_analytic"
    assert FilterPolicy.parse("known:2") == FilterPolicy("known_dim", dim=2)
    assert FilterPolicy.parse("auto:3/2").alpha == 1.5
    assert FilterPolicy.parse("forcing").mode == "forcing_filter"
    for p in ("none", "manual", "known:3", "auto:1.5", "forcing"):
        assert FilterPolicy.parse(p).label() == p
    for bad in ("auto:2", "known:4", "bogus", "auto:"):
        with pytest.raises(ValueError):
            FilterPolicy.parse(bad)


@pytest.mark.parametrize(
    "h,alpha,t,J",
    [
        (0.1, 1.0, 0.08, (1, 2, 3)),
        (0.02, 1.0, 0.0192, (1, 2, 3)),
        (0.005, 1.0, 0.00495, (1,)),
        (0.05, 1.5, 0.05**1.5 - 0.005, (1,)),
    ],
)
def test_threshold_examples(h, alpha, t, J):
    assert threshold_value(h, alpha) == pytest.approx(t)
    assert threshold_select(C11, h, alpha) == J


def test_threshold_includes_negative_and_validates():
    assert threshold_select((-1e-3, 0.5, 0.6), 0.1, 1.0) == (1,)
    assert threshold_select((0.5, 0.6, 0.7), 0.1, 1.0) == ()
    with pytest.raises(ValueError):
        threshold_select((0.1, 0.2), 0.1, 1.0)
    with pytest.raises(ValueError):
        threshold_select(C11, 1.5, 1.0)
    with pytest.raises(ValueError):
        threshold_select(C11, 0.1, 2.0)


@given(
    lam=st.lists(st.floats(-0.01, 1.0), min_size=3, max_size=3),
    h=st.floats(0.001, 1.0),
    a1=st.floats(1.0, 1.99),
    a2=st.floats(1.0, 1.99),
)
def test_threshold_monotone(lam, h, a1, a2):
    lo, hi = max(a1, a2), min(a1, a2)  # larger alpha gives a smaller threshold
    small = set(threshold_select(lam, h, lo))
    large = set(threshold_select(lam, h, hi))
    assert small <= large


def test_comparison_examples():
    left, right = comparison_sides(0.0, 0.1)
    assert left == 0 and right == pytest.approx(100.0)
    left, right = comparison_sides(0.40, 0.1)
    assert left == pytest.approx(0.40 / (0.40 + 0.1 ** (2 / 3)) ** 2)
    assert left == pytest.approx(1.056, abs=2e-3) and right == pytest.approx(1.383, abs=2e-3)
    assert left <= right
    left, right = comparison_sides(0.40, 0.02)
    assert left > right


@given(lam=st.floats(0.0, 5.0), h=st.floats(1e-3, 0.5))
def test_rearranged_comparison_is_equivalent(lam, h):
    d = forcing_diagnostics([lam, lam, lam], h)[0]
    assume(abs(d["margin"]) > 1e-9 * (abs(d["left"]) + abs(d["right"])))
    assert d["selected"] == d["rearranged_selected"]


def test_printed_rearrangement_differs_somewhere():
    # literal comparison and the linear-in-Lambda form disagree here
    d = forcing_diagnostics([0.8, 0.8, 0.8], 0.3)[0]
    assert d["selected"] and d["rearranged_selected"]
    assert d["selected"] != d["printed_form_selected"]


@pytest.fixture(scope="module")
def solved(systems):
    s = systems(1.1, 2, 0.05)
    eps = s.h**2
    fac = SaddleFactorization(s, eps)
    return s, solve_stokes(s, eps, factorization=fac), solve_eigen(s, 3, factorization=fac)


def test_filter_policies(solved):
    s, sol, eigs = solved
    rep = filter_velocity(s, eigs, sol, FilterPolicy("known_dim", dim=0))
    assert np.array_equal(rep.filtered.coeffs, sol.U.coeffs) and rep.selected == ()
    two = dataclasses.replace(eigs, values=eigs.values[:2], vectors=eigs.vectors[:, :2])
    with pytest.raises(ValueError):
        filter_velocity(s, two, sol, FilterPolicy("known_dim", dim=3))
    rep = filter_velocity(s, eigs, sol, FilterPolicy("threshold", alpha=1.0))
    assert rep.selected == threshold_select(eigs, s.h, 1.0)
    assert [d["selected"] for d in rep.diagnostics] == [i in rep.selected for i in (1, 2, 3)]
    rep = filter_velocity(s, eigs, sol, FilterPolicy("manual_analytic"))
    assert rep.selected == (1,)
    with pytest.raises(ValueError):
        filter_velocity(s, eigs, sol, FilterPolicy("forcing_filter"))
    with pytest.raises(ValueError):
        filter_velocity(s, None, sol, FilterPolicy("threshold"))


@pytest.mark.parametrize("J", [(), (1,), (2, 3), (1, 2, 3)])
def test_projection_exactness(solved, J):
    s, sol, eigs = solved
    pol = FilterPolicy("known_dim", dim=len(J)) if J == tuple(range(1, len(J) + 1)) else None
    from surface_stokes.solver import project_discrete_killing

    out = project_discrete_killing(s, eigs, J, sol.U) if pol is None else filter_velocity(s, eigs, sol, pol).filtered
    m_before = eigs.vectors.T @ (s.Mv @ sol.U.coeffs)
    m_after = eigs.vectors.T @ (s.Mv @ out.coeffs)
    for i in (1, 2, 3):
        if i in J:
            assert abs(m_after[i - 1]) <= 1e-10 * np.abs(sol.U.coeffs).max()
        else:
            assert m_after[i - 1] == pytest.approx(m_before[i - 1], rel=1e-10, abs=1e-14)


def test_report_serialisation(solved, tmp_path):
    s, sol, eigs = solved
    reps = [filter_velocity(s, eigs, sol, FilterPolicy.parse(p), level=2) for p in ("none", "auto:1.5", "manual")]
    write_reports(reps, tmp_path / "r.json")
    lines = (tmp_path / "r.json").read_text().splitlines()
    assert len(lines) == 3
    back = [json.loads(x) for x in lines]
    assert back[1]["policy"] == "auto:1.5" and back[1]["level"] == 2
    assert back[1]["threshold"] == pytest.approx(threshold_value(s.h, 1.5))
    assert "filtered" not in back[0]


def test_pipeline_matches_eigenexpansion(systems):
    # with g = 0 the solutions live in the divergence-free space, where
    # W has modal coefficients Lambda/(Lambda+e)^2 (f, U_i)
    base = systems(1.0, 2, 0.05, killing_forcing=1.0)
    s = dataclasses.replace(base, g_vec=np.zeros_like(base.g_vec), _cache=dict(base._cache))
    res = forcing_filter_pipeline(s.mesh, s, full=True)
    e, ef = res.eigs, res.epsilon_f
    lam = e.values
    fU = e.vectors.T @ s.f_vec
    modal = e.vectors.T @ (s.Mv @ res.W.coeffs)
    expected = lam / (lam + ef) ** 2 * fU
    assert np.allclose(modal, expected, rtol=1e-6, atol=1e-10 * np.abs(fU).max())
    uf = e.vectors.T @ (s.Mv @ res.U_f.coeffs)
    assert np.allclose(uf, fU / (lam + ef), rtol=1e-6)


def test_pipeline_selection_and_report(systems):
    s = systems(2.0, 2, 0.05, killing_forcing=1.0)
    W, filtered, rep = forcing_filter_pipeline(s.mesh, s, level=2)
    assert rep.policy == "forcing" and 1 in rep.selected
    assert rep.selected == tuple(d["index"] for d in rep.diagnostics if d["left"] <= d["right"])
    assert rep.extra["epsilon_f"] == pytest.approx(s.h ** (2 / 3))
    assert W.coeffs.shape == filtered.coeffs.shape
