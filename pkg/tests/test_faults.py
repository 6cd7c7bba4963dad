from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultforge.faults import (
    FAULT_KINDS,
    FaultAdmittance,
    FaultError,
    FaultSpec,
    build_fault_admittance,
    fault_current_injection,
    star_mesh,
)

UNGROUNDED = ("ll", "3ph")


def kron_star(r_phase, r_ground, z_base, grounded):
    """Nodal matrix of the explicit star circuit (terminals, then the star
    point) with the star point eliminated, in exact rational arithmetic so
    the reference carries no rounding of its own."""
    zb = Fraction(z_base)
    g = [zb / Fraction(r) for r in r_phase]
    n = len(g)
    if grounded and r_ground == 0:
        # the star point is the reference node itself
        return np.diag([float(v) for v in g])
    Y = [[Fraction(0)] * (n + 1) for _ in range(n + 1)]
    for k, gk in enumerate(g):
        Y[k][k] += gk
        Y[n][n] += gk
        Y[k][n] -= gk
        Y[n][k] -= gk
    if grounded:
        Y[n][n] += zb / Fraction(r_ground)
    return np.array([[float(Y[i][j] - Y[i][n] * Y[n][j] / Y[n][n]) for j in range(n)] for i in range(n)])


def oracle(spec: FaultSpec, z_base: float) -> np.ndarray:
    grounded = spec.kind in ("lg", "llg", "3phg")
    return kron_star(spec.r_phase_ohm, spec.r_ground_ohm, z_base, grounded)


fault_specs = st.builds(
    lambda kind, rs, rg, perm: FaultSpec(
        bus="X",
        kind=kind,
        phases=tuple(np.array(["A", "B", "C"])[list(perm)][: {"lg": 1, "ll": 2, "llg": 2, "3ph": 3, "3phg": 3}[kind]]),
        r_phase_ohm=tuple(rs[: {"lg": 1, "ll": 2, "llg": 2, "3ph": 3, "3phg": 3}[kind]]),
        r_ground_ohm=rg,
    ),
    st.sampled_from(FAULT_KINDS),
    st.lists(st.floats(1e-4, 100.0), min_size=3, max_size=3),
    st.one_of(st.just(0.0), st.floats(1e-4, 100.0)),
    st.permutations([0, 1, 2]),
)


class TestExamples:
    def test_lg(self):
        G = build_fault_admittance(FaultSpec("b", "lg", ("A",), 0.01), 240.0, 25e3).G
        np.testing.assert_allclose(G, [[230.4]], rtol=1e-13)

    def test_ll_total_resistance(self):
        spec = FaultSpec.make("b", "ll", 0.1, ("A", "B"))
        assert spec.r_phase_ohm == (0.05, 0.05)
        G = build_fault_admittance(spec, 1.0, 1.0).G
        np.testing.assert_allclose(G, [[10, -10], [-10, 10]], rtol=1e-13)
        np.testing.assert_allclose(G.sum(axis=1), 0, atol=1e-12)

    def test_3phg(self):
        G = build_fault_admittance(FaultSpec("b", "3phg", ("A", "B", "C"), 1.0, 1.0), 1.0, 1.0).G
        expected = np.full((3, 3), -0.25)
        np.fill_diagonal(expected, 0.75)
        np.testing.assert_allclose(G, expected, rtol=1e-13)
        np.testing.assert_allclose(G, kron_star((1, 1, 1), 1.0, 1.0, True), rtol=1e-13)

    def test_3ph(self):
        G = build_fault_admittance(FaultSpec("b", "3ph", ("A", "B", "C"), 1.0), 1.0, 1.0).G
        expected = np.full((3, 3), -1 / 3)
        np.fill_diagonal(expected, 2 / 3)
        np.testing.assert_allclose(G, expected, rtol=1e-13)
        np.testing.assert_allclose(G.sum(axis=1), 0, atol=1e-12)

    def test_solid_ground_is_diagonal(self):
        G = build_fault_admittance(FaultSpec("b", "llg", ("A", "C"), (1.0, 2.0), 0.0), 1.0, 1.0).G
        np.testing.assert_allclose(G, np.diag([1.0, 0.5]), rtol=1e-15)

    def test_star_mesh_matches_kron(self):
        np.testing.assert_allclose(star_mesh([1.0, 2.0, 3.0], 0.5), kron_star((1.0, 0.5, 1 / 3), 2.0, 1.0, True), rtol=1e-13)


class TestInjection:
    def test_zero_matrix(self):
        f = FaultAdmittance.zero("b", ("A", "B"))
        out = fault_current_injection(f, {"A": 1 + 2j, "B": -0.3j})
        assert out == {"A": 0j, "B": 0j}

    def test_lg_scalar(self):
        f = build_fault_admittance(FaultSpec("b", "lg", ("A",), 0.01), 240.0, 25e3)
        assert fault_current_injection(f, {"A": 1 + 0j})["A"] == pytest.approx(230.4 + 0j, rel=1e-13)

    def test_balanced_voltage_on_3ph(self):
        f = build_fault_admittance(FaultSpec("b", "3ph", ("A", "B", "C"), (0.3, 0.7, 1.1)), 1.0, 1.0)
        a = np.exp(2j * np.pi / 3)
        out = fault_current_injection(f, {"A": 1.0, "B": a * a, "C": a})
        assert abs(sum(out.values())) < 1e-12

    def test_missing_phase(self):
        f = build_fault_admittance(FaultSpec("b", "ll", ("A", "B"), 0.1), 1.0, 1.0)
        with pytest.raises(FaultError):
            fault_current_injection(f, {"A": 1.0})


class TestValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind="lg", phases=("A", "B"), r_phase_ohm=1.0),
            dict(kind="ll", phases=("A", "A"), r_phase_ohm=1.0),
            dict(kind="3ph", phases=("A", "B", "C"), r_phase_ohm=0.0),
            dict(kind="xx", phases=("A",), r_phase_ohm=1.0),
            dict(kind="lg", phases=("D",), r_phase_ohm=1.0),
            dict(kind="lg", phases=("A",), r_phase_ohm=1.0, r_ground_ohm=-1.0),
        ],
    )
    def test_rejected(self, kwargs):
        with pytest.raises(FaultError):
            FaultSpec(bus="b", **kwargs)

    def test_floor_applies_to_bolted(self):
        spec = FaultSpec.make("b", "3phg", 0.0, r_floor=1e-4)
        assert spec.r_phase_ohm == (1e-4,) * 3

    def test_degenerate_star(self):
        with pytest.raises(FaultError):
            star_mesh([0.0, 0.0], 0.0)

    def test_json_round_trip(self):
        spec = FaultSpec.make("Load", "llg", 0.2, ("B", "C"), r_ground_ohm=0.05)
        assert FaultSpec.from_dict(spec.to_dict()) == spec

    def test_bad_bases(self):
        with pytest.raises(FaultError):
            build_fault_admittance(FaultSpec("b", "lg", ("A",), 1.0), 0.0, 1.0)


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(fault_specs, st.floats(0.01, 100.0))
    def test_matches_kron_oracle(self, spec, z_base):
        G = build_fault_admittance(spec, np.sqrt(z_base), 1.0).G
        ref = oracle(spec, z_base)
        scale = np.abs(ref).max()
        np.testing.assert_allclose(G, ref, rtol=1e-12, atol=1e-12 * scale)

    @settings(max_examples=100, deadline=None)
    @given(fault_specs)
    def test_structure(self, spec):
        G = build_fault_admittance(spec, 1.0, 1.0).G
        np.testing.assert_array_equal(G, G.T)
        assert np.all(np.diag(G) >= 0)
        off = np.abs(G).sum(axis=1) - np.abs(np.diag(G))
        assert np.all(np.diag(G) >= off * (1 - 1e-12))
        rows = G.sum(axis=1)
        if spec.kind in UNGROUNDED:
            np.testing.assert_allclose(rows, 0, atol=1e-12 * np.abs(G).max())
        else:
            assert rows.max() > 0

    @settings(max_examples=100, deadline=None)
    @given(fault_specs, st.floats(1.01, 50.0))
    def test_scaling(self, spec, k):
        G = build_fault_admittance(spec, 1.0, 1.0).G
        Gk = build_fault_admittance(spec.scaled(k), 1.0, 1.0).G
        np.testing.assert_allclose(Gk, G / k, rtol=1e-12, atol=1e-14 * np.abs(G).max())

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 10.0), st.floats(1e-3, 10.0))
    def test_ll_permutation(self, ra, rb):
        G1 = build_fault_admittance(FaultSpec("b", "ll", ("A", "B"), (ra, rb)), 1.0, 1.0).G
        G2 = build_fault_admittance(FaultSpec("b", "ll", ("B", "A"), (rb, ra)), 1.0, 1.0).G
        np.testing.assert_array_equal(G1, G2)

    @settings(max_examples=100, deadline=None)
    @given(fault_specs, st.lists(st.complex_numbers(max_magnitude=2.0, allow_nan=False), min_size=3, max_size=3))
    def test_ungrounded_has_no_zero_sequence(self, spec, volts):
        f = build_fault_admittance(spec, 1.0, 1.0)
        out = fault_current_injection(f, dict(zip(spec.phases, volts)))
        if spec.kind in UNGROUNDED:
            assert abs(sum(out.values())) <= 1e-12 * max(1.0, np.abs(f.G).max())
