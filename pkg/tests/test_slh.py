import warnings

import numpy as np
import pytest
import scipy.sparse as sps

from oracle_data import cmat, cnum, frozen
from slhnet.ensembles import random_cascade, random_network, random_oscillator_model, random_slh
from slhnet.operators import HilbertSpace, annihilator
from slhnet.sim import build_finite_k
from slhnet.slh import (
    SLH,
    IllPosedNetworkError,
    ItoMatrix,
    NonHurwitzWarning,
    OscillatorModel,
    PreconditionError,
    adiabatic_eliminate,
    channel_layout,
    check_commutativity,
    concatenate,
    concatenate_models,
    eliminate_via_schur,
    feedback,
    feedback_reduce_model,
    four_way_g,
    from_ito,
    g_matrix,
    ito_matrix,
    model_from_json,
    series_product,
    series_product_models,
    triple_diff,
    validate_network,
)
from slhnet import schur


def rational_model():
    data = frozen()["rational_model"]
    return OscillatorModel.from_hamiltonian(
        cmat(data["S"]), cmat(data["C"]), cmat(data["G"]),
        cmat(data["Omega"]), cmat(data["Gamma"]), cmat(data["Theta"]))


def assert_triple_close(t: SLH, ref: dict, tol: float = 1e-12):
    for key in ("S", "L", "K"):
        assert np.max(np.abs(getattr(t, key) - cmat(ref[key]))) < tol, key


def beam_splitter_network(alpha, s0, gamma):
    b = np.sqrt(1 - alpha ** 2)
    T = np.array([[alpha, b], [b, -alpha]], dtype=complex)
    splitter = OscillatorModel.from_slh(SLH(T, np.zeros((2, 1)), np.zeros((1, 1))))
    device = OscillatorModel.from_hamiltonian([[s0]], [[np.sqrt(gamma)]], [[0]], [[0]], [[0]], [[0]])
    return [splitter, device], [(1, 2), (2, 1)], ([0], [0])


# ---------------------------------------------------------------------------
# triples and the Itô matrix


def test_ito_scalar_example():
    t = SLH(np.array([[-1.0]]), np.array([[0.0]]), np.array([[0.0]]))
    assert np.array_equal(ito_matrix(t).G, [[0, 0], [0, -2]])


def test_ito_round_trip(rng):
    for n, d in ((1, 1), (2, 2), (3, 2)):
        t = random_slh(rng, n, d)
        back = from_ito(ito_matrix(t))
        assert max(triple_diff(t, back).values()) < 1e-14


def test_from_ito_rejects_inconsistent_block(rng):
    G = ito_matrix(random_slh(rng, 1, 2)).G.copy()
    G[0, 3] += 1.0
    with pytest.raises(ValueError):
        from_ito(ItoMatrix(G, 1, 2))


def test_slh_shape_validation():
    with pytest.raises(ValueError):
        SLH(np.eye(2), np.zeros((3, 1)), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        SLH.from_hamiltonian(np.eye(1), np.zeros((1, 1)), np.array([[1j]]))
    bad = SLH(np.array([[2.0]]), np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        bad.validate()


def test_series_scalar_oracle():
    o = frozen()["series_scalar"]
    al, be = cnum(o["alpha"]), cnum(o["beta"])
    t1 = SLH([[1]], [[al]], [[cnum(o["K1"])]])
    t2 = SLH([[1]], [[be]], [[cnum(o["K2"])]])
    out = series_product(t2, t1)
    assert abs(out.L[0, 0] - cnum(o["L"])) < 1e-14
    assert abs(out.K[0, 0] - cnum(o["K"])) < 1e-14
    out.validate()


def test_series_associativity_and_identity(rng):
    t1, t2, t3 = (random_slh(rng, 2, 2) for _ in range(3))
    left = series_product(t3, series_product(t2, t1))
    right = series_product(series_product(t3, t2), t1)
    assert max(triple_diff(left, right).values()) < 1e-12
    ident = SLH(np.eye(4), np.zeros((4, 2)), np.zeros((2, 2)))
    assert max(triple_diff(series_product(ident, t1), t1).values()) < 1e-14
    assert max(triple_diff(series_product(t1, ident), t1).values()) < 1e-14


def test_series_product_channel_mismatch(rng):
    with pytest.raises(ValueError):
        series_product(random_slh(rng, 1, 1), random_slh(rng, 2, 1))


def test_concatenate_distinct_factors(rng):
    a = random_slh(rng, 1, HilbertSpace.of(("a", 2)))
    b = random_slh(rng, 1, HilbertSpace.of(("b", 3)))
    joint = concatenate([a, b])
    assert joint.space.labels == ("a", "b")
    assert joint.d == 6 and joint.n == 2
    joint.validate()
    assert np.allclose(joint.K, np.kron(a.K, np.eye(3)) + np.kron(np.eye(2), b.K))


def test_series_equals_feedback_of_concatenation(rng):
    t1, t2 = random_slh(rng, 1, 2), random_slh(rng, 1, 2)
    # channel 0 (t1) output feeds channel 1 (t2) input; t2 output and t1 input are external
    via_fb = feedback(concatenate([t1, t2]), [(0, 1)], ([1], [0]))
    assert max(triple_diff(via_fb, series_product(t2, t1)).values()) < 1e-12


def test_feedback_ill_posed():
    t = SLH(np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(IllPosedNetworkError):
        feedback(t, [(0, 0)])


def test_channel_layout_errors():
    with pytest.raises(ValueError):
        channel_layout(2, [(0, 5)])
    with pytest.raises(ValueError):
        channel_layout(3, [(0, 1), (0, 2)])
    with pytest.raises(ValueError):
        channel_layout(3, [(0, 1)], ([0], [0]))
    lay = channel_layout(3, [(0, 1)], ([2, 1], [2, 0]))
    assert lay.out_perm == (2, 1, 0) and lay.in_perm == (2, 0, 1)


# ---------------------------------------------------------------------------
# oscillator models and the limit


def test_identities_hold_for_hamiltonian_form(rng):
    model = random_oscillator_model(rng, 2, 2, 2)
    assert max(model.identity_residuals().values()) < 1e-13
    Om, Ga, Th = model.hamiltonian_data()
    stripped = OscillatorModel(model.S, model.C, model.G, model.A, model.Z, model.X, model.R)
    Om2, Ga2, Th2 = stripped.hamiltonian_data()
    assert np.allclose(Om, Om2) and np.allclose(Ga, Ga2) and np.allclose(Th, Th2)


def test_singular_A_rejected():
    with pytest.raises(PreconditionError) as err:
        OscillatorModel.from_hamiltonian([[1]], [[0]], [[0]], [[0]], [[0]], [[0]])
    assert err.value.cause == "A singular"


def test_rational_limit_oracle():
    limit = adiabatic_eliminate(rational_model())
    assert_triple_close(limit, frozen()["rational_limit"])
    assert max(limit.residuals().values()) < 1e-12


def test_limit_equals_schur_complement(rng):
    for _ in range(10):
        model = random_oscillator_model(rng, 3, 2, 2)
        a, b = adiabatic_eliminate(model), eliminate_via_schur(model)
        assert max(triple_diff(a, b).values()) < 1e-11


def test_elimination_with_no_oscillators_is_identity(rng):
    t = random_slh(rng, 2, 2)
    assert max(triple_diff(adiabatic_eliminate(OscillatorModel.from_slh(t)), t).values()) == 0.0


def test_identity_violation_rejected(rng):
    model = random_oscillator_model(rng, 2, 1, 1)
    broken = OscillatorModel(model.S, model.C, model.G, model.A + 0.1, model.Z, model.X, model.R)
    with pytest.raises(PreconditionError) as err:
        adiabatic_eliminate(broken)
    assert err.value.cause == "identities"


def test_non_hurwitz_uses_kernel_condition():
    # A = -i: purely oscillatory, so only the kernel test admits it
    model = OscillatorModel.from_hamiltonian([[1]], [[0]], [[1]], [[1]], [[0.3]], [[0]])
    with pytest.warns(NonHurwitzWarning):
        limit = adiabatic_eliminate(model)
    limit.validate()


def test_g_matrix_assembles_finite_k_ito_matrix(rng):
    d, n, m, cutoff = 2, 2, 2, 3
    model = random_oscillator_model(rng, n, m, d)
    g = g_matrix(model).entries
    F = cutoff ** m
    a1 = annihilator(cutoff).matrix
    fock = [np.kron(a1, np.eye(cutoff)), np.kron(np.eye(cutoff), a1)]
    for k in (1.0, 2.0):
        fin = build_finite_k(model, k, cutoff)
        L = sps.vstack(fin.L).toarray()
        K = -0.5 * L.conj().T @ L - 1j * fin.H.toarray()
        S = np.kron(model.S, np.eye(F))
        expected = ito_matrix(SLH(S, L, K)).G
        # right factor [I; k a]: the fast rows carry a_j in the slow column only
        rows_s, rows_f = (1 + n) * d, m * d + n * d
        right = np.zeros(((rows_s + rows_f) * F, rows_s * F), dtype=complex)
        right[:rows_s * F] = np.eye(rows_s * F)
        for j in range(m):
            for r in range(d):
                row = (rows_s + j * d + r) * F
                right[row:row + F, r * F:(r + 1) * F] = k * fock[j]
        left = right.conj().T
        assembled = left @ np.kron(g, np.eye(F)) @ right
        assert np.max(np.abs(assembled - expected)) < 1e-10 * max(1.0, np.abs(expected).max())


# ---------------------------------------------------------------------------
# feedback at the model level


def test_rational_reduced_oracle():
    red = feedback_reduce_model(rational_model(), [(1, 1)], ([0], [0]))
    ref = frozen()["rational_reduced"]
    for key in ("S", "C", "G", "A", "Z", "X", "R"):
        assert np.max(np.abs(getattr(red, key) - cmat(ref[key]))) < 1e-12, key


def test_rational_closed_loop_both_orders():
    ref_fa, ref_af = frozen()["rational_closed_limit_fa"], frozen()["rational_closed_limit_af"]
    for key in ("S", "L", "K"):
        assert np.max(np.abs(cmat(ref_fa[key]) - cmat(ref_af[key]))) < 1e-14
    rep = check_commutativity(rational_model(), [(1, 1)], ([0], [0]))
    if rep.hypotheses_met:
        assert rep.passed
        assert_triple_close(rep.path_fa, ref_fa, 1e-11)
        assert_triple_close(rep.path_af, ref_af, 1e-11)
    red = feedback_reduce_model(rational_model(), [(1, 1)], ([0], [0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonHurwitzWarning)
        assert_triple_close(adiabatic_eliminate(red), ref_fa, 1e-11)
        af = feedback(adiabatic_eliminate(rational_model()), [(1, 1)], ([0], [0]))
    assert_triple_close(af, ref_af, 1e-11)


def test_beam_splitter_oracles():
    for case in frozen()["beam_splitter"]:
        comps, conns, ext = beam_splitter_network(case["alpha"], cnum(case["S0"]), case["gamma"])
        red = feedback_reduce_model(concatenate_models(comps), conns, ext)
        assert abs(red.S[0, 0] - cnum(case["S_red"])) < 1e-12
        assert abs(red.C[0, 0] - cnum(case["C_red"])) < 1e-12
        assert abs(red.A[0, 0] - cnum(case["A_red"])) < 1e-12
        assert abs(cnum(case["A_closed_form"]) - cnum(case["A_red"])) < 1e-14
        rep = check_commutativity(comps, conns, ext)
        assert rep.verdict == "pass", rep.to_json()
        assert abs(rep.path_fa.S[0, 0] - cnum(case["S_hat"])) < 1e-12
        assert all(rep.quotient_conditions)
        assert max(rep.schur_block_diff.values()) < 1e-12


def test_four_way_without_internal_channels(rng):
    model = random_oscillator_model(rng, 2, 1, 2)
    g4, layout = four_way_g(model)
    assert layout.n_internal == 0
    assert g4.rows.sizes == ((1 + 2) * 2, 0, 2, 0)
    assert np.allclose(g4.entries, g_matrix(model).entries[:g4.entries.shape[0], :g4.entries.shape[0]])
    assert feedback_reduce_model(model, []) is model


def test_one_shot_complement_equals_both_paths(rng):
    net = random_network(rng)
    model = net.open_loop
    g4, layout = four_way_g(model, net.connections)
    one = schur.complement(g4, ["2", "3", "4"], check=False)
    limit = from_ito(ItoMatrix(one.entries, layout.n_external, model.d, model.space))
    fa = adiabatic_eliminate(feedback_reduce_model(model, net.connections))
    assert max(triple_diff(limit, fa).values()) < 1e-10


def test_cascade_three_routes_agree(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonHurwitzWarning)
        for _ in range(5):
            m1, m2 = random_cascade(rng, d=2)
            direct = series_product(adiabatic_eliminate(m2), adiabatic_eliminate(m1))
            joint = adiabatic_eliminate(series_product_models(m2, m1))
            fb = feedback_reduce_model(concatenate_models([m1, m2]), [(0, 1)], ([1], [0]))
            via_fb = adiabatic_eliminate(fb)
            assert max(triple_diff(direct, joint).values()) < 1e-10
            assert max(triple_diff(direct, via_fb).values()) < 1e-10


def test_commutativity_guard_reports_failed_hypotheses():
    ill = OscillatorModel.from_slh(SLH(np.eye(1), np.zeros((1, 1)), np.zeros((1, 1))))
    rep = check_commutativity([ill], [(0, 0)])
    assert not rep.hypotheses_met
    assert rep.verdict == "hypotheses not met"
    assert "S_ii-I_invertible" in rep.failed_preconditions()
    assert rep.passed is None and rep.path_af is None


def test_validate_does_not_evaluate(rng):
    net = random_network(rng)
    rep = validate_network(net.components, net.connections)
    assert rep.hypotheses_met
    assert rep.max_block_diff is None


def test_json_round_trips(rng):
    t = random_slh(rng, 2, 2)
    back = model_from_json(t.to_json())
    assert isinstance(back, SLH) and max(triple_diff(t, back).values()) == 0.0
    model = random_oscillator_model(rng, 2, 1, 2)
    back = model_from_json(model.to_json())
    assert isinstance(back, OscillatorModel)
    for key in ("S", "C", "G", "A", "Z", "X", "R"):
        assert np.array_equal(getattr(model, key), getattr(back, key))
