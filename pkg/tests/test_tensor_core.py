import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nslocc.tensor_core import (
    Factorization,
    Operator,
    TensorError,
    embed,
    fidelity,
    herm_fn,
    identity,
    op,
    op_norm,
    operator_from_json,
    operator_to_json,
    partial_trace,
    partial_transpose,
    permutation_operator,
    permute_factors,
    sqrtm_psd,
    sym_dim,
    symmetric_projector,
    tensor,
    trace_norm,
)

from conftest import random_density


def complex_matrix(rng, d):
    return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))


def test_factorization_rejects_duplicates():
    with pytest.raises(TensorError):
        Factorization.of(("X", 2), ("X", 3))


def test_operator_shape_mismatch():
    with pytest.raises(TensorError):
        op(np.eye(3), ("X", 2))


def test_tensor_and_partial_trace_inverse(rng):
    a = op(complex_matrix(rng, 2), ("A", 2))
    b = op(complex_matrix(rng, 3), ("B", 3))
    ab = tensor(a, b)
    got = partial_trace(ab, ["A"])
    assert np.allclose(got.matrix, a.matrix * b.trace())


def test_partial_trace_preserves_total_trace(rng):
    m = op(complex_matrix(rng, 12), ("A", 2), ("B", 3), ("C", 2))
    for keep in (["A"], ["B"], ["A", "C"], ["A", "B", "C"]):
        assert np.isclose(partial_trace(m, keep).trace(), m.trace())


def test_partial_transpose_involution_and_full(rng):
    m = op(complex_matrix(rng, 6), ("A", 2), ("B", 3))
    twice = partial_transpose(partial_transpose(m, ["B"]), ["B"])
    assert np.allclose(twice.matrix, m.matrix)
    full = partial_transpose(m, ["A", "B"])
    assert np.allclose(full.matrix, m.matrix.T)


def test_partial_transpose_commutes_with_trace(rng):
    m = op(complex_matrix(rng, 6), ("A", 2), ("B", 3))
    a = partial_trace(partial_transpose(m, ["A"]), ["A"])
    b = partial_trace(m, ["A"])
    assert np.allclose(a.matrix, b.matrix.T)


def test_permute_factors_roundtrip(rng):
    m = op(complex_matrix(rng, 12), ("A", 2), ("B", 3), ("C", 2))
    p = permute_factors(m, ["C", "A", "B"])
    assert p.labels == ("C", "A", "B")
    back = permute_factors(p, ["A", "B", "C"])
    assert np.allclose(back.matrix, m.matrix)


def test_permute_matches_kron_swap(rng):
    a, b = complex_matrix(rng, 2), complex_matrix(rng, 3)
    m = op(np.kron(a, b), ("A", 2), ("B", 3))
    swapped = permute_factors(m, ["B", "A"])
    assert np.allclose(swapped.matrix, np.kron(b, a))


def test_embed_inserts_identity(rng):
    a = op(complex_matrix(rng, 2), ("A", 2))
    full = Factorization.of(("B", 3), ("A", 2))
    big = embed(a, full)
    assert np.allclose(big.matrix, np.kron(np.eye(3), a.matrix))


def test_trace_norm_and_op_norm_known_values():
    m = op(np.diag([3.0, -4.0]), ("X", 2))
    assert np.isclose(trace_norm(m), 7.0)
    assert np.isclose(op_norm(m), 4.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_trace_norm_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b = complex_matrix(rng, 4), complex_matrix(rng, 4)
    assert trace_norm(op(a + b, ("X", 4))) \
        <= trace_norm(op(a, ("X", 4))) + trace_norm(op(b, ("X", 4))) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_op_norm_submultiplicative(seed):
    rng = np.random.default_rng(seed)
    a, b = complex_matrix(rng, 3), complex_matrix(rng, 3)
    assert op_norm(op(a @ b, ("X", 3))) \
        <= op_norm(op(a, ("X", 3))) * op_norm(op(b, ("X", 3))) + 1e-9


def test_fidelity_pure_states_overlap(rng):
    v = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v /= np.linalg.norm(v)
    w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    w /= np.linalg.norm(w)
    f = fidelity(op(np.outer(v, v.conj()), ("X", 3)),
                 op(np.outer(w, w.conj()), ("X", 3)))
    assert np.isclose(f, abs(v.conj() @ w) ** 2)


def test_fidelity_identical_states(rng):
    rho = op(random_density(rng, 4), ("X", 4))
    assert np.isclose(fidelity(rho, rho), 1.0)


def test_herm_fn_square_matches_matmul(rng):
    h = complex_matrix(rng, 4)
    h = op(h + h.conj().T, ("X", 4))
    sq = herm_fn(h, lambda w: w ** 2)
    assert np.allclose(sq.matrix, h.matrix @ h.matrix)


def test_herm_fn_cutoff_pseudo_inverse():
    h = op(np.diag([2.0, 1e-14, 0.5]), ("X", 3))
    inv = herm_fn(h, lambda w: 1.0 / w, cutoff=1e-10)
    assert np.allclose(np.diag(inv.matrix).real, [0.5, 0.0, 2.0])


def test_herm_fn_rejects_non_hermitian(rng):
    with pytest.raises(TensorError):
        herm_fn(op(complex_matrix(rng, 3), ("X", 3)), np.abs)


def test_sqrtm_squares_back(rng):
    rho = op(random_density(rng, 5), ("X", 5))
    r = sqrtm_psd(rho)
    assert np.allclose(r.matrix @ r.matrix, rho.matrix)


def test_permutation_operator_composition():
    # P_s P_t = P_{s o t} for the action |i_1..i_n> -> positions permuted
    s, t = (1, 2, 0), (2, 0, 1)
    ps = permutation_operator(s, 2).matrix
    pt = permutation_operator(t, 2).matrix
    comp = tuple(s[t[i]] for i in range(3))
    assert np.allclose(ps @ pt, permutation_operator(comp, 2).matrix)


def test_permutation_operator_action_on_basis():
    # swap of two qutrits
    p = permutation_operator((1, 0), 3).matrix
    for i in range(3):
        for j in range(3):
            v = np.zeros(9)
            v[i * 3 + j] = 1
            w = np.zeros(9)
            w[j * 3 + i] = 1
            assert np.allclose(p @ v, w)


def test_symmetric_projector_properties():
    for n, d in [(2, 2), (3, 2), (2, 3)]:
        p = symmetric_projector(n, d).matrix
        assert np.allclose(p @ p, p)
        assert np.isclose(np.trace(p).real, sym_dim(n, d))
        for perm in [(1, 0) if n == 2 else (1, 0, 2)]:
            pm = permutation_operator(perm, d).matrix
            assert np.allclose(pm @ p, p)


def test_sym_dim_ratio_bound():
    # dim Sym(n-k)/dim Sym(n) >= 1 - d k / n over the whole small-range grid
    for d in range(2, 5):
        for n in range(1, 13):
            for k in range(0, n + 1):
                ratio = sym_dim(n - k, d) / sym_dim(n, d)
                assert ratio >= 1 - d * k / n - 1e-12


def test_operator_json_roundtrip(rng):
    m = op(complex_matrix(rng, 6), ("A", 2), ("B", 3))
    back = operator_from_json(operator_to_json(m))
    assert back.labels == m.labels
    assert np.allclose(back.matrix, m.matrix)


def test_identity_helper():
    fac = Factorization.of(("A", 2), ("B", 3))
    assert np.allclose(identity(fac).matrix, np.eye(6))
