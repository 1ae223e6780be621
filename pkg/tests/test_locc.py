import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nslocc.channels import (
    choi_of_kraus,
    is_cptp,
    is_nonsignalling,
    random_nonsignalling_choi,
)
from nslocc.locc import (
    build_locc_protocol,
    choi_pairs_to_sites,
    concentration_report,
    default_epsilon,
    depolarizing_choi,
    marginal_input,
    operator_chebyshev,
    repair_distance_bound,
    site_to_pair,
    theorem1_bound,
    tp_repair,
)
from nslocc.tensor_core import TensorError, op, trace_norm

from conftest import random_density, random_kraus


def random_pair_state(rng, d_x, d_y):
    return op(random_density(rng, d_x * d_y), ("X1", d_x), ("Y1", d_y))


def test_pairs_sites_roundtrip(rng):
    q = choi_of_kraus(random_kraus(rng, 2, 3, count=2), 2, 3)
    sites = choi_pairs_to_sites(q)
    assert sites.labels == ("A", "B1")
    back = site_to_pair(sites.relabel({"B1": "B"}), 2, 3)
    assert np.allclose(back.matrix, q.omega.matrix)


def test_tp_repair_fixes_input_marginal(rng):
    phi = random_pair_state(rng, 2, 3)
    fixed = tp_repair(phi)
    tau = marginal_input(fixed)
    assert np.allclose(tau.matrix, np.eye(2) / 2, atol=1e-10)
    assert np.isclose(fixed.trace().real, 1.0, atol=1e-10)


def test_tp_repair_rejects_singular_marginal():
    # output of a preparation conditioned on input |0>: marginal is a projector
    m = np.zeros((4, 4))
    m[0, 0] = 1.0
    phi = op(m, ("X1", 2), ("Y1", 2))
    with pytest.raises(TensorError):
        tp_repair(phi)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([2, 3]))
def test_repair_distance_bound_holds(seed, d_x):
    rng = np.random.default_rng(seed)
    phi = op(random_density(rng, d_x * 2), ("X1", d_x), ("Y1", 2))
    lhs, rhs = repair_distance_bound(phi)
    assert lhs <= rhs + 1e-9


def test_repair_noop_when_already_tp(rng):
    from nslocc.tensor_core import partial_trace
    q = choi_of_kraus(random_kraus(rng, 2, 2, count=2), 2, 2)
    pair = partial_trace(q.omega, ["X1", "Y1"])
    lhs, rhs = repair_distance_bound(pair)
    assert lhs < 1e-10 and rhs < 1e-7


def test_operator_chebyshev_hand_value():
    # two orthogonal projectors with equal weight: mu = I/2,
    # E[X (x) X] - mu (x) mu has operator norm 1/4; d=2, eps=0.4
    p0 = np.diag([1.0, 0.0])
    p1 = np.diag([0.0, 1.0])
    emp, bound = operator_chebyshev([(p0, 0.5), (p1, 0.5)], epsilon=0.4)
    assert np.isclose(bound, 4 / 0.16 * 0.25)
    assert emp == 1.0  # both samples are 1/2 away from the mean


def test_operator_chebyshev_is_valid_bound(rng):
    for _ in range(20):
        k = rng.integers(2, 6)
        mats = [random_density(rng, 3) for _ in range(k)]
        probs = rng.dirichlet(np.ones(k))
        for eps in (0.1, 0.3, 0.5):
            emp, bound = operator_chebyshev(list(zip(mats, probs)), eps)
            assert emp <= bound + 1e-12


def test_default_epsilon_rules():
    assert np.isclose(default_epsilon(0.008, rule="delta_cube_root"), 0.2)
    assert default_epsilon(0.5, rule="fixed:0.3") == 0.3
    with pytest.raises(TensorError):
        default_epsilon(0.1, rule="nonsense")


def test_theorem1_bound_scales_with_n():
    b8 = theorem1_bound(2, 2, 2, 8, 1.0)
    b64 = theorem1_bound(2, 2, 2, 64, 1.0)
    assert np.isclose(b8 / b64, (64 / 8) ** (1 / 6))
    with pytest.raises(TensorError):
        theorem1_bound(2, 2, 2, 0, 1.0)


def test_depolarizing_choi_is_cptp():
    q = depolarizing_choi(2, 3)
    assert is_cptp(q).ok


def test_build_protocol_rejects_signalling_input(rng):
    d = 2
    swap = np.eye(d * d).reshape(d, d, d, d).transpose(1, 0, 2, 3) \
        .reshape(d * d, d * d)
    from nslocc.channels import choi_of_global_kraus
    q = choi_of_global_kraus([swap], 2, 2, n=2)
    with pytest.raises(TensorError):
        build_locc_protocol(q)


def test_build_protocol_output_is_valid(rng):
    q = random_nonsignalling_choi(2, 2, 2, 2, seed=11)
    proto = build_locc_protocol(q, grid_spec="haar:1:400")
    total = sum(m.matrix for m in proto.povm)
    assert np.allclose(total, np.eye(2), atol=1e-7)
    for ch in proto.channels:
        rep = is_cptp(ch)
        assert rep.ok, rep
    rebuilt = proto.to_choi(2)
    assert is_cptp(rebuilt).ok
    assert is_nonsignalling(rebuilt).ok
    for key in ("epsilon", "delta", "grid_residual", "povm_rescale"):
        assert key in proto.provenance


def test_build_protocol_json_roundtrip_fields(rng):
    q = random_nonsignalling_choi(2, 2, 2, 2, seed=12)
    proto = build_locc_protocol(q, grid_spec="haar:2:300")
    blob = proto.to_json()
    assert len(blob["povm"]) == len(blob["channels"])
    assert "grid_residual" in blob["provenance"]


def test_concentration_report_fields(rng):
    q = random_nonsignalling_choi(2, 2, 2, 2, seed=13)
    proto = build_locc_protocol(q, grid_spec="haar:3:300")
    # rebuild the measure to feed the report
    from nslocc.definetti import build_grid, extract_measure, purify_extension
    from nslocc.channels import symmetrize_channel
    sites = choi_pairs_to_sites(symmetrize_channel(q))
    ext = purify_extension(sites, d_a=2)
    grid = build_grid(ext.site_dim, 2, mode="haar", seed=3, count=300)
    approx = extract_measure(ext, grid)
    rep = concentration_report(approx, epsilon=0.2, delta=0.5, d_x=2, d_y=2)
    assert rep.complement_mass <= 1.0 + 1e-9
    assert rep.complement_bound >= 0.0
    assert rep.ek_residuals[0][0] == 1
