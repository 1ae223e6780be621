"""Learning tasks and expected-risk evaluation for multi-round channels.

A task bundles a training state on A, a test-pair state on X ⊗ R (R is the
reference register that scores the channel's output), and a risk observable
S on Y ⊗ R.  The expected risk of a channel is the mean score of its outputs
against the references, evaluated two independent ways: by applying the
channel directly (small n), and through the single-round marginal of the
symmetrized Choi state contracted with a precomputed R-operator (any n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import ChoiChannel, marginal_channel, symmetrize_channel
from .locc import LoccProtocol, build_locc_protocol, theorem1_bound
from .tensor_core import (
    Factorization,
    Operator,
    TensorError,
    embed,
    identity,
    op_norm,
    partial_trace,
    partial_transpose,
    permute_factors,
    tensor,
    tensor_all,
)

DIRECT_PATH_MAX_DIM = 1 << 13


@dataclass(frozen=True)
class LearningTask:
    """Training state, test-pair distribution and risk observable.

    rho_a on ("A", d_a); rho_xr on ("X1", d_x), ("R1", d_r);
    s on ("Y1", d_y), ("R1", d_r); n test rounds.
    """

    rho_a: Operator
    rho_xr: Operator
    s: Operator
    n: int

    def __post_init__(self):
        for state in (self.rho_a, self.rho_xr):
            if abs(state.trace().real - 1.0) > 1e-9:
                raise TensorError(f"state trace {state.trace().real} != 1")
            if float(np.linalg.eigvalsh(state.hermitize().matrix).min()) < -1e-9:
                raise TensorError("task state is not PSD")
        self.s.hermitize()
        if self.rho_xr.labels != ("X1", "R1"):
            raise TensorError("rho_xr must live on (X1, R1)")
        if self.s.labels != ("Y1", "R1"):
            raise TensorError("s must live on (Y1, R1)")

    @property
    def d_a(self) -> int:
        return self.rho_a.dim

    @property
    def d_x(self) -> int:
        return self.rho_xr.shape.dim_of("X1")

    @property
    def d_y(self) -> int:
        return self.s.shape.dim_of("Y1")

    @property
    def d_r(self) -> int:
        return self.rho_xr.shape.dim_of("R1")


def _as_matrix(state) -> np.ndarray:
    return state.matrix if isinstance(state, Operator) else np.asarray(state, complex)


def classification_task(priors: list[float], states: list, n: int,
                        copies: int = 1) -> LearningTask:
    """State classification with 0-1 loss.

    The test pair is sum_y p_y rho^{(y)} ⊗ |y><y|; the channel must output a
    label on a classical register of dimension len(states).  Training data is
    the product of `copies` copies of every class state in a fixed (label =
    position) order, the programmable-discriminator convention.
    """
    mats = [_as_matrix(s) for s in states]
    if abs(sum(priors) - 1.0) > 1e-9:
        raise TensorError(f"priors sum to {sum(priors)}, not 1")
    d_x = mats[0].shape[0]
    labels = len(mats)
    rho_xr = np.zeros((d_x * labels, d_x * labels), dtype=complex)
    for y, (p, m) in enumerate(zip(priors, mats)):
        if m.shape[0] != d_x:
            raise TensorError("class states must share one dimension")
        e = np.zeros((labels, labels))
        e[y, y] = 1.0
        rho_xr += p * np.kron(m, e)
    rho_a = np.array([[1.0]], dtype=complex)
    for m in mats:
        for _ in range(copies):
            rho_a = np.kron(rho_a, m)
    s = np.eye(labels * labels, dtype=complex)
    for y in range(labels):
        e = np.zeros((labels, labels))
        e[y, y] = 1.0
        s -= np.kron(e, e)
    return LearningTask(
        rho_a=Operator(rho_a, Factorization.of(("A", rho_a.shape[0]))),
        rho_xr=Operator(rho_xr, Factorization.of(("X1", d_x), ("R1", labels))),
        s=Operator(s, Factorization.of(("Y1", labels), ("R1", labels))),
        n=n)


def swap_matrix(d: int) -> np.ndarray:
    s = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            s[i * d + j, j * d + i] = 1.0
    return s


def tomography_task(priors: list[float], states: list, n: int,
                    copies: int = 1) -> LearningTask:
    """State preparation scored by overlap: risk = 1 − tr[output · target].

    X is a classical register naming which target to prepare; the observable
    1 − SWAP on Y ⊗ R evaluates the overlap with the reference copy.
    """
    mats = [_as_matrix(s) for s in states]
    if abs(sum(priors) - 1.0) > 1e-9:
        raise TensorError(f"priors sum to {sum(priors)}, not 1")
    d = mats[0].shape[0]
    labels = len(mats)
    rho_xr = np.zeros((labels * d, labels * d), dtype=complex)
    for x, (p, m) in enumerate(zip(priors, mats)):
        e = np.zeros((labels, labels))
        e[x, x] = 1.0
        rho_xr += p * np.kron(e, m)
    rho_a = np.array([[1.0]], dtype=complex)
    for m in mats:
        for _ in range(copies):
            rho_a = np.kron(rho_a, m)
    s = np.eye(d * d) - swap_matrix(d)
    return LearningTask(
        rho_a=Operator(rho_a, Factorization.of(("A", rho_a.shape[0]))),
        rho_xr=Operator(rho_xr, Factorization.of(("X1", labels), ("R1", d))),
        s=Operator(s, Factorization.of(("Y1", d), ("R1", d))),
        n=n)


# ---------------------------------------------------------------------------
# risk observables
# ---------------------------------------------------------------------------

def symmetrized_risk_observable(s: Operator, n: int,
                                normalization: str = "average") -> Operator:
    """S̄ on (Y1, R1, ..., Yn, Rn): the per-round score, averaged or summed.

    The average convention makes risks comparable across n (score per test
    round); `normalization="sum"` keeps the raw sum for cross-checks.
    """
    d_y = s.shape.dim_of("Y1")
    d_r = s.shape.dim_of("R1")
    factors = []
    for i in range(1, n + 1):
        factors += [(f"Y{i}", d_y), (f"R{i}", d_r)]
    full = Factorization.of(*factors)
    total = None
    for i in range(1, n + 1):
        term = embed(s.relabel({"Y1": f"Y{i}", "R1": f"R{i}"}), full)
        total = term if total is None else total + term
    if normalization == "average":
        return (1.0 / n) * total
    if normalization == "sum":
        return total
    raise TensorError(f"unknown normalization {normalization!r}")


def r_operator(task: LearningTask) -> Operator:
    """Single-round risk kernel R on (A, X1, Y1).

    R = tr_R[(rho_A ⊗ rho_XR ⊗ 1_Y)^{T_{AX}} (1_{AX} ⊗ S)]; contracting the
    single-round Choi marginal against R (times d_A·d_X) gives the expected
    risk without ever touching the n-round spaces.
    """
    big = tensor(task.rho_a, task.rho_xr)
    full = Factorization.of(("A", task.d_a), ("X1", task.d_x),
                            ("Y1", task.d_y), ("R1", task.d_r))
    big = embed(big, full)
    twisted = partial_transpose(big, ["A", "X1"])
    s_big = embed(task.s, full)
    prod = Operator(twisted.matrix @ s_big.matrix, full)
    return partial_trace(prod, ["A", "X1", "Y1"]).hermitize()


# ---------------------------------------------------------------------------
# expected risk
# ---------------------------------------------------------------------------

def _risk_marginal(q: ChoiChannel, task: LearningTask) -> float:
    q_bar = symmetrize_channel(q) if q.n > 1 else q
    omega_1 = marginal_channel(q_bar, 1)
    r = r_operator(task)
    val = np.trace(omega_1.omega.matrix @ r.matrix)
    return float((task.d_a * task.d_x * val).real)


def _risk_direct(q: ChoiChannel, task: LearningTask) -> float:
    n = q.n
    dim = task.d_a * (task.d_x * task.d_y * task.d_r) ** n
    if dim > DIRECT_PATH_MAX_DIM:
        raise TensorError(
            f"direct risk evaluation needs dimension {dim}; use the marginal path")
    factors = [("A", task.d_a)]
    for i in range(1, n + 1):
        factors += [(f"X{i}", task.d_x), (f"Y{i}", task.d_y), (f"R{i}", task.d_r)]
    full = Factorization.of(*factors)
    parts = [task.rho_a]
    for i in range(1, n + 1):
        parts.append(task.rho_xr.relabel({"X1": f"X{i}", "R1": f"R{i}"}))
    rho_in = embed(tensor_all(parts), full)

    omega_big = embed(
        Operator(q.omega.matrix, q.omega.shape), full)
    in_labels = ["A"] + [f"X{i}" for i in range(1, n + 1)]
    twisted = partial_transpose(omega_big, in_labels)
    s_bar = embed(symmetrized_risk_observable(task.s, n), full)
    d_in = task.d_a * task.d_x ** n
    val = d_in * np.trace(twisted.matrix @ rho_in.matrix @ s_bar.matrix)
    return float(val.real)


def expected_risk(q: ChoiChannel, task: LearningTask, path: str = "auto") -> float:
    """Expected risk of a channel on a task.

    path: "marginal" (symmetrize + single-round Choi against the R-operator,
    works at any n), "direct" (apply the channel to the full n-round input,
    small n only), "auto" (marginal), or "both" (run both and insist they
    agree to 1e-8).
    """
    if q.n != task.n:
        raise TensorError(f"channel n={q.n} != task n={task.n}")
    if q.d_a != task.d_a or q.d_x != task.d_x or q.d_y != task.d_y:
        raise TensorError("channel dimensions do not match the task")
    if path in ("auto", "marginal"):
        return _risk_marginal(q, task)
    if path == "direct":
        return _risk_direct(q, task)
    if path == "both":
        a = _risk_direct(q, task)
        b = _risk_marginal(q, task)
        if abs(a - b) > 1e-8:
            raise TensorError(
                f"risk evaluation paths disagree: direct {a!r} vs marginal {b!r}")
        return b
    raise TensorError(f"unknown path {path!r}")


def protocol_risk(protocol: LoccProtocol, task: LearningTask) -> float:
    """Expected risk of a measure-then-apply protocol via its round marginal."""
    omega_1 = protocol.marginal_choi()
    r = r_operator(task)
    val = np.trace(omega_1.matrix @ r.matrix)
    return float((task.d_a * task.d_x * val).real)


# ---------------------------------------------------------------------------
# the gap experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RiskReport:
    risk_collective: float
    risk_locc: float
    gap: float
    bound: float
    grid_residual: float
    r_infnorm: float
    n: int


def risk_gap_experiment(task: LearningTask, q: ChoiChannel,
                        grid_spec="auto", **protocol_kwargs) -> RiskReport:
    """Collective-vs-LOCC gap with the (loose) rate bound, both reported."""
    risk_q = expected_risk(q, task, path="marginal")
    protocol = build_locc_protocol(q, grid_spec=grid_spec, **protocol_kwargs)
    risk_p = protocol_risk(protocol, task)
    r_inf = op_norm(r_operator(task))
    bound = theorem1_bound(task.d_a, task.d_x, task.d_y, task.n, r_inf)
    return RiskReport(
        risk_collective=risk_q, risk_locc=risk_p,
        gap=abs(risk_q - risk_p), bound=bound,
        grid_residual=float(protocol.provenance["grid_residual"]),
        r_infnorm=float(r_inf), n=task.n)
