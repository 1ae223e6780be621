"""Dense complex linear algebra on labelled tensor-product spaces.

Every operator carries an ordered factorization (label, dim) of the space it
acts on, so partial traces, partial transposes and factor permutations can be
requested by register name instead of by index bookkeeping.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, factorial
from typing import Callable, Iterable, Sequence

import numpy as np

HERM_TOL = 1e-9
PSD_TOL = 1e-8


class TensorError(ValueError):
    """Shape, label or contract violation in a tensor_core operation."""


@dataclass(frozen=True)
class Factorization:
    """Ordered list of (label, dim) factors of a tensor-product space."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        labels = [lab for lab, _ in self.factors]
        if len(set(labels)) != len(labels):
            raise TensorError(f"duplicate factor labels: {labels}")
        for lab, d in self.factors:
            if d < 1:
                raise TensorError(f"factor {lab!r} has non-positive dim {d}")

    @staticmethod
    def of(*factors: tuple[str, int]) -> "Factorization":
        return Factorization(tuple((str(l), int(d)) for l, d in factors))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.factors)

    @property
    def dim(self) -> int:
        out = 1
        for _, d in self.factors:
            out *= d
        return out

    def index(self, label: str) -> int:
        for i, (lab, _) in enumerate(self.factors):
            if lab == label:
                return i
        raise TensorError(f"unknown factor label {label!r} (have {self.labels})")

    def dim_of(self, label: str) -> int:
        return self.factors[self.index(label)][1]

    def concat(self, other: "Factorization") -> "Factorization":
        return Factorization(self.factors + other.factors)

    def relabel(self, mapping: dict[str, str]) -> "Factorization":
        return Factorization(tuple((mapping.get(lab, lab), d) for lab, d in self.factors))


@dataclass(frozen=True)
class Operator:
    """Square complex matrix on a factorized space. Immutable after creation."""

    matrix: np.ndarray = field(repr=False)
    shape: Factorization

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise TensorError(f"operator matrix must be square, got {m.shape}")
        if m.shape[0] != self.shape.dim:
            raise TensorError(
                f"matrix side {m.shape[0]} != factorization dim {self.shape.dim}"
            )
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    # -- convenience -------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.shape.dim

    @property
    def labels(self) -> tuple[str, ...]:
        return self.shape.labels

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def dagger(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.shape)

    def relabel(self, mapping: dict[str, str]) -> "Operator":
        return Operator(self.matrix, self.shape.relabel(mapping))

    def __add__(self, other: "Operator") -> "Operator":
        self._check_same_shape(other)
        return Operator(self.matrix + other.matrix, self.shape)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check_same_shape(other)
        return Operator(self.matrix - other.matrix, self.shape)

    def __mul__(self, scalar: complex) -> "Operator":
        return Operator(self.matrix * scalar, self.shape)

    __rmul__ = __mul__

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check_same_shape(other)
        return Operator(self.matrix @ other.matrix, self.shape)

    def _check_same_shape(self, other: "Operator"):
        if self.shape.labels != other.shape.labels or self.shape.dims != other.shape.dims:
            raise TensorError(
                f"factorization mismatch: {self.shape.factors} vs {other.shape.factors}"
            )

    def is_hermitian(self, tol: float = HERM_TOL) -> bool:
        return bool(np.abs(self.matrix - self.matrix.conj().T).max() <= tol)

    def hermitize(self, tol: float = HERM_TOL) -> "Operator":
        """Symmetrize (M+M†)/2; error if the anti-Hermitian part exceeds tol."""
        anti = np.abs(self.matrix - self.matrix.conj().T).max()
        if anti > tol:
            raise TensorError(f"operator is not Hermitian (anti part {anti:.3e} > {tol:g})")
        return Operator((self.matrix + self.matrix.conj().T) / 2, self.shape)


def op(matrix: np.ndarray, *factors: tuple[str, int]) -> Operator:
    return Operator(np.asarray(matrix, dtype=complex), Factorization.of(*factors))


def identity(shape: Factorization) -> Operator:
    return Operator(np.eye(shape.dim, dtype=complex), shape)


# ---------------------------------------------------------------------------
# structural operations
# ---------------------------------------------------------------------------

def tensor(a: Operator, b: Operator) -> Operator:
    """Kronecker product; factorizations are concatenated."""
    overlap = set(a.labels) & set(b.labels)
    if overlap:
        raise TensorError(f"label collision in tensor product: {sorted(overlap)}")
    return Operator(np.kron(a.matrix, b.matrix), a.shape.concat(b.shape))


def tensor_all(ops: Sequence[Operator]) -> Operator:
    out = ops[0]
    for o in ops[1:]:
        out = tensor(out, o)
    return out


def _trace_one_factor(m: np.ndarray, dims: Sequence[int], idx: int) -> np.ndarray:
    pre = int(np.prod(dims[:idx], initial=1))
    d = dims[idx]
    post = int(np.prod(dims[idx + 1:], initial=1))
    t = m.reshape(pre, d, post, pre, d, post)
    return np.einsum("aibcid->abcd", t).reshape(pre * post, pre * post)


def partial_trace(operator: Operator, keep: Iterable[str]) -> Operator:
    """Trace out every factor not in `keep`; factor order is preserved."""
    keep = set(keep)
    unknown = keep - set(operator.labels)
    if unknown:
        raise TensorError(f"unknown labels in keep set: {sorted(unknown)}")
    m = operator.matrix
    factors = list(operator.shape.factors)
    # trace right-to-left so earlier indices stay valid
    for i in reversed(range(len(factors))):
        lab, _ = factors[i]
        if lab not in keep:
            m = _trace_one_factor(m, [d for _, d in factors], i)
            factors.pop(i)
    return Operator(m, Factorization(tuple(factors)))


def partial_transpose(operator: Operator, subset: Iterable[str]) -> Operator:
    """Transpose on the selected factors."""
    subset = set(subset)
    unknown = subset - set(operator.labels)
    if unknown:
        raise TensorError(f"unknown labels in transpose set: {sorted(unknown)}")
    dims = operator.shape.dims
    m = operator.matrix
    for i, (lab, _) in enumerate(operator.shape.factors):
        if lab not in subset:
            continue
        pre = int(np.prod(dims[:i], initial=1))
        d = dims[i]
        post = int(np.prod(dims[i + 1:], initial=1))
        t = m.reshape(pre, d, post, pre, d, post)
        m = t.transpose(0, 4, 2, 3, 1, 5).reshape(operator.dim, operator.dim)
    return Operator(m, operator.shape)


def permute_factors(operator: Operator, new_labels: Sequence[str]) -> Operator:
    """Reorder tensor factors to the given label order (same label set)."""
    if sorted(new_labels) != sorted(operator.labels):
        raise TensorError(f"label sets differ: {new_labels} vs {operator.labels}")
    perm = [operator.shape.index(lab) for lab in new_labels]
    k = len(perm)
    dims = operator.shape.dims
    t = operator.matrix.reshape(dims + dims)
    t = t.transpose(perm + [p + k for p in perm])
    new_factors = tuple(operator.shape.factors[p] for p in perm)
    return Operator(t.reshape(operator.dim, operator.dim), Factorization(new_factors))


def align(operator: Operator, target_labels: Sequence[str]) -> np.ndarray:
    """Matrix of `operator` permuted to `target_labels` factor order."""
    return permute_factors(operator, target_labels).matrix


def embed(operator: Operator, full: Factorization) -> Operator:
    """Tensor with identity on the missing factors of `full`, in full's order."""
    missing = [f for f in full.factors if f[0] not in operator.labels]
    out = operator
    if missing:
        out = tensor(operator, identity(Factorization(tuple(missing))))
    return permute_factors(out, full.labels)


# ---------------------------------------------------------------------------
# spectral quantities
# ---------------------------------------------------------------------------

def trace_norm(operator: Operator | np.ndarray) -> float:
    """Sum of singular values."""
    m = operator.matrix if isinstance(operator, Operator) else np.asarray(operator)
    if np.abs(m - m.conj().T).max() <= HERM_TOL:
        return float(np.abs(np.linalg.eigvalsh((m + m.conj().T) / 2)).sum())
    return float(np.linalg.svd(m, compute_uv=False).sum())


def op_norm(operator: Operator | np.ndarray) -> float:
    """Largest singular value."""
    m = operator.matrix if isinstance(operator, Operator) else np.asarray(operator)
    if np.abs(m - m.conj().T).max() <= HERM_TOL:
        return float(np.abs(np.linalg.eigvalsh((m + m.conj().T) / 2)).max())
    return float(np.linalg.svd(m, compute_uv=False).max())


def trace_distance(a: Operator, b: Operator) -> float:
    """Normalized trace distance (1/2)‖a−b‖₁."""
    return 0.5 * trace_norm(a - b)


def _psd_eigs(m: np.ndarray, tol: float = PSD_TOL) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    if w.min() < -tol:
        raise TensorError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    return np.clip(w, 0, None), v


def herm_fn(operator: Operator, f: Callable[[np.ndarray], np.ndarray],
            cutoff: float | None = None) -> Operator:
    """Apply f to the eigenvalues of a Hermitian operator.

    With a cutoff, eigenvalues of magnitude <= cutoff are sent to 0 instead of
    through f (pseudo-inverse convention).
    """
    h = operator.hermitize()
    w, v = np.linalg.eigh(h.matrix)
    if cutoff is None:
        fw = np.asarray(f(w), dtype=float)
    else:
        live = np.abs(w) > cutoff
        fw = np.zeros_like(w)
        if live.any():
            fw[live] = f(w[live])
    return Operator((v * fw) @ v.conj().T, operator.shape)


def sqrtm_psd(operator: Operator) -> Operator:
    w, v = _psd_eigs(operator.matrix)
    return Operator((v * np.sqrt(w)) @ v.conj().T, operator.shape)


def inv_sqrtm_psd(operator: Operator, cutoff: float = 1e-10) -> Operator:
    return herm_fn(operator, lambda w: 1.0 / np.sqrt(w), cutoff=cutoff)


def fidelity(rho: Operator, sigma: Operator) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))²."""
    for state in (rho, sigma):
        if state.trace().real > 1 + 1e-10:
            raise TensorError(f"state trace {state.trace().real} exceeds 1")
    sr = sqrtm_psd(rho)
    inner = sr.matrix @ sigma.matrix @ sr.matrix
    w = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
    return float(np.sqrt(np.clip(w, 0, None)).sum() ** 2)


# ---------------------------------------------------------------------------
# permutations and the symmetric subspace
# ---------------------------------------------------------------------------

def permutation_matrix(perm: Sequence[int], site_dim: int) -> np.ndarray:
    """Unitary sending |i_1..i_n> to |i_{perm^{-1}(1)}..>, so P_s P_t = P_{s∘t}.

    `perm` is 0-indexed: perm[k] is the image of position k.
    """
    n = len(perm)
    d = site_dim
    total = d ** n
    digits = np.array(np.unravel_index(np.arange(total), (d,) * n))
    inv = np.argsort(np.asarray(perm))
    new_digits = digits[inv, :]
    new_idx = np.ravel_multi_index(tuple(new_digits), (d,) * n)
    m = np.zeros((total, total), dtype=complex)
    m[new_idx, np.arange(total)] = 1.0
    return m


def permutation_operator(perm: Sequence[int], site_dim: int,
                         prefix: str = "B") -> Operator:
    fac = Factorization.of(*((f"{prefix}{i + 1}", site_dim) for i in range(len(perm))))
    return Operator(permutation_matrix(perm, site_dim), fac)


def sym_dim(n: int, d: int) -> int:
    """Dimension of the symmetric subspace of n d-level systems."""
    return comb(n + d - 1, n)


def symmetric_projector(n: int, d: int, prefix: str = "B",
                        max_dim: int = 1 << 14) -> Operator:
    """Projector onto the symmetric subspace, as the S_n average of permutations."""
    if d ** n > max_dim:
        raise TensorError(f"symmetric projector dim {d}^{n} exceeds budget {max_dim}")
    total = np.zeros((d ** n, d ** n), dtype=complex)
    count = 0
    for perm in itertools.permutations(range(n)):
        total += permutation_matrix(perm, d)
        count += 1
    fac = Factorization.of(*((f"{prefix}{i + 1}", d) for i in range(n)))
    return Operator(total / count, fac)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def operator_to_json(operator: Operator) -> dict:
    return {
        "labels": list(operator.labels),
        "dims": list(operator.shape.dims),
        "re": operator.matrix.real.tolist(),
        "im": operator.matrix.imag.tolist(),
    }


def operator_from_json(data: dict) -> Operator:
    fac = Factorization.of(*zip(data["labels"], data["dims"]))
    m = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
    return Operator(m, fac)
