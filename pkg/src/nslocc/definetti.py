"""Finite-grid de Finetti machinery for permutation-symmetric states.

A symmetric mixed state on A ⊗ B^{⊗n} is first purified into a pure state on
(A, A') ⊗ (B, B')^{⊗n} that is symmetric under permutations of the doubled
sites.  Contracting the purification against a grid of product vectors
phi_g^{⊗n} (a finite stand-in for the coherent-state resolution of the
symmetric subspace) yields an operator-valued measure {M_g} on A together
with product states phi_g, whose mixture approximates the k-site marginals.

Grids are finite, so every downstream statement carries a grid residual:
either the trace-norm gap between sum_g w_g D |phi_g^n><phi_g^n| and the
symmetric projector (dense, small cases), or a certified subspace surrogate
evaluated on the purification itself (large cases).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import pi, sqrt

import numpy as np

from .tensor_core import (
    Factorization,
    Operator,
    TensorError,
    partial_trace,
    permutation_matrix,
    sqrtm_psd,
    sym_dim,
    symmetric_projector,
    trace_norm,
)

SYMMETRY_TOL = 1e-8
PURE_EIG_THRESHOLD = 1e-10
DENSE_RESIDUAL_BUDGET = 512  # largest site_dim**n for dense residual evaluation


# ---------------------------------------------------------------------------
# symmetric extensions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetricExtension:
    """Pure state on block ⊗ site^{⊗n}, symmetric under site permutations.

    Exactly one of two storages is used:

    * dense: `psi` of shape (block_dim, site_dim**n), the state as a matrix
      with the block index first;
    * branches: a list of (K_j, chi_j) with K_j PSD on A (d_a x d_a) and
      chi_j a unit site vector; the state is sum_j |j>|vec sqrt(K_j)> chi_j^{⊗n}
      with an orthogonal flag register absorbed into the block.  This form
      never materializes the site space and scales to large n.

    `site_dim` is the (possibly doubled) site dimension the grid must match;
    `site_keep_dim` is the physical site dimension after discarding the
    purifying halves.
    """

    n: int
    d_a: int
    site_dim: int
    site_keep_dim: int
    purified: bool
    psi: np.ndarray | None = field(default=None, repr=False)
    branches: tuple[tuple[np.ndarray, np.ndarray], ...] | None = field(
        default=None, repr=False)

    def __post_init__(self):
        if (self.psi is None) == (self.branches is None):
            raise TensorError("exactly one of psi / branches must be given")
        if self.psi is not None:
            nrm = np.linalg.norm(self.psi)
            if abs(nrm - 1.0) > 1e-8:
                raise TensorError(f"extension state norm {nrm} != 1")

    @property
    def block_dim(self) -> int:
        if self.psi is not None:
            return self.psi.shape[0]
        return len(self.branches) * self.d_a * self.d_a

    def block_marginal(self) -> np.ndarray:
        """Reduced state on A only (d_a x d_a)."""
        if self.branches is not None:
            return sum(k for k, _ in self.branches)
        # block index = (a, a') for purified, plain a otherwise
        m = self.psi @ self.psi.conj().T
        if not self.purified and m.shape[0] == self.d_a:
            return m
        d = self.d_a
        return np.einsum("abcb->ac", m.reshape(d, -1, d, m.shape[0] // d))


def _check_site_symmetry(psi: np.ndarray, n: int, d: int, tol: float):
    """Spot-check invariance under adjacent site transpositions."""
    block = psi.shape[0]
    t = psi.reshape((block,) + (d,) * n)
    for i in range(n - 1):
        axes = list(range(n + 1))
        axes[1 + i], axes[2 + i] = axes[2 + i], axes[1 + i]
        dev = float(np.abs(t - t.transpose(axes)).max())
        if dev > tol:
            raise TensorError(
                f"state is not symmetric under sites ({i + 1},{i + 2}): {dev:.3e}")


def purify_extension(omega: Operator, d_a: int | None = None) -> SymmetricExtension:
    """Symmetric purification of a state on A ⊗ B1..Bn.

    The factor layout of omega must be ("A", d_a), ("B1", d), ..., ("Bn", d);
    a missing A factor means d_a = 1.  If omega is (numerically) pure the
    state vector itself is returned with the original site dimension.
    Otherwise the purification pairs each site with its mirror copy, giving
    doubled sites of dimension d² and a block (A, A') of dimension d_a².
    """
    labels = list(omega.labels)
    if labels and labels[0] == "A":
        d_a = omega.shape.dims[0]
        site_dims = omega.shape.dims[1:]
    else:
        d_a = 1
        site_dims = omega.shape.dims
    if len(set(site_dims)) != 1:
        raise TensorError(f"sites must share one dimension, got {site_dims}")
    d = site_dims[0]
    n = len(site_dims)

    # permutation invariance of omega on the sites (adjacent transpositions)
    m = omega.matrix
    eye_a = np.eye(d_a)
    for i in range(n - 1):
        perm = list(range(n))
        perm[i], perm[i + 1] = perm[i + 1], perm[i]
        p = np.kron(eye_a, permutation_matrix(perm, d))
        dev = float(np.abs(p @ m @ p.conj().T - m).max())
        if dev > SYMMETRY_TOL:
            raise TensorError(
                f"omega is not permutation symmetric (transposition {i + 1},{i + 2}: "
                f"deviation {dev:.3e})")

    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    if w[-1] >= 1.0 - PURE_EIG_THRESHOLD:
        psi = v[:, -1].reshape(d_a, d ** n)
        psi = psi / np.linalg.norm(psi)
        ext = SymmetricExtension(n=n, d_a=d_a, site_dim=d, site_keep_dim=d,
                                 purified=False, psi=psi)
        _check_site_symmetry(ext.psi, n, d, 1e-7)
        return ext

    root = sqrtm_psd(omega).matrix
    # indices: (a, b1..bn ; a', b1'..bn') -> (a a') (b1 b1') ... (bn bn')
    t = root.reshape((d_a,) + (d,) * n + (d_a,) + (d,) * n)
    order = [0, n + 1]
    for i in range(n):
        order += [1 + i, n + 2 + i]
    t = t.transpose(order)
    psi = t.reshape(d_a * d_a, (d * d) ** n)
    psi = psi / np.linalg.norm(psi)
    ext = SymmetricExtension(n=n, d_a=d_a, site_dim=d * d, site_keep_dim=d,
                             purified=True, psi=psi)
    _check_site_symmetry(ext.psi, n, d * d, 1e-7)
    # reduced state on the unprimed system must reproduce omega
    return ext


def branch_extension(parts: list[tuple[Operator | np.ndarray, Operator | np.ndarray]],
                     n: int) -> SymmetricExtension:
    """Structured symmetric extension of sum_j K_j ⊗ phi_j^{⊗n}.

    Each part (K_j PSD on A, phi_j site state) becomes one branch with
    purified site vector chi_j = vec(sqrt(phi_j)); an orthogonal flag
    register keeps the branches incoherent.  Requires sum_j tr K_j = 1 so
    the extension is a unit vector.  Nothing of size site_dim**n is ever
    materialized, so this scales to n in the hundreds.
    """
    blocks = [k.matrix if isinstance(k, Operator) else np.asarray(k, complex)
              for k, _ in parts]
    preps = [p.matrix if isinstance(p, Operator) else np.asarray(p, complex)
             for _, p in parts]
    d_a = blocks[0].shape[0]
    d_site = preps[0].shape[0]
    mass = sum(np.trace(k).real for k in blocks)
    if abs(mass - 1.0) > 1e-8:
        raise TensorError(f"branch blocks have total trace {mass}, need 1")
    branches = []
    for k_j, p_j in zip(blocks, preps):
        w, v = np.linalg.eigh((p_j + p_j.conj().T) / 2)
        root = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
        chi = root.reshape(-1)  # (b, b') pairing, row index unprimed
        nrm = np.linalg.norm(chi)
        if nrm < 1e-12:
            raise TensorError("preparation state has zero trace")
        branches.append((k_j, chi / nrm))
    return SymmetricExtension(n=n, d_a=d_a, site_dim=d_site * d_site,
                              site_keep_dim=d_site, purified=True,
                              branches=tuple(branches))


def extension_from_measure_and_prepare(povm: list[Operator] | list[np.ndarray],
                                       preparations: list[Operator] | list[np.ndarray],
                                       n: int) -> SymmetricExtension:
    """Branch extension of sum_j (M_j^T/d_A) ⊗ phi_j^{⊗n} for a POVM {M_j}."""
    mats = [m.matrix if isinstance(m, Operator) else np.asarray(m, complex)
            for m in povm]
    if len(mats) != len(preparations):
        raise TensorError("need one preparation per POVM outcome")
    d_a = mats[0].shape[0]
    total = sum(mats)
    if np.abs(total - np.eye(d_a)).max() > 1e-8:
        raise TensorError("POVM does not sum to the identity")
    parts = [(m.T / d_a, p) for m, p in zip(mats, preparations)]
    return branch_extension(parts, n)


# ---------------------------------------------------------------------------
# grids over pure site states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureGrid:
    """Weighted pure-state grid on C^{d_eff} used to resolve Sym^n."""

    vectors: np.ndarray = field(repr=False)  # (count, d_eff), unit rows
    weights: np.ndarray = field(repr=False)  # (count,), sums to 1
    d_eff: int
    n: int
    mode: str
    resolution_residual: float | None

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise TensorError(f"grid weights sum to {self.weights.sum()}, not 1")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def to_json(self) -> dict:
        return {
            "mode": self.mode, "d_eff": self.d_eff, "n": self.n,
            "count": self.count,
            "vectors_re": self.vectors.real.tolist(),
            "vectors_im": self.vectors.imag.tolist(),
            "weights": self.weights.tolist(),
            "residual": self.resolution_residual,
        }


def grid_from_json(data: dict) -> MeasureGrid:
    vecs = np.asarray(data["vectors_re"], float) + 1j * np.asarray(data["vectors_im"], float)
    return MeasureGrid(vecs, np.asarray(data["weights"], float),
                       int(data["d_eff"]), int(data["n"]), data["mode"],
                       data["residual"])


def _dense_resolution_residual(vectors: np.ndarray, weights: np.ndarray,
                               n: int, d: int) -> float:
    """‖sum_g w_g D |phi_g^n><phi_g^n| − P_sym‖₁, materialized densely."""
    prods = vectors[:, :]
    stack = prods
    for _ in range(n - 1):
        stack = np.einsum("gi,gj->gij", stack.reshape(stack.shape[0], -1),
                          vectors).reshape(vectors.shape[0], -1)
    d_big = sym_dim(n, d)
    t = (weights[:, None] * stack).T @ stack.conj() * d_big
    proj = symmetric_projector(n, d).matrix
    return float(trace_norm(t - proj))


def build_grid(d_eff: int, n: int, mode: str = "haar", seed: int | None = None,
               count: int | None = None,
               include: np.ndarray | None = None) -> MeasureGrid:
    """Build a weighted grid of pure states on C^{d_eff}.

    haar mode: `count` unit vectors from the unitarily invariant measure
    (normalized complex Gaussians), equal weights.  design mode (d_eff = 2
    only): a product quadrature grid, Gauss-Legendre in the polar coordinate
    times a uniform azimuth, which integrates every matrix element of
    phi^{⊗n}(phi^{⊗n})† exactly, so the grid reproduces the symmetric
    projector to machine precision at any n.

    `include` appends extra unit vectors to a haar grid (weights stay
    uniform across all points); use it to place known preparation states
    on the grid.

    The resolution residual (trace-norm gap to the symmetric projector) is
    evaluated densely when d_eff**n is small and left None otherwise, in
    which case consumers substitute a subspace surrogate certified on the
    contracted state.
    """
    if mode == "design":
        if d_eff != 2:
            raise TensorError(f"design grids are only constructed for d_eff=2, "
                              f"got {d_eff}")
        nodes_u, w_u = np.polynomial.legendre.leggauss(n + 1)
        k_az = 2 * n + 1
        vecs, ws = [], []
        for u, wu in zip(nodes_u, w_u):
            c = sqrt((1.0 + u) / 2.0)
            s = sqrt((1.0 - u) / 2.0)
            for b in range(k_az):
                phase = np.exp(2j * pi * b / k_az)
                vecs.append([c, s * phase])
                ws.append(wu / 2.0 / k_az)
        vectors = np.asarray(vecs, complex)
        weights = np.asarray(ws, float)
        weights = weights / weights.sum()
        mode_tag = "design"
    elif mode == "haar":
        if count is None:
            raise TensorError("haar mode requires a point count")
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((count, d_eff)) + 1j * rng.standard_normal((count, d_eff))
        vectors = g / np.linalg.norm(g, axis=1, keepdims=True)
        if include is not None and len(include):
            extra = np.asarray(include, complex)
            extra = extra / np.linalg.norm(extra, axis=1, keepdims=True)
            vectors = np.vstack([vectors, extra])
        weights = np.full(vectors.shape[0], 1.0 / vectors.shape[0])
        mode_tag = f"haar:{seed}:{count}"
    else:
        raise TensorError(f"unknown grid mode {mode!r}")

    residual = None
    if d_eff ** n <= DENSE_RESIDUAL_BUDGET:
        residual = _dense_resolution_residual(vectors, weights, n, d_eff)
    return MeasureGrid(vectors, weights, d_eff, n, mode_tag, residual)


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeFinettiApprox:
    """Finite operator-valued measure with product factor states.

    items: list of (M_g PSD on A, phi_g trace-1 state on the physical site);
    M_g lives on the same side of the duality as the source state's A factor
    (for Choi states that is the transposed-POVM side).  grid_residual is the
    certified resolution defect inherited by every downstream bound;
    povm_deficit is the measured ‖sum_g M_g − omega_A‖₁.
    """

    items: tuple[tuple[Operator, Operator], ...]
    grid_residual: float
    povm_deficit: float
    source_n: int
    d_a: int
    site_keep_dim: int

    @property
    def total_mass(self) -> float:
        return float(sum(m.trace().real for m, _ in self.items))


def _block_overlaps(ext: SymmetricExtension, grid: MeasureGrid) -> np.ndarray:
    """Matrix U with rows u_g = (1_block ⊗ <phi_g^{⊗n}|) |psi>, shape (G, block).

    For branch extensions the block coordinates are per-branch: column j holds
    <phi_g|chi_j>^n * sqrt(tr K_j), which reproduces every inner product
    <u_g, u_h> needed downstream because distinct branches are orthogonal.
    """
    if ext.branches is not None:
        chis = np.stack([chi for _, chi in ext.branches])      # (J, d)
        traces = np.array([np.trace(k).real for k, _ in ext.branches])
        c = grid.vectors.conj() @ chis.T                        # <phi_g|chi_j>
        return (c ** ext.n) * np.sqrt(traces)[None, :]
    block = ext.psi.shape[0]
    d = ext.site_dim
    out = np.empty((grid.count, block), dtype=complex)
    for g in range(grid.count):
        cur = ext.psi
        v = grid.vectors[g].conj()
        for _ in range(ext.n):
            cur = cur.reshape(-1, d) @ v
        out[g] = cur.reshape(block)
    return out


def subspace_residual(ext: SymmetricExtension, grid: MeasureGrid,
                      overlaps: np.ndarray | None = None,
                      chunk: int = 512) -> float:
    """sqrt(<psi|(T−P)²|psi>) with T the grid operator, P the symmetric projector.

    Since |psi> and every phi_g^{⊗n} lie inside the symmetric subspace, this
    scalar upper-bounds the trace norm of any state-side defect of the grid,
    in particular ‖sum_g M_g − omega_A‖₁, at the cost of only pairwise grid
    overlaps (never the projector itself).
    """
    u = _block_overlaps(ext, grid) if overlaps is None else overlaps
    d_big = float(sym_dim(grid.n, grid.d_eff))
    w = grid.weights
    s1 = float(np.sum(w * d_big * np.linalg.norm(u, axis=1) ** 2))
    b = (w * d_big)[:, None] * u
    s2 = 0.0
    vecs = grid.vectors
    for lo in range(0, grid.count, chunk):
        hi = min(lo + chunk, grid.count)
        gram = (vecs[lo:hi].conj() @ vecs.T) ** grid.n       # <phi_g|phi_h>^n
        inner = b[lo:hi].conj() @ b.T                          # <b_g, b_h>
        s2 += float(np.real(np.sum(gram * inner)))
    return sqrt(max(0.0, 1.0 - 2.0 * s1 + s2))


def _site_state(ext: SymmetricExtension, vec: np.ndarray) -> Operator:
    """Physical-site state of a grid vector (trace out the purifying half)."""
    d = ext.site_keep_dim
    if ext.purified:
        g = vec.reshape(d, d)
        rho = g @ g.conj().T
    else:
        rho = np.outer(vec, vec.conj())
    rho = rho / np.trace(rho).real
    return Operator(rho, Factorization.of(("B", d)))


def extract_measure(ext: SymmetricExtension, grid: MeasureGrid) -> DeFinettiApprox:
    """Contract the extension against the grid to get the de Finetti measure.

    M_g = w_g * dim Sym^n * tr_{block minus A}[ u_g u_g† ] with
    u_g = (1 ⊗ <phi_g^{⊗n}|)|psi>, evaluated as pure vector contractions.
    """
    if grid.d_eff != ext.site_dim or grid.n != ext.n:
        raise TensorError(
            f"grid ({grid.d_eff}, n={grid.n}) does not match extension "
            f"({ext.site_dim}, n={ext.n})")
    d_big = float(sym_dim(ext.n, ext.site_dim))
    fac_a = Factorization.of(("A", ext.d_a))
    items = []
    u = _block_overlaps(ext, grid)
    if ext.branches is not None:
        ks = np.stack([k for k, _ in ext.branches])
        traces = np.array([np.trace(k).real for k, _ in ext.branches])
        # columns of u are a_gj * sqrt(tr K_j); M_g needs |a_gj|^2 * K_j
        amp2 = np.abs(u) ** 2 / np.where(traces > 0, traces, 1.0)[None, :]
        for g in range(grid.count):
            m = np.tensordot(grid.weights[g] * d_big * amp2[g], ks, axes=(0, 0))
            items.append((Operator(m, fac_a), _site_state(ext, grid.vectors[g])))
    else:
        d_a = ext.d_a
        blk = ext.psi.shape[0]
        for g in range(grid.count):
            full = grid.weights[g] * d_big * np.outer(u[g], u[g].conj())
            if blk == d_a:
                m = full
            else:
                m = np.einsum("abcb->ac", full.reshape(d_a, blk // d_a, d_a, blk // d_a))
            items.append((Operator(m, fac_a), _site_state(ext, grid.vectors[g])))

    total = sum(m.matrix for m, _ in items)
    deficit = float(trace_norm(total - ext.block_marginal()))
    if grid.resolution_residual is not None:
        residual = grid.resolution_residual
    else:
        # both terms upper-bound every state-side defect of the grid; the
        # triangle-inequality fallback mass+1 kicks in when the quadratic
        # surrogate degenerates on heavy-tailed under-resolved grids
        mass = float(sum(np.trace(m.matrix).real for m, _ in items))
        residual = min(subspace_residual(ext, grid, overlaps=u), mass + 1.0)
    return DeFinettiApprox(items=tuple(items), grid_residual=residual,
                           povm_deficit=deficit, source_n=ext.n,
                           d_a=ext.d_a, site_keep_dim=ext.site_keep_dim)


def approx_error(omega_k: Operator, approx: DeFinettiApprox, k: int) -> float:
    """Δ_k = ‖omega_{A B_1..B_k} − sum_g M_g ⊗ phi_g^{⊗k}‖₁.

    The caller compares against 4 d² k / n with d the physical site dimension
    (site_keep_dim) and n the source copy count.
    """
    if k > approx.source_n:
        raise TensorError(f"k={k} exceeds source n={approx.source_n}")
    d_a = approx.d_a
    d = approx.site_keep_dim
    dim = d_a * d ** k
    if omega_k.dim != dim:
        raise TensorError(f"omega_k dim {omega_k.dim} != expected {dim}")
    acc = np.zeros((dim, dim), dtype=complex)
    for m, phi in approx.items:
        term = m.matrix
        for _ in range(k):
            term = np.kron(term, phi.matrix)
        acc += term
    return float(trace_norm(omega_k.matrix - acc))


def definetti_bound(d_site: int, k: int, n: int) -> float:
    """The 4 d² k / n approximation guarantee for k marginals out of n."""
    return 4.0 * d_site ** 2 * k / n
