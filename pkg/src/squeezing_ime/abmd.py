"""Analytic (frequency-continued) Bloch-Messiah decomposition ``S(w) = U(w) D(w) V(w)^dagger``.

Symplectic-unitary ``U`` commute with ``J``; in the amplitude representation
they are block diagonal, ``L^dagger U L = diag(A, B)`` with ``A, B`` unitary,
and the squeezing matrix becomes ``[[cosh r, sinh r], [sinh r, cosh r]]``.
The left singular vectors of the amplitude transfer matrix for the singular
value ``d_i`` are therefore ``(A e_i | B e_i) / sqrt(2)``, which is how the
factorization is assembled with reciprocal pairing built in.

The continuation marches from ``w = 0`` (where ``S`` is real and a real
factorization is chosen) outward over ``w > 0``, re-aligning each pointwise
factorization with the previous frame; ``w < 0`` is filled by conjugation.

Degenerate anti-squeezing at ``w = 0`` (two supermodes with equal ``d``)
generically splits linearly, ``d +/- c w``, with complex-conjugate branch
vectors.  Then no smooth ``U`` is real at ``w = 0``; conjugation maps one
branch onto the other.  This is recorded as a gauge permutation ``P`` with
``U(-w) = U(w)^* P`` (``P`` is the identity in the non-degenerate case).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dynamics import FrequencyGrid, TransferGrid, _frozen, amplitude_basis, symplectic_form
from .errors import DecompositionError, ValidationError

SYMPLECTIC_TOL = 1e-8
CLUSTER_TOL = 1e-8
MIN_STEP_OVERLAP = 0.5


def _polar(m):
    """Unitary factor of the polar decomposition (nearest unitary)."""
    w, _, vh = np.linalg.svd(m)
    return w @ vh


def amplitude_blocks_to_quadrature(A, B):
    """``L diag(A, B) L^dagger`` for (stacks of) ``N x N`` blocks."""
    top = np.concatenate([(A + B) / 2, 1j * (A - B) / 2], axis=-1)
    bottom = np.concatenate([-1j * (A - B) / 2, (A + B) / 2], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def quadrature_to_amplitude_blocks(U):
    """Inverse of :func:`amplitude_blocks_to_quadrature` for ``U`` commuting with ``J``."""
    n = U.shape[-1] // 2
    u11 = U[..., :n, :n]
    u12 = U[..., :n, n:]
    return u11 - 1j * u12, u11 + 1j * u12


def _clusters(d, tol=CLUSTER_TOL):
    """Groups of indices whose values agree within ``tol`` (relative)."""
    order = np.argsort(-d, kind="stable")
    groups = [[order[0]]]
    for i in order[1:]:
        if abs(d[groups[-1][-1]] - d[i]) <= tol * max(1.0, d[i]):
            groups[-1].append(i)
        else:
            groups.append([i])
    return [sorted(g) for g in groups]


def _check_symplectic(s):
    s = np.asarray(s)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] % 2:
        raise ValidationError(f"expected a 2N x 2N matrix, got shape {s.shape}")
    J = symplectic_form(s.shape[0] // 2)
    err = np.abs(s @ J @ s.conj().T - J).max()
    if err > SYMPLECTIC_TOL * max(1.0, np.linalg.norm(s, 2) ** 2):
        raise ValidationError(f"matrix is not omega-symplectic (|S J S^dagger - J| = {err:.3g})")


def _canonical_unit_basis(basis, ref_idx):
    """Rotate an orthonormal basis toward the coordinate vectors ``ref_idx``."""
    ref = np.zeros((basis.shape[0], len(ref_idx)))
    ref[ref_idx, np.arange(len(ref_idx))] = 1.0
    return basis @ _polar(basis.conj().T @ ref)


def _amp_factor(s_amp, n):
    """Pointwise factorization of an amplitude-representation matrix.

    Returns ``(A, B, d)`` with ``d`` descending (anti-squeezing factors only).
    """
    W, sv, _ = np.linalg.svd(s_amp)
    d = sv[:n].copy()  # leading singular values are accurate to relative eps; the trailing ones are not
    k = int(np.sum(d <= 1.0 + CLUSTER_TOL))
    m = n - k
    A = np.empty((n, n), dtype=complex)
    B = np.empty((n, n), dtype=complex)
    for i in range(m):
        a, b = W[:n, i], W[n:, i]
        a = a / np.linalg.norm(a)
        b = b / np.linalg.norm(b)
        j = np.argmax(np.abs(a))
        ph = np.conj(a[j]) / abs(a[j])
        A[:, i], B[:, i] = a * ph, b * ph
    if k:
        Y = W[:, m:n + k]
        Ac = np.linalg.svd(Y[:n], full_matrices=False)[0][:, :k]
        Bc = np.linalg.svd(Y[n:], full_matrices=False)[0][:, :k]
        proj = np.linalg.norm(Ac, axis=1)
        ref_idx = np.sort(np.argsort(-proj, kind="stable")[:k])
        A[:, m:] = _canonical_unit_basis(Ac, ref_idx)
        B[:, m:] = _canonical_unit_basis(Bc, ref_idx)
        d[m:] = 1.0
    return _polar(A), _polar(B), d


def _real_factor(s, n):
    """Pointwise factorization of a real symplectic matrix with real ``U``."""
    J = symplectic_form(n)
    W, sv, _ = np.linalg.svd(s)
    d = sv[:n].copy()  # leading singular values are accurate to relative eps; the trailing ones are not
    k = int(np.sum(d <= 1.0 + CLUSTER_TOL))
    m = n - k
    cols = []
    for i in range(m):
        u = W[:, i]
        cols.append(u if u[np.argmax(np.abs(u))] > 0 else -u)
    if k:
        rem = W[:, m:n + k]
        avail = list(range(n))
        for _ in range(k):
            proj = np.linalg.norm(rem[avail], axis=1)
            j = avail[int(np.argmax(proj))]
            avail.remove(j)
            u = rem @ rem[j]
            u /= np.linalg.norm(u)
            cols.append(u)
            if rem.shape[1] > 2:
                ju = J @ u
                rest = rem - np.outer(u, u @ rem) - np.outer(ju, ju @ rem)
                rem = np.linalg.svd(rest, full_matrices=False)[0][:, : rem.shape[1] - 2]
        d[m:] = 1.0
    Uhalf = np.stack(cols, axis=1)
    U = np.concatenate([Uhalf, -J @ Uhalf], axis=1)
    A, _ = quadrature_to_amplitude_blocks(U)
    A = _polar(A)
    return A, A.conj(), d


def _assemble(A, B, d, s):
    u = amplitude_blocks_to_quadrature(A, B)
    dd = np.concatenate([d, 1.0 / d], axis=-1)
    v = np.swapaxes(s.conj(), -1, -2) @ u / dd[..., None, :]
    return u, dd, v


@dataclass(frozen=True)
class PointwiseBMD:
    u: np.ndarray
    d: np.ndarray
    v: np.ndarray
    degenerate_clusters: tuple = ()


def pointwise_bmd(s):
    """Bloch-Messiah factorization ``s = u diag(d) v^dagger`` at a single frequency.

    Real input yields real orthogonal-symplectic ``u`` and ``v``.  Degenerate
    anti-squeezing clusters (1-based mode indices) are reported in
    ``degenerate_clusters``.

    Raises:
        ValidationError: if ``s`` is not omega-symplectic.
    """
    s = np.asarray(s)
    _check_symplectic(s)
    n = s.shape[0] // 2
    if not np.iscomplexobj(s) or not np.any(s.imag):
        A, B, d = _real_factor(np.real(s), n)
    else:
        L = amplitude_basis(n)
        A, B, d = _amp_factor(L.conj().T @ s @ L, n)
    u, dd, v = _assemble(A, B, d, s)
    if not np.iscomplexobj(s) or not np.any(s.imag):
        u, v = u.real, v.real
    clusters = tuple(tuple(i + 1 for i in c) for c in _clusters(d) if len(c) > 1)
    return PointwiseBMD(u, dd, v, clusters)


def _align(A, B, d, Ap, Bp):
    """Match the columns of a fresh factorization to the previous frame.

    Optimal column assignment, then per-cluster Procrustes rotation (common to
    both blocks for squeezed clusters, independent for the ``d = 1`` cluster,
    where the factorization leaves both free); singleton rotations are the
    phase fix.  Returns the aligned ``(A, B, d)`` and the worst column overlap.
    """
    ov = np.abs(Ap.conj().T @ A) ** 2 + np.abs(Bp.conj().T @ B) ** 2
    _, col = linear_sum_assignment(-ov)
    A, B, d = A[:, col], B[:, col], d[col]
    for g in _clusters(d):
        if d[g[0]] <= 1.0 + CLUSTER_TOL:
            A[:, g] = A[:, g] @ _polar(A[:, g].conj().T @ Ap[:, g])
            B[:, g] = B[:, g] @ _polar(B[:, g].conj().T @ Bp[:, g])
        else:
            W = _polar(A[:, g].conj().T @ Ap[:, g] + B[:, g].conj().T @ Bp[:, g])
            A[:, g] = A[:, g] @ W
            B[:, g] = B[:, g] @ W
    quality = 0.5 * (np.abs(np.sum(Ap.conj() * A, axis=0)) + np.abs(np.sum(Bp.conj() * B, axis=0)))
    return A, B, d, float(quality.min())


@dataclass(frozen=True)
class MorphingDecomposition:
    """Smooth ``U(w)``, ``d(w)``, ``V(w)`` on a symmetric grid.

    Attributes:
        grid: Frequency grid (symmetric, containing 0).
        u: Symplectic-unitary left factors; column ``N + i`` is the i-th squeezed supermode.
        d: ``(d_1..d_N | 1/d_1..1/d_N)`` per frequency.
        v: Symplectic-unitary right factors.
        gauge: 0-based permutation ``P`` of the N supermodes with
            ``U(-w)[:, k] = U(w)[:, P[k]]^*``; identity unless ``d`` is degenerate at 0.
        crossings: Frequencies (``w > 0``) where the continued ``d_i`` stop being descending.
    """

    grid: FrequencyGrid
    u: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    gauge: np.ndarray = field(repr=False)
    crossings: tuple = ()

    def __post_init__(self):
        for name in ("u", "d", "v", "gauge"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_modes(self):
        return self.d.shape[1] // 2

    @property
    def gauge_is_identity(self):
        return bool(np.array_equal(self.gauge, np.arange(self.n_modes)))

    def squeezing(self, i):
        """``d_i(w)^-2`` (noise of the i-th squeezed supermode relative to vacuum), 1-based ``i``."""
        return self.d[:, i - 1] ** -2

    def antisqueezing(self, i):
        return self.d[:, i - 1] ** 2

    def reconstruction_error(self, transfer):
        """Per-frequency ``max |U D V^dagger - S|``."""
        rec = (self.u * self.d[:, None, :]) @ self.v.conj().transpose(0, 2, 1)
        return np.abs(rec - transfer.matrices).max(axis=(1, 2))

    def unitarity_error(self):
        eye = np.eye(2 * self.n_modes)
        out = []
        for m in (self.u, self.v):
            out.append(np.abs(m.conj().transpose(0, 2, 1) @ m - eye).max(axis=(1, 2)))
        return np.maximum(*out)

    def symplectic_error(self):
        J = symplectic_form(self.n_modes)
        out = []
        for m in (self.u, self.v):
            out.append(np.abs(m @ J @ m.conj().transpose(0, 2, 1) - J).max(axis=(1, 2)))
        return np.maximum(*out)

    def reciprocity_error(self):
        n = self.n_modes
        return np.abs(self.d[:, :n] * self.d[:, n:] - 1.0).max(axis=1)

    def _full_gauge(self):
        return np.concatenate([self.gauge, self.gauge + self.n_modes])

    def conjugate_symmetry_error(self):
        """Max violation of ``U(-w) = U(w)^* P``, ``d(-w) = P d(w)``, ``V(-w) = V(w)^* P``."""
        idx = self.grid.mirror_index()
        p = self._full_gauge()
        errs = [
            np.abs(self.u[idx] - self.u.conj()[:, :, p]).max(),
            np.abs(self.d[idx] - self.d[:, p]).max(),
            np.abs(self.v[idx] - self.v.conj()[:, :, p]).max(),
        ]
        return float(max(errs))

    def step_norms(self):
        """Frobenius norms ``|U(w_{k+1}) - U(w_k)|`` along the grid."""
        return np.linalg.norm(np.diff(self.u, axis=0), axis=(1, 2))

    def ordering_violation(self, nonnegative_only=True):
        n = self.n_modes
        sel = self.grid.nonnegative if nonnegative_only else slice(None)
        d = self.d[sel, :n]
        return float(np.max(np.diff(d, axis=1), initial=0.0))


def continue_decomposition(transfer):
    """Frequency-continued Bloch-Messiah decomposition of a sampled transfer function.

    Args:
        transfer: Transfer function on a symmetric grid that contains ``w = 0``.

    Returns:
        MorphingDecomposition with exact reconstruction ``U D V^dagger = S``.

    Raises:
        ValidationError: if the grid is not symmetric or lacks ``w = 0``.
        DecompositionError: if consecutive frames cannot be matched (the
            supermodes rotate too fast for the grid resolution).
    """
    if not isinstance(transfer, TransferGrid):
        raise ValidationError("continue_decomposition expects a TransferGrid")
    grid = transfer.grid
    if not grid.symmetric:
        raise ValidationError("continuation needs a symmetric grid")
    w = grid.omegas
    zero = np.flatnonzero(w == 0.0)
    if zero.size != 1:
        raise ValidationError("continuation needs a grid containing omega = 0 (use an odd point count)")
    z = int(zero[0])
    n = transfer.n_modes
    S = transfer.matrices
    _check_symplectic(S[z])
    if np.abs(S[z].imag).max() > SYMPLECTIC_TOL * max(1.0, np.abs(S[z]).max()):
        raise ValidationError("transfer function at omega = 0 is not real")
    L = amplitude_basis(n)
    Lh = L.conj().T
    pos = np.flatnonzero(w > 0)

    A0, B0, d0 = _real_factor(S[z].real, n)
    squeezed_clusters = [g for g in _clusters(d0) if len(g) > 1 and d0[g[0]] > 1.0 + CLUSTER_TOL]
    if squeezed_clusters and pos.size:
        # Orient degenerate subspaces along the branches into which they split.
        A1, B1, d1 = _amp_factor(Lh @ S[pos[0]] @ L, n)
        A1, B1, d1, _ = _align(A1, B1, d1, A0, B0)
        for g in squeezed_clusters:
            W = _polar(A0[:, g].conj().T @ A1[:, g] + B0[:, g].conj().T @ B1[:, g])
            order = np.argsort(-d1[g], kind="stable")
            A0[:, g] = (A0[:, g] @ W)[:, order]
            B0[:, g] = (B0[:, g] @ W)[:, order]
            d0[g] = np.mean(d0[g])

    # Gauge permutation: column k at omega=0 is the conjugate image of column P[k].
    # The conjugate of the amplitude column (a | b) is (b^* | a^*).
    Z = np.concatenate([A0, B0])
    Zc = np.concatenate([B0.conj(), A0.conj()])
    _, gauge = linear_sum_assignment(-np.abs(Z.conj().T @ Zc) ** 2)
    if not np.array_equal(gauge[gauge], np.arange(n)):
        raise DecompositionError("degenerate supermodes at omega = 0 could not be paired by conjugation")
    for k in range(n):
        l = gauge[k]
        if l == k:
            a, b = A0[:, k], B0[:, k]
            c = a @ b
            if abs(c) > 0:
                ph = np.exp(-0.5j * np.angle(c))
                A0[:, k] = a * ph
            B0[:, k] = A0[:, k].conj()
        elif l > k:
            A0[:, l], B0[:, l] = B0[:, k].conj(), A0[:, k].conj()
    A0, B0 = _polar(A0), _polar(B0)

    As = np.empty((len(w), n, n), dtype=complex)
    Bs = np.empty_like(As)
    ds = np.empty((len(w), n))
    As[z], Bs[z], ds[z] = A0, B0, d0
    prev = (A0, B0)
    crossings = []
    unordered = False
    for j in pos:
        A, B, d = _amp_factor(Lh @ S[j] @ L, n)
        A, B, d, quality = _align(A, B, d, *prev)
        if quality < MIN_STEP_OVERLAP:
            raise DecompositionError(
                f"supermode continuation lost track (frame overlap {quality:.3f})", (w[j - 1], w[j])
            )
        now_unordered = bool(np.any(np.diff(d) > CLUSTER_TOL))
        if now_unordered and not unordered:
            crossings.append(float(w[j]))
        unordered = now_unordered
        As[j], Bs[j], ds[j] = A, B, d
        prev = (A, B)

    mirror = grid.mirror_index()
    neg = np.flatnonzero(w < 0)
    src = mirror[neg]
    # U(-w) = U(w)^* P  <=>  A(-w) = B(w)^* P, B(-w) = A(w)^* P
    As[neg] = Bs[src].conj()[:, :, gauge]
    Bs[neg] = As[src].conj()[:, :, gauge]
    ds[neg] = ds[src][:, gauge]

    u, dd, v = _assemble(As, Bs, ds, S)
    if np.array_equal(gauge, np.arange(n)):
        u[z], v[z] = u[z].real, v[z].real
    return MorphingDecomposition(grid, u, dd, v, gauge, tuple(crossings))


@dataclass(frozen=True)
class SupermodeMap:
    """Per-frequency linear map ``R -> U(w)^dagger R`` onto supermode quadratures."""

    grid: FrequencyGrid
    matrices: np.ndarray = field(repr=False)
    labels: tuple
    noise: np.ndarray = field(repr=False)


def supermode_quadratures(decomp):
    """Map output quadratures onto the morphing supermode quadratures.

    Row ``i`` (1-based, ``i <= N``) is the i-th anti-squeezed quadrature and
    row ``N + i`` the i-th squeezed one; ``noise`` holds their spectral noise
    ``d^2 * vacuum_level`` (vacuum input).
    """
    from .spectra import VACUUM_LEVEL

    n = decomp.n_modes
    labels = tuple(f"{i}-th anti-squeezed supermode quadrature" for i in range(1, n + 1)) + tuple(
        f"{i}-th squeezed supermode quadrature" for i in range(1, n + 1)
    )
    return SupermodeMap(
        decomp.grid,
        decomp.u.conj().transpose(0, 2, 1),
        labels,
        VACUUM_LEVEL * decomp.d**2,
    )
