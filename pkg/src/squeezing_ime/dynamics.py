"""Open quadratic bosonic systems in the quadrature representation.

Rates and frequencies are expressed in units of a reference damping (the
damping of the first mode in the bundled scenarios).  Quadrature vectors are
ordered ``R = (x_1 .. x_N | y_1 .. y_N)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import UnstableSystemError, ValidationError

HERMITIAN_TOL = 1e-12
COND_LIMIT = 1e12

DEFAULT_GRID_MAX = 5.0
DEFAULT_GRID_POINTS = 2001


def symplectic_form(n_modes):
    """Return the ``2N x 2N`` symplectic form ``[[0, I], [-I, 0]]``."""
    eye = np.eye(n_modes)
    zero = np.zeros((n_modes, n_modes))
    return np.block([[zero, eye], [-eye, zero]])


def amplitude_basis(n_modes):
    """Return ``L`` such that ``L^dagger R = (a | a^dagger)`` for quadratures ``R``."""
    eye = np.eye(n_modes)
    return np.block([[eye, eye], [-1j * eye, 1j * eye]]) / np.sqrt(2)


def _frozen(arr, dtype=None):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class QuadraticSystem:
    """N-mode source with Hamiltonian couplings ``G`` (Hermitian), ``F`` (symmetric)
    and per-mode dampings ``gamma``."""

    G: np.ndarray
    F: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=complex))
        F = np.atleast_2d(np.asarray(self.F, dtype=complex))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        n = gamma.shape[0]
        if gamma.ndim != 1 or n < 1:
            raise ValidationError("gamma must be a non-empty vector")
        if G.shape != (n, n) or F.shape != (n, n):
            raise ValidationError(f"G and F must be {n}x{n}, got {G.shape} and {F.shape}")
        if np.any(gamma <= 0) or not np.all(np.isfinite(gamma)):
            raise ValidationError(f"all dampings must be positive, got {gamma.tolist()}")
        for name, mat, ref in (("G", G, G.conj().T), ("F", F, F.T)):
            bad = np.argwhere(np.abs(mat - ref) > HERMITIAN_TOL)
            if bad.size:
                i, j = bad[0]
                kind = "Hermitian" if name == "G" else "symmetric"
                raise ValidationError(
                    f"{name} is not {kind}: {name}[{i + 1},{j + 1}] = {mat[i, j]:.6g} "
                    f"vs {name}[{j + 1},{i + 1}] = {mat[j, i]:.6g}"
                )
        object.__setattr__(self, "G", _frozen(G))
        object.__setattr__(self, "F", _frozen(F))
        object.__setattr__(self, "gamma", _frozen(gamma))

    @property
    def n_modes(self):
        return self.gamma.shape[0]

    @property
    def is_passive(self):
        return not np.any(self.F)

    @classmethod
    def passive(cls, G, gamma):
        G = np.atleast_2d(np.asarray(G, dtype=complex))
        return cls(G, np.zeros_like(G), gamma)


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing sample frequencies; ``symmetric`` asserts ``-w`` is present for every ``w``."""

    omegas: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.omegas, dtype=float))
        if w.ndim != 1 or w.size == 0:
            raise ValidationError("grid must be a non-empty vector")
        if w.size > 1 and np.any(np.diff(w) <= 0):
            raise ValidationError("grid frequencies must be strictly increasing")
        if self.symmetric:
            scale = max(1.0, np.abs(w).max())
            if np.abs(w + w[::-1]).max() > 1e-12 * scale:
                raise ValidationError("grid flagged symmetric but -omega is missing for some omega")
        object.__setattr__(self, "omegas", _frozen(w))

    @classmethod
    def uniform(cls, omega_max=DEFAULT_GRID_MAX, points=DEFAULT_GRID_POINTS):
        """Symmetric uniform grid on ``[-omega_max, omega_max]``."""
        if points < 2 or omega_max <= 0:
            raise ValidationError("uniform grid needs points >= 2 and omega_max > 0")
        w = np.linspace(-omega_max, omega_max, points)
        # exact mirror so that conjugate pairing is bit-exact
        half = points // 2
        w[points - half:] = -w[:half][::-1]
        if points % 2:
            w[half] = 0.0
        return cls(w, symmetric=True)

    def __len__(self):
        return self.omegas.size

    @property
    def nonnegative(self):
        """Indices of the grid points with ``omega >= 0``."""
        return np.flatnonzero(self.omegas >= 0)

    def mirror_index(self):
        """Index of ``-omega`` for each grid point (symmetric grids only)."""
        if not self.symmetric:
            raise ValidationError("mirror index requires a symmetric grid")
        return np.arange(len(self))[::-1]

    def refined(self):
        """Grid with every interval halved."""
        w = self.omegas
        mid = 0.5 * (w[1:] + w[:-1])
        out = np.empty(2 * w.size - 1)
        out[0::2] = w
        out[1::2] = mid
        if self.symmetric:
            n = out.size
            out[n - n // 2:] = -out[: n // 2][::-1]
        return FrequencyGrid(out, symmetric=self.symmetric)

    def __eq__(self, other):
        if not isinstance(other, FrequencyGrid):
            return NotImplemented
        return (
            self.symmetric == other.symmetric
            and self.omegas.shape == other.omegas.shape
            and bool(np.array_equal(self.omegas, other.omegas))
        )

    __hash__ = None


@dataclass(frozen=True)
class TransferGrid:
    """Sampled transfer function ``omega -> S(omega)`` (``2N x 2N`` complex per point)."""

    grid: FrequencyGrid
    matrices: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=complex)
        if m.ndim != 3 or m.shape[0] != len(self.grid) or m.shape[1] != m.shape[2] or m.shape[1] % 2:
            raise ValidationError(f"transfer matrices have shape {m.shape}, incompatible with grid")
        object.__setattr__(self, "matrices", _frozen(m))

    @property
    def n_modes(self):
        return self.matrices.shape[1] // 2

    def __matmul__(self, other):
        """Cascade: ``(self @ other)(w) = self(w) other(w)``; ``other`` acts first."""
        if not isinstance(other, TransferGrid):
            return NotImplemented
        if self.grid != other.grid:
            raise ValidationError("cannot compose transfer functions on different grids")
        return TransferGrid(self.grid, self.matrices @ other.matrices)

    def conjugate_symmetry_error(self):
        idx = self.grid.mirror_index()
        return float(np.abs(self.matrices[idx] - self.matrices.conj()).max())

    def symplectic_error(self):
        J = symplectic_form(self.n_modes)
        S = self.matrices
        return float(np.abs(S @ J @ S.conj().transpose(0, 2, 1) - J).max())


def build_coupling_matrix(system):
    """Real ``2N x 2N`` Hamiltonian coupling matrix of the Langevin equations."""
    G, F = system.G, system.F
    return np.block([
        [(G + F).imag, (G - F).real],
        [-(G + F).real, -(G + F).imag.T],
    ])


def hamiltonian_error(m):
    """``max |(J m)^T - J m|``; zero for a Hamiltonian matrix."""
    J = symplectic_form(m.shape[0] // 2)
    Jm = J @ m
    return float(np.abs(Jm.T - Jm).max())


def _check_stability(system, m):
    damping = np.diag(np.concatenate([system.gamma, system.gamma]))
    eig = np.linalg.eigvals(m - damping)
    worst = np.argmax(eig.real)
    if eig.real[worst] >= 0:
        raise UnstableSystemError(eig.imag[worst], np.inf)


def transfer_function(system, grid):
    """Evaluate ``S(w) = sqrt(2 Gamma) (i w + Gamma - M)^-1 sqrt(2 Gamma) - I`` on ``grid``.

    On symmetric grids only ``w >= 0`` is solved; negative frequencies are filled
    by conjugation so that ``S(-w) = S(w)*`` holds exactly.

    Raises:
        UnstableSystemError: if the system is at/above threshold or the resolvent
            condition number exceeds ``COND_LIMIT`` at some grid frequency.
    """
    m = build_coupling_matrix(system)
    _check_stability(system, m)
    n2 = 2 * system.n_modes
    gam = np.concatenate([system.gamma, system.gamma])
    root = np.sqrt(2 * gam)
    w = grid.omegas
    solve_idx = grid.nonnegative if grid.symmetric else np.arange(len(grid))
    A = 1j * w[solve_idx, None, None] * np.eye(n2) + (np.diag(gam) - m)
    cond = np.linalg.cond(A)
    bad = np.flatnonzero(~(cond < COND_LIMIT))
    if bad.size:
        k = bad[0]
        raise UnstableSystemError(w[solve_idx][k], cond[k])
    rhs = np.broadcast_to(np.diag(root), A.shape)
    S = root[:, None] * np.linalg.solve(A, rhs) - np.eye(n2)
    out = np.empty((len(grid), n2, n2), dtype=complex)
    out[solve_idx] = S
    if grid.symmetric:
        mirror = grid.mirror_index()
        neg = np.flatnonzero(w < 0)
        out[neg] = out[mirror[neg]].conj()
    return TransferGrid(grid, out)


def to_amplitude_rep(transfer):
    """Per-frequency ``L^dagger S(w) L`` acting on ``(a | a^dagger)``."""
    L = amplitude_basis(transfer.n_modes)
    return L.conj().T @ transfer.matrices @ L


def passive_amplitude_transfer(g, gamma, omegas):
    """``N x N`` mode transfer ``U(w)`` of a passive stage (fast path, no quadrature blow-up).

    ``U(w) = sqrt(2 Gamma) (i w + Gamma + i G)^-1 sqrt(2 Gamma) - I``; the
    quadrature transfer function is ``L diag(U(w), U(-w)*) L^dagger``.
    """
    g = np.asarray(g, dtype=complex)
    gamma = np.asarray(gamma, dtype=float)
    n = gamma.size
    root = np.sqrt(2 * gamma)
    omegas = np.asarray(omegas, dtype=float)
    A = 1j * omegas[:, None, None] * np.eye(n) + (np.diag(gamma) + 1j * g)
    rhs = np.broadcast_to(np.diag(root).astype(complex), A.shape)
    return root[:, None] * np.linalg.solve(A, rhs) - np.eye(n)
