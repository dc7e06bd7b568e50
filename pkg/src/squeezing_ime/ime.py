"""Interferometers with memory effect (IMEs): passive cavity networks placed before homodyne detection.

An IME stage is a passive quadratic system (``F = 0``); a chain applies its
stages in order.  A constant LO ``q`` seen through an IME acts as the
frequency-dependent generalized LO ``q~(w) = S_IME(w)^dagger q``.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import _simplex
from .abmd import continue_decomposition
from .dynamics import (
    HERMITIAN_TOL,
    FrequencyGrid,
    QuadraticSystem,
    TransferGrid,
    _frozen,
    amplitude_basis,
    passive_amplitude_transfer,
    transfer_function,
)
from .errors import ValidationError
from .spectra import (
    LocalOscillator,
    SpectralCovariance,
    lo_from_angles,
    lo_to_angles,
    spectral_covariance,
    to_db,
)

NORM_TOL = 1e-10
PATH_TOL = 1e-10
DEFAULT_TOL_DB = 0.5
DEFAULT_N_STARTS = 32
DEFAULT_BAND_POINTS = 101
DEFAULT_BAND = (0.0, 3.0)
DETUNING_BOX = (-6.0, 6.0)
DAMPING_MAX = 6.0
COUPLING_MAX = 6.0
OBJECTIVES = ("db", "overlap", "stationary")


@dataclass(frozen=True)
class ImeStage:
    """Passive N-mode stage: Hermitian ``g_ime`` (detunings on the diagonal) and dampings ``gamma_ime``."""

    g_ime: np.ndarray
    gamma_ime: np.ndarray

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.g_ime, dtype=complex))
        gamma = np.atleast_1d(np.asarray(self.gamma_ime, dtype=float))
        n = g.shape[0]
        if g.shape != (n, n):
            raise ValidationError(f"g_ime must be square, got {g.shape}")
        if gamma.size == 1 and n > 1:
            gamma = np.full(n, gamma[0])
        if gamma.shape != (n,):
            raise ValidationError(f"gamma_ime must have {n} entries, got {gamma.size}")
        if np.any(gamma <= 0):
            raise ValidationError(f"IME dampings must be positive, got {gamma.tolist()}")
        if np.abs(g - g.conj().T).max() > HERMITIAN_TOL:
            raise ValidationError("g_ime must be Hermitian")
        object.__setattr__(self, "g_ime", _frozen(g))
        object.__setattr__(self, "gamma_ime", _frozen(gamma))

    @property
    def n_modes(self):
        return self.gamma_ime.size

    @classmethod
    def from_parameters(cls, detunings, gamma, couplings=None):
        """Build a stage from detunings, dampings and ``{(m, n): (theta, phi)}`` couplings.

        Mode indices are 0-based with ``m < n``; the coupling enters as
        ``G[m, n] = theta e^{-i phi}`` and ``G[n, m] = theta e^{i phi}``.
        """
        det = np.atleast_1d(np.asarray(detunings, dtype=float))
        g = np.diag(det).astype(complex)
        for (m, n), (theta, phi) in (couplings or {}).items():
            if not 0 <= m < n < det.size:
                raise ValidationError(f"invalid coupling pair ({m}, {n}) for {det.size} modes")
            g[m, n] = theta * np.exp(-1j * phi)
            g[n, m] = theta * np.exp(1j * phi)
        return cls(g, gamma)

    def as_system(self):
        return QuadraticSystem.passive(self.g_ime, self.gamma_ime)

    def amplitude_transfer(self, omegas):
        return passive_amplitude_transfer(self.g_ime, self.gamma_ime, omegas)


@dataclass(frozen=True)
class ImeChain:
    """Ordered IME stages; the first stage acts first.  An empty chain is the identity."""

    stages: tuple = ()
    n_modes: int = 0

    def __post_init__(self):
        stages = tuple(self.stages)
        n = self.n_modes or (stages[0].n_modes if stages else 0)
        if n < 1:
            raise ValidationError("empty IME chain needs an explicit n_modes")
        for k, s in enumerate(stages):
            if not isinstance(s, ImeStage):
                raise ValidationError(f"stage {k + 1} is not an ImeStage")
            if s.n_modes != n:
                raise ValidationError(f"stage {k + 1} has {s.n_modes} modes, chain has {n}")
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "n_modes", n)

    def __len__(self):
        return len(self.stages)

    def amplitude_transfer(self, omegas):
        """Mode transfer ``U_IME(w) = U_last(w) ... U_first(w)`` (``N x N`` per frequency)."""
        omegas = np.asarray(omegas, dtype=float)
        out = np.broadcast_to(np.eye(self.n_modes, dtype=complex), (omegas.size, self.n_modes, self.n_modes))
        for s in self.stages:
            out = s.amplitude_transfer(omegas) @ out
        return out


def ime_transfer(chain, grid):
    """Quadrature transfer function of an IME chain on a symmetric grid.

    Each stage is evaluated as a passive quadratic system and the composite is
    ``S_last(w) ... S_first(w)``.
    """
    if not grid.symmetric:
        raise ValidationError("IME transfer needs a symmetric grid")
    n2 = 2 * chain.n_modes
    out = TransferGrid(grid, np.broadcast_to(np.eye(n2, dtype=complex), (len(grid), n2, n2)))
    for s in chain.stages:
        # passive stages with gamma > 0 are always stable
        out = transfer_function(s.as_system(), grid) @ out
    return out


def quadrature_from_mode_transfer(u_pos, u_neg):
    """``L diag(U(w), U(-w)^*) L^dagger`` from mode transfers at ``+w`` and ``-w``."""
    n = u_pos.shape[-1]
    L = amplitude_basis(n)
    blk = np.zeros(u_pos.shape[:-2] + (2 * n, 2 * n), dtype=complex)
    blk[..., :n, :n] = u_pos
    blk[..., n:, n:] = u_neg.conj()
    return L @ blk @ L.conj().T


def chain_quadrature_transfer(chain, omegas):
    """Fast quadrature transfer of a chain at arbitrary frequencies (no symmetry needed)."""
    omegas = np.asarray(omegas, dtype=float)
    return quadrature_from_mode_transfer(chain.amplitude_transfer(omegas), chain.amplitude_transfer(-omegas))


@dataclass(frozen=True)
class GeneralizedLO:
    grid: FrequencyGrid
    qtilde: np.ndarray = field(repr=False)

    def __post_init__(self):
        q = np.asarray(self.qtilde, dtype=complex)
        if q.ndim != 2 or q.shape[0] != len(self.grid):
            raise ValidationError("generalized LO must be a per-frequency vector stack")
        norms = np.linalg.norm(q, axis=1)
        if np.abs(norms - 1.0).max() > NORM_TOL:
            raise ValidationError(f"generalized LO norm deviates from 1 by {np.abs(norms - 1).max():.3g}")
        object.__setattr__(self, "qtilde", _frozen(q))

    def conjugate_symmetry_error(self):
        return float(np.abs(self.qtilde[self.grid.mirror_index()] - self.qtilde.conj()).max())


def generalized_lo(q, ime):
    """``q~(w) = S_IME(w)^dagger q`` (so that ``q~^dagger = q^T S_IME``)."""
    qv = q.q if isinstance(q, LocalOscillator) else LocalOscillator(q).q
    if qv.size != ime.matrices.shape[1]:
        raise ValidationError(f"LO dimension {qv.size} does not match IME dimension {ime.matrices.shape[1]}")
    return GeneralizedLO(ime.grid, np.einsum("wji,j->wi", ime.matrices.conj(), qv))


def overlap_spectrum(qtilde, decomp, target_index):
    """``|q~(w)^dagger U_k(w)|^2`` for the 1-based column ``k = target_index`` of ``U``."""
    n2 = decomp.u.shape[1]
    if not 1 <= target_index <= n2:
        raise ValidationError(f"target_index must be in [1, {n2}], got {target_index}")
    if qtilde.grid != decomp.grid:
        raise ValidationError("generalized LO and decomposition are on different grids")
    col = decomp.u[:, :, target_index - 1]
    return np.abs(np.einsum("wi,wi->w", qtilde.qtilde.conj(), col)) ** 2


def propagate_covariance(ime, sigma):
    """Covariance after the IME: ``S_IME(w) sigma(w) S_IME(-w)^T``."""
    if ime.grid != sigma.grid:
        raise ValidationError("IME and covariance are on different grids")
    S = ime.matrices
    S_neg = S[ime.grid.mirror_index()]
    return SpectralCovariance(sigma.grid, S @ sigma.sigmas @ S_neg.transpose(0, 2, 1))


def detected_spectrum(q, ime, source_sigma):
    """Noise spectrum detected by homodyning ``q`` after the IME.

    Evaluated through the propagated covariance and cross-checked against the
    generalized-LO form ``q~^dagger sigma q~``.
    """
    from .spectra import noise_spectral_power

    lo = q if isinstance(q, LocalOscillator) else LocalOscillator(q)
    spec = noise_spectral_power(propagate_covariance(ime, source_sigma), lo)
    qt = generalized_lo(lo, ime).qtilde
    alt = np.einsum("wi,wij,wj->w", qt.conj(), source_sigma.sigmas, qt).real
    err = np.abs(alt - spec.values).max()
    if err > PATH_TOL * max(1.0, np.abs(spec.values).max()):
        raise ValidationError(f"detected-spectrum evaluation paths disagree by {err:.3g}")
    return spec


def target_db(decomp, target_index):
    """Optimal noise of supermode column ``target_index`` (1-based) in dB: ``20 log10 D_k``."""
    return 20.0 * np.log10(decomp.d[:, target_index - 1])


@dataclass(frozen=True)
class MatchReport:
    """Mode-matching quality on the ``w >= 0`` half of a grid.

    ``band_fraction`` is the fraction of in-band points where the detected
    spectrum lies within ``tol_db`` of the target.
    """

    grid: FrequencyGrid
    overlap: np.ndarray = field(repr=False)
    detected_db: np.ndarray = field(repr=False)
    target_db: np.ndarray = field(repr=False)
    band: tuple
    tol_db: float
    band_fraction: float
    target_index: int

    def __post_init__(self):
        if np.any(self.overlap > 1 + 1e-12) or np.any(self.overlap < -1e-12):
            raise ValidationError("overlap outside [0, 1]")
        for name in ("overlap", "detected_db", "target_db"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def in_band(self):
        return _band_mask(self.grid.omegas, self.band)

    @property
    def max_deviation_db(self):
        m = self.in_band
        return float(np.abs(self.detected_db[m] - self.target_db[m]).max())

    @property
    def min_overlap(self):
        return float(self.overlap[self.in_band].min())


def _band_mask(omegas, band):
    a = np.abs(omegas)
    return (a >= band[0] - 1e-12) & (a <= band[1] + 1e-12)


def _check_band(band):
    band = (float(band[0]), float(band[1]))
    if not 0 <= band[0] < band[1]:
        raise ValidationError(f"band must satisfy 0 <= low < high, got {band}")
    return band


def match_report(system, chain, lo, grid, target_index=None, band=DEFAULT_BAND, tol_db=DEFAULT_TOL_DB,
                 decomp=None):
    """Evaluate how well ``chain`` + ``lo`` recover supermode ``target_index``.

    Bands are intervals of ``|w|`` (all spectra here are even in ``w``).
    """
    band = _check_band(band)
    n = system.n_modes
    target_index = n + 1 if target_index is None else target_index
    transfer = transfer_function(system, grid)
    decomp = continue_decomposition(transfer) if decomp is None else decomp
    sigma = spectral_covariance(transfer)
    ime = ime_transfer(chain, grid)
    detected = detected_spectrum(lo, ime, sigma)
    overlap = overlap_spectrum(generalized_lo(lo, ime), decomp, target_index)
    pos = grid.nonnegative
    half = FrequencyGrid(grid.omegas[pos])
    det_db = detected.db_values[pos]
    tgt_db = target_db(decomp, target_index)[pos]
    mask = _band_mask(half.omegas, band)
    frac = float(np.mean(np.abs(det_db[mask] - tgt_db[mask]) <= tol_db)) if mask.any() else 0.0
    return MatchReport(half, np.clip(overlap[pos], 0.0, None), det_db, tgt_db, band, float(tol_db), frac,
                       int(target_index))


@dataclass(frozen=True)
class ImeTopology:
    """Free-parameter layout of an IME chain plus its LO.

    Per stage the vector holds ``N`` detunings, ``(theta, phi)`` for each
    coupled pair and either one shared damping (``equal_damping``) or ``N``
    dampings; the ``2N - 1`` LO angles follow the stages.
    """

    n_modes: int
    n_stages: int = 1
    couplings: tuple = None
    equal_damping: bool = True
    with_lo: bool = True

    def __post_init__(self):
        if self.n_modes < 1 or self.n_stages < 0:
            raise ValidationError("topology needs n_modes >= 1 and n_stages >= 0")
        pairs = tuple(combinations(range(self.n_modes), 2)) if self.couplings is None else self.couplings
        pairs = tuple(sorted((int(min(p)), int(max(p))) for p in pairs))
        for m, n in pairs:
            if not 0 <= m < n < self.n_modes:
                raise ValidationError(f"invalid coupling pair ({m + 1}, {n + 1}) for {self.n_modes} modes")
        object.__setattr__(self, "couplings", pairs)
        if self.n_params < 1:
            raise ValidationError("topology has no free parameters")

    @property
    def stage_params(self):
        return self.n_modes + 2 * len(self.couplings) + (1 if self.equal_damping else self.n_modes)

    @property
    def lo_params(self):
        return 2 * self.n_modes - 1 if self.with_lo else 0

    @property
    def n_params(self):
        return self.n_stages * self.stage_params + self.lo_params

    def decode(self, x):
        """Parameter vector -> ``(ImeChain, LocalOscillator or None)``."""
        x = np.asarray(x, dtype=float)
        if x.size != self.n_params:
            raise ValidationError(f"expected {self.n_params} parameters, got {x.size}")
        n, k = self.n_modes, self.stage_params
        stages = []
        for s in range(self.n_stages):
            p = x[s * k:(s + 1) * k]
            c = p[n:n + 2 * len(self.couplings)].reshape(-1, 2)
            gam = np.abs(p[n + 2 * len(self.couplings):]) + 1e-9
            stages.append(ImeStage.from_parameters(p[:n], gam, dict(zip(self.couplings, map(tuple, c)))))
        lo = LocalOscillator(lo_from_angles(x[self.n_stages * k:], n)) if self.with_lo else None
        return ImeChain(tuple(stages), n), lo

    def encode(self, chain, lo=None):
        """Inverse of :meth:`decode` for chains built with this topology."""
        out = []
        for st in chain.stages:
            g = st.g_ime
            out.extend(np.diag(g).real)
            for m, n in self.couplings:
                out.extend([abs(g[m, n]), -np.angle(g[m, n])])
            out.extend(st.gamma_ime[:1] if self.equal_damping else st.gamma_ime)
        if self.with_lo:
            out.extend(lo_to_angles(lo.q))
        return np.array(out, dtype=float)

    def sample(self, rng, count):
        """Uniform random starts over the parameter boxes."""
        n, k = self.n_modes, self.stage_params
        x = np.empty((count, self.n_params))
        for s in range(self.n_stages):
            o = s * k
            x[:, o:o + n] = rng.uniform(*DETUNING_BOX, size=(count, n))
            nc = len(self.couplings)
            x[:, o + n:o + n + 2 * nc:2] = rng.uniform(0.0, COUPLING_MAX, size=(count, nc))
            x[:, o + n + 1:o + n + 2 * nc:2] = rng.uniform(0.0, 2 * np.pi, size=(count, nc))
            x[:, o + n + 2 * nc:o + k] = DAMPING_MAX * (1.0 - rng.uniform(size=(count, k - n - 2 * nc)))
        x[:, self.n_stages * k:] = rng.uniform(0.0, 2 * np.pi, size=(count, self.lo_params))
        return x


class ImeObjective:
    """Fast objective over ``n_points`` band frequencies ``w >= 0``.

    Objectives:
        ``db``: band mean of ``(detected_db - target_db)^2``.
        ``overlap``: negative band mean of the generalized-LO overlap.
        ``stationary``: band mean of ``|S_IME(w) U_sq(w) - S_IME(0) U_sq(0)|_F^2 / N``
            over all squeezed columns jointly (no LO).
    """

    def __init__(self, system, topology, band, target_index=None, objective="db", n_points=DEFAULT_BAND_POINTS):
        if objective not in OBJECTIVES:
            raise ValidationError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
        if topology.n_modes != system.n_modes:
            raise ValidationError("topology and system have different mode counts")
        if objective == "stationary" and topology.with_lo:
            raise ValidationError("the stationary objective takes no LO; use with_lo=False")
        if objective != "stationary" and not topology.with_lo:
            raise ValidationError(f"objective {objective!r} needs LO parameters")
        band = _check_band(band)
        n = system.n_modes
        self.system, self.topology, self.band, self.objective = system, topology, band, objective
        self.target_index = n + 1 if target_index is None else int(target_index)
        if not 1 <= self.target_index <= 2 * n:
            raise ValidationError(f"target_index must be in [1, {2 * n}]")
        grid = FrequencyGrid.uniform(band[1], 2 * n_points - 1)
        transfer = transfer_function(system, grid)
        decomp = continue_decomposition(transfer)
        sel = np.flatnonzero((grid.omegas >= band[0] - 1e-12) & (grid.omegas >= 0))
        self.omegas = grid.omegas[sel]
        self.sigma = spectral_covariance(transfer).sigmas[sel]
        self.target_db = target_db(decomp, self.target_index)[sel]
        u = decomp.u[sel]
        self.columns = u[:, :, n:] if objective == "stationary" else u[:, :, self.target_index - 1]
        # amplitude-basis copies for the fast generalized-LO path
        L = amplitude_basis(n)
        self._sigma_amp = L.conj().T @ self.sigma @ L
        self._col_amp = self.columns @ L.conj() if self.columns.ndim == 2 else None
        self._omegas_pm = np.concatenate([self.omegas, -self.omegas])
        self.fixed_stages = ()
        self.calls = 0

    def _raw_stages(self, x):
        topo, n = self.topology, self.topology.n_modes
        k, nc = topo.stage_params, len(topo.couplings)
        out = list(self.fixed_stages)
        for s in range(topo.n_stages):
            p = x[s * k:(s + 1) * k]
            g = np.diag(p[:n]).astype(complex)
            for (m, l), theta, phi in zip(topo.couplings, p[n:n + 2 * nc:2], p[n + 1:n + 2 * nc:2]):
                g[m, l] = theta * np.exp(-1j * phi)
                g[l, m] = theta * np.exp(1j * phi)
            gam = np.abs(p[n + 2 * nc:]) + 1e-9
            out.append((g, np.broadcast_to(gam, (n,))))
        return out

    def generalized_lo_amp(self, x):
        """Generalized LO in the amplitude basis, ``L^dagger q~(w)``, on the band frequencies."""
        n = self.topology.n_modes
        q = lo_from_angles(x[self.topology.n_stages * self.topology.stage_params:], n)
        c = (q[:n] + 1j * q[n:]) / np.sqrt(2)
        v = _adjoint_chain_apply(self._raw_stages(x), c, self._omegas_pm)
        w = self.omegas.size
        return np.concatenate([v[:w], v[w:].conj()], axis=1)

    def ime_matrices(self, chain):
        return chain_quadrature_transfer(chain, self.omegas)

    def __call__(self, x):
        self.calls += 1
        x = np.asarray(x, dtype=float)
        if self.objective == "stationary":
            chain, _ = self.topology.decode(x)
            W = self.ime_matrices(chain) @ self.columns
            return float(np.mean(np.sum(np.abs(W - W[0]) ** 2, axis=(1, 2))) / self.topology.n_modes)
        qt = self.generalized_lo_amp(x)
        if self.objective == "overlap":
            return -float(np.mean(np.abs(np.einsum("wi,wi->w", qt.conj(), self._col_amp)) ** 2))
        val = np.einsum("wi,wij,wj->w", qt.conj(), self._sigma_amp, qt).real
        return float(np.mean((to_db(np.maximum(val, 1e-300)) - self.target_db) ** 2))


def _adjoint_chain_apply(stages, c, omegas):
    """Rows ``U_IME(w)^dagger c`` for a chain given as ``[(g, gamma), ...]`` (first stage first).

    Each stage is diagonalized once, ``Gamma + i g = W diag(lam) W^-1``, so the
    per-frequency cost is a few ``N``-vector products.
    """
    v = np.broadcast_to(np.asarray(c, dtype=complex), (omegas.size, len(c)))
    for g, gamma in reversed(stages):
        if np.all(gamma == gamma[0]):
            lam, V = np.linalg.eigh(g)
            r = np.conj(1.0 / (1j * omegas[:, None] + gamma[0] + 1j * lam))
            v = 2 * gamma[0] * (((v @ V.conj()) * r) @ V.T) - v
        else:
            root = np.sqrt(2 * gamma)
            lam, W = np.linalg.eig(np.diag(gamma) + 1j * g)
            Winv = np.linalg.inv(W)
            r = np.conj(1.0 / (1j * omegas[:, None] + lam))
            v = root * ((((v * root) @ W.conj()) * r) @ Winv.conj()) - v
    return v


@dataclass(frozen=True)
class ImeOptimum:
    """Optimization outcome; unpacks as ``chain, lo, report``."""

    chain: ImeChain
    lo: LocalOscillator
    report: MatchReport
    objective: float
    converged: bool
    params: np.ndarray = field(repr=False)
    topology: ImeTopology = None
    seed: int = None
    objective_name: str = "db"
    n_evaluations: int = 0

    def __iter__(self):
        return iter((self.chain, self.lo, self.report))


def optimize_ime(system, target_index=None, topology=None, band=DEFAULT_BAND, objective="db", seed=0,
                 n_starts=DEFAULT_N_STARTS, n_points=DEFAULT_BAND_POINTS, report_grid=None,
                 tol_db=DEFAULT_TOL_DB, starts=None, n_polish=4, screen_fev=3000,
                 max_restarts=_simplex.DEFAULT_MAX_RESTARTS):
    """Optimize IME parameters and LO angles for generalized mode-matching.

    Args:
        system: Source to be measured (must be below threshold).
        target_index: 1-based column of ``U`` to match (default ``N + 1``,
            the most squeezed supermode).
        topology: Parameter layout (default: one stage, all couplings, equal damping).
        band: ``(low, high)`` interval of ``|w|`` for the objective and the report.
        objective: ``"db"``, ``"overlap"`` or ``"stationary"``.
        seed: Seed for the uniform multi-start sampling.
        n_starts: Number of random starts (all screened, best ``n_polish`` polished).
        n_points: Frequency samples of ``[0, band high]`` used by the objective.
        report_grid: Grid for the returned MatchReport (default: module grid).
        starts: Explicit start points overriding the random sampling.

    Returns:
        ImeOptimum with ``converged`` False when restarts were exhausted.
    """
    from .dynamics import DEFAULT_GRID_MAX, DEFAULT_GRID_POINTS

    topology = topology or ImeTopology(system.n_modes, with_lo=objective != "stationary")
    fun = ImeObjective(system, topology, band, target_index, objective, n_points)
    if starts is None:
        starts = topology.sample(np.random.default_rng(seed), n_starts)
    res = _simplex.multistart(fun, starts, screen_fev=screen_fev, n_polish=n_polish, max_restarts=max_restarts)
    chain, lo = topology.decode(res.x)
    grid = report_grid or FrequencyGrid.uniform(max(DEFAULT_GRID_MAX, fun.band[1]), DEFAULT_GRID_POINTS)
    report_lo = lo if lo is not None else LocalOscillator.normalized(np.eye(2 * system.n_modes)[system.n_modes])
    report = match_report(system, chain, report_lo, grid, fun.target_index, band, tol_db)
    return ImeOptimum(chain, lo, report, res.fun, res.converged, res.x, topology, seed, objective, res.nfev)


def polish_lo(system, chain, lo, band, target_index=None, n_points=DEFAULT_BAND_POINTS):
    """Re-optimize only the LO angles for a fixed chain (db objective); returns ``(lo, objective)``."""
    topo = ImeTopology(system.n_modes, n_stages=0)
    fun = ImeObjective(system, topo, band, target_index, "db", n_points)
    fun.fixed_stages = tuple((st.g_ime, st.gamma_ime) for st in chain.stages)
    r = _simplex.restarted_nelder_mead(fun, lo_to_angles(lo.q))
    return LocalOscillator(lo_from_angles(r.x, system.n_modes)), r.fun


def score(system, chain, lo, band, target_index=None, objective="db", n_points=DEFAULT_BAND_POINTS):
    """Objective value of given parameters on the same sampling the optimizer uses."""
    equal = all(np.all(st.gamma_ime == st.gamma_ime[0]) for st in chain.stages)
    topo = ImeTopology(system.n_modes, n_stages=len(chain), couplings=_chain_couplings(chain),
                       equal_damping=equal, with_lo=lo is not None)
    fun = ImeObjective(system, topo, band, target_index, objective, n_points)
    return fun(topo.encode(chain, lo))


def _chain_couplings(chain):
    n = chain.n_modes
    pairs = set()
    for st in chain.stages:
        for m, k in combinations(range(n), 2):
            if st.g_ime[m, k] != 0:
                pairs.add((m, k))
    return tuple(sorted(pairs)) if chain.stages else ()
