"""Spectral covariance matrices and homodyne noise spectra."""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import FrequencyGrid, TransferGrid, _frozen
from .errors import ValidationError

#: Vacuum (shot-noise) level of the spectral covariance, ``1 / (2 sqrt(2 pi))``.
VACUUM_LEVEL = 1.0 / (2.0 * np.sqrt(2.0 * np.pi))

REALITY_TOL = 1e-12
LO_NORM_TOL = 1e-12
DEFAULT_SWEEP_RESOLUTION_DEG = 0.5
MAX_SWEEP_SIZE = 2_000_000


def to_db(values):
    """Noise power relative to vacuum, in dB (vacuum is 0 dB)."""
    return 10.0 * np.log10(np.asarray(values, dtype=float) / VACUUM_LEVEL)


@dataclass(frozen=True)
class SpectralCovariance:
    grid: FrequencyGrid
    sigmas: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=complex)
        if s.ndim != 3 or s.shape[0] != len(self.grid) or s.shape[1] != s.shape[2]:
            raise ValidationError(f"covariance stack has shape {s.shape}, incompatible with grid")
        object.__setattr__(self, "sigmas", _frozen(s))

    @property
    def n_modes(self):
        return self.sigmas.shape[1] // 2

    @classmethod
    def vacuum(cls, grid, n_modes):
        eye = np.broadcast_to(np.eye(2 * n_modes, dtype=complex), (len(grid), 2 * n_modes, 2 * n_modes))
        return cls(grid, VACUUM_LEVEL * eye)

    def hermiticity_error(self):
        s = self.sigmas
        return float(np.abs(s - s.conj().transpose(0, 2, 1)).max())

    def conjugate_symmetry_error(self):
        idx = self.grid.mirror_index()
        return float(np.abs(self.sigmas[idx] - self.sigmas.conj()).max())

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.sigmas).min())


@dataclass(frozen=True)
class LocalOscillator:
    """Real unit vector ``q = (Re alpha | Im alpha)`` of homodyne LO weights."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q)
        if np.iscomplexobj(q):
            if np.abs(q.imag).max() > 0:
                raise ValidationError("local oscillator quadrature weights must be real")
            q = q.real
        q = np.asarray(q, dtype=float)
        if q.ndim != 1 or q.size % 2:
            raise ValidationError("local oscillator must be a real vector of even length 2N")
        if abs(np.linalg.norm(q) - 1.0) > LO_NORM_TOL:
            raise ValidationError(f"local oscillator must have unit norm, got {np.linalg.norm(q):.15g}")
        object.__setattr__(self, "q", _frozen(q))

    @property
    def n_modes(self):
        return self.q.size // 2

    @classmethod
    def from_angles(cls, angles, n_modes=None):
        return cls(lo_from_angles(angles, n_modes))

    @classmethod
    def normalized(cls, q):
        q = np.asarray(q, dtype=float)
        return cls(q / np.linalg.norm(q))


def lo_from_angles(angles, n_modes=None):
    """Unit LO vector from ``2N - 1`` angles ``(phi_1, chi_1, phi_2, ..., chi_{N-1}, phi_N)``.

    ``phi_m`` is the quadrature angle of mode ``m``; the ``chi`` are hyperspherical
    angles distributing the amplitude among modes.  For two modes this is
    ``x = (cos phi_1 cos chi_1, cos phi_2 sin chi_1)``,
    ``y = (sin phi_1 cos chi_1, sin phi_2 sin chi_1)``.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if n_modes is None:
        n_modes = (angles.size + 1) // 2
    if angles.size != 2 * n_modes - 1:
        raise ValidationError(f"{n_modes}-mode LO needs {2 * n_modes - 1} angles, got {angles.size}")
    phis = angles[0::2]
    chis = angles[1::2]
    r = np.empty(n_modes)
    s = 1.0
    for m in range(n_modes - 1):
        r[m] = s * np.cos(chis[m])
        s *= np.sin(chis[m])
    r[-1] = s
    return np.concatenate([r * np.cos(phis), r * np.sin(phis)])


def lo_to_angles(q):
    """Inverse of :func:`lo_from_angles` (one representative of the angle set)."""
    q = np.asarray(q, dtype=float)
    n = q.size // 2
    amp = np.hypot(q[:n], q[n:])
    phis = np.arctan2(q[n:], q[:n])
    chis = np.empty(n - 1)
    for m in range(n - 1):
        tail = np.linalg.norm(amp[m + 1:])
        chis[m] = np.arctan2(tail, amp[m])
    out = np.empty(2 * n - 1)
    out[0::2] = phis
    out[1::2] = chis
    return out


@dataclass(frozen=True)
class NoiseSpectrum:
    grid: FrequencyGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.grid),):
            raise ValidationError("noise spectrum length does not match grid")
        if np.any(v < 0):
            raise ValidationError("noise spectral power must be non-negative")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def db_values(self):
        return to_db(self.values)


def spectral_covariance(transfer):
    """``sigma(w) = S(w) S(-w)^T / (2 sqrt(2 pi))`` for vacuum input."""
    if not isinstance(transfer, TransferGrid):
        raise ValidationError("spectral_covariance expects a TransferGrid")
    if not transfer.grid.symmetric:
        raise ValidationError("spectral covariance needs a symmetric grid (uses S(-omega))")
    S = transfer.matrices
    S_neg = S[transfer.grid.mirror_index()]
    return SpectralCovariance(transfer.grid, VACUUM_LEVEL * (S @ S_neg.transpose(0, 2, 1)))


def quadratic_form(sigmas, vectors):
    """``v(w)^dagger sigma(w) v(w)`` for a constant or per-frequency vector stack."""
    v = np.asarray(vectors)
    if v.ndim == 1:
        return np.einsum("i,wij,j->w", v.conj(), sigmas, v)
    return np.einsum("wi,wij,wj->w", v.conj(), sigmas, v)


def noise_spectral_power(sigma, lo):
    """Homodyne noise spectrum ``Q^T sigma(w) Q`` for a real LO.

    The imaginary residue must be below ``REALITY_TOL``; anything larger means
    the covariance is not Hermitian and raises instead of being dropped.
    """
    q = lo.q if isinstance(lo, LocalOscillator) else LocalOscillator(lo).q
    if q.size != sigma.sigmas.shape[1]:
        raise ValidationError(f"LO has dimension {q.size}, covariance has {sigma.sigmas.shape[1]}")
    vals = quadratic_form(sigma.sigmas, q)
    residue = np.abs(vals.imag)
    if np.any(residue > REALITY_TOL * np.maximum(1.0, np.abs(vals.real))):
        k = int(np.argmax(residue))
        raise ValidationError(
            f"noise spectral power has imaginary residue {residue[k]:.3g} at omega={sigma.grid.omegas[k]:.6g}"
        )
    return NoiseSpectrum(sigma.grid, vals.real)


@dataclass(frozen=True)
class HdSweep:
    spectra: tuple
    envelope: NoiseSpectrum
    argmin: np.ndarray = field(repr=False)


def hd_sweep(sigma, los):
    """Noise spectra for a finite LO family plus their pointwise minimum."""
    los = list(los)
    if not los:
        raise ValidationError("LO family is empty")
    spectra = tuple(noise_spectral_power(sigma, lo) for lo in los)
    stack = np.stack([s.values for s in spectra])
    envelope = NoiseSpectrum(sigma.grid, stack.min(axis=0))
    return HdSweep(spectra, envelope, stack.argmin(axis=0))


def real_lo_bound(sigma):
    """Exact minimum of ``Q^T sigma Q`` over real unit ``Q``: lowest eigenvalue of ``Re sigma``.

    The antisymmetric imaginary part drops out of any real quadratic form, so
    this is the best any constant homodyne LO can do at each frequency.
    """
    return NoiseSpectrum(sigma.grid, np.linalg.eigvalsh(sigma.sigmas.real)[:, 0])


def optimal_real_lo(sigma, omega):
    """Real LO minimizing the detected noise at the grid point nearest ``omega``."""
    k = int(np.argmin(np.abs(sigma.grid.omegas - omega)))
    _, vecs = np.linalg.eigh(sigma.sigmas[k].real)
    q = vecs[:, 0]
    if q[np.argmax(np.abs(q))] < 0:
        q = -q
    return LocalOscillator.normalized(q)


def sweep_angles(n_modes, resolution_deg=DEFAULT_SWEEP_RESOLUTION_DEG, max_size=MAX_SWEEP_SIZE):
    """Uniform angle grid (endpoints included) as a ``(count, 2N - 1)`` array.

    The first quadrature angle spans ``[0, pi]`` (``Q`` and ``-Q`` are
    equivalent), the other quadrature angles ``[0, 2 pi]`` and the amplitude
    angles ``[0, pi / 2]``.
    """
    step = np.deg2rad(resolution_deg)
    if not step > 0:
        raise ValidationError("sweep resolution must be positive")

    def axis(hi):
        return np.linspace(0.0, hi, int(round(hi / step)) + 1)

    axes = [axis(np.pi)]
    for _ in range(n_modes - 1):
        axes += [axis(np.pi / 2), axis(2 * np.pi)]
    size = int(np.prod([a.size for a in axes]))
    if size > max_size:
        raise ValidationError(
            f"sweep family would contain {size} LOs (limit {max_size}); use a coarser resolution"
        )
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def lo_matrix(angles):
    """Row-wise :func:`lo_from_angles` for an ``(count, 2N - 1)`` angle array."""
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    n_modes = (angles.shape[1] + 1) // 2
    phis = angles[:, 0::2]
    chis = angles[:, 1::2]
    r = np.empty((angles.shape[0], n_modes))
    s = np.ones(angles.shape[0])
    for m in range(n_modes - 1):
        r[:, m] = s * np.cos(chis[:, m])
        s = s * np.sin(chis[:, m])
    r[:, -1] = s
    return np.concatenate([r * np.cos(phis), r * np.sin(phis)], axis=1)


def sweep_family(n_modes, resolution_deg=DEFAULT_SWEEP_RESOLUTION_DEG):
    """LocalOscillator objects on the uniform sweep grid (see :func:`sweep_angles`)."""
    return [LocalOscillator(q) for q in lo_matrix(sweep_angles(n_modes, resolution_deg))]


@dataclass(frozen=True)
class SweepEnvelope:
    """Pointwise minimum over an LO family and the angles attaining it."""

    envelope: NoiseSpectrum
    argmin_angles: np.ndarray = field(repr=False)
    family_size: int


def sweep_envelope(sigma, resolution_deg=DEFAULT_SWEEP_RESOLUTION_DEG, chunk=4096):
    """Envelope of the dense real-LO sweep without storing the individual spectra.

    Real LOs only see ``Re sigma`` (the imaginary part is antisymmetric).
    """
    angles = sweep_angles(sigma.n_modes, resolution_deg)
    re = sigma.sigmas.real
    best = np.full(len(sigma.grid), np.inf)
    arg = np.zeros(len(sigma.grid), dtype=int)
    for start in range(0, angles.shape[0], chunk):
        q = lo_matrix(angles[start:start + chunk])
        vals = np.einsum("li,wij,lj->wl", q, re, q, optimize=True)
        k = vals.argmin(axis=1)
        v = vals[np.arange(vals.shape[0]), k]
        better = v < best
        best[better] = v[better]
        arg[better] = k[better] + start
    return SweepEnvelope(NoiseSpectrum(sigma.grid, best), angles[arg], angles.shape[0])
