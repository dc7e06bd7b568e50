"""Compilation of frequency-dependent unitaries into two-mode meshes and cavity-chain phase shifters.

A two-level factor on modes ``(m, n)`` has the 2x2 block
``[[e^{i phi} a, -b], [e^{i phi} b^*, a^*]]`` with ``|a|^2 + |b|^2 = 1`` and
determinant ``e^{i phi}``.  A netlist reconstructs
``U(w) = diag(e^{i Phi(w)}) F_1(w) ... F_K(w)``.

Phase convention of the single-cavity shifter: a cavity of damping ``gamma``
and detuning ``Delta`` contributes ``2 atan2(w + Delta, gamma)`` in the
Fourier convention of the input-output literature.  In the transfer-function
convention used by :mod:`squeezing_ime.dynamics` the same cavity multiplies
the mode by ``(gamma - i(w + Delta)) / (gamma + i(w + Delta))``, i.e. the
phase has the opposite sign; ``CavityChain.sign`` records which one a fit uses.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import _simplex
from .dynamics import FrequencyGrid, _frozen
from .errors import ValidationError

UNITARY_TOL = 1e-10
NULL_TOL = 1e-14
ORDERINGS = ("triangular", "rectangular")
TRANSFER_SIGN = -1
INPUT_OUTPUT_SIGN = 1
DEFAULT_ORDERING = "rectangular"
DEFAULT_N_CAVITIES = 2
DEFAULT_PHASE_TOL = 1e-2
LOG_GAMMA_LIMIT = 20.0


def _block(a, b, phi):
    e = np.exp(1j * np.asarray(phi))
    a, b = np.asarray(a), np.asarray(b)
    top = np.stack([e * a, -b], axis=-1)
    bot = np.stack([e * b.conj(), a.conj()], axis=-1)
    return np.stack([top, bot], axis=-2)


def _params_from_block(blk):
    """``(a, b, phi)`` of a U(2) block in the two-level form."""
    b = -blk[..., 0, 1]
    a = blk[..., 1, 1].conj()
    phi = np.angle(np.linalg.det(blk))
    return a, b, phi


def embed(block, m, n, size):
    """Embed 2x2 block(s) acting on modes ``(m, n)`` into identity matrices."""
    block = np.asarray(block)
    out = np.broadcast_to(np.eye(size, dtype=complex), block.shape[:-2] + (size, size)).copy()
    out[..., m, m] = block[..., 0, 0]
    out[..., m, n] = block[..., 0, 1]
    out[..., n, m] = block[..., 1, 0]
    out[..., n, n] = block[..., 1, 1]
    return out


@dataclass(frozen=True)
class TwoLevelFactor:
    """Frequency-dependent two-level unitary on 0-based modes ``m < n``."""

    m: int
    n: int
    grid: FrequencyGrid
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0 <= self.m < self.n:
            raise ValidationError(f"two-level factor needs 0 <= m < n, got ({self.m}, {self.n})")
        a = np.atleast_1d(np.asarray(self.a, dtype=complex))
        b = np.atleast_1d(np.asarray(self.b, dtype=complex))
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if not (a.shape == b.shape == phi.shape == (len(self.grid),)):
            raise ValidationError("factor samples must match the grid length")
        err = np.abs(np.abs(a) ** 2 + np.abs(b) ** 2 - 1.0).max()
        if err > 1e-12:
            raise ValidationError(f"|a|^2 + |b|^2 deviates from 1 by {err:.3g}")
        for name, val in (("a", a), ("b", b), ("phi", phi)):
            object.__setattr__(self, name, _frozen(val))

    def block(self):
        return _block(self.a, self.b, self.phi)

    def matrices(self, size):
        return embed(self.block(), self.m, self.n, size)


def null_factor(u, target, pivot, partner=None):
    """Two-level SU(2) factor that nulls one entry of a unitary matrix.

    Args:
        u: ``N x N`` unitary at one frequency.
        target: 0-based ``(row, col)`` of the entry to null.
        pivot: ``"same_column"`` (left-multiply, mixing ``row`` with the row
            above, or below for the first row) or ``"same_row"``
            (right-multiply by the adjoint, mixing ``col`` with the next
            column, or previous for the last column).
        partner: Optional 0-based row (column pivot) or column (row pivot)
            to mix with instead of the adjacent one.

    Returns:
        ``((m, n), block, updated)`` with the 2x2 block ``T`` and
        ``T u`` (column pivot) or ``u T^dagger`` (row pivot).  When both
        entries are below ``1e-14`` the identity block is returned.
    """
    u = np.asarray(u, dtype=complex)
    size = u.shape[0]
    if u.shape != (size, size) or np.abs(u.conj().T @ u - np.eye(size)).max() > UNITARY_TOL:
        raise ValidationError("null_factor expects a unitary matrix")
    r, c = target
    if pivot == "same_column":
        m, n = (r - 1, r) if r > 0 else (0, 1)
    elif pivot == "same_row":
        m, n = (c, c + 1) if c < size - 1 else (c - 1, c)
    else:
        raise ValidationError(f"pivot must be 'same_column' or 'same_row', got {pivot!r}")
    if partner is not None:
        own = r if pivot == "same_column" else c
        if partner == own or not 0 <= partner < size:
            raise ValidationError(f"invalid partner index {partner}")
        m, n = min(own, partner), max(own, partner)
    um, un = (u[m, c], u[n, c]) if pivot == "same_column" else (u[r, m], u[r, n])
    nu = np.hypot(abs(um), abs(un))
    if nu < NULL_TOL:
        blk = np.eye(2, dtype=complex)
    else:
        lower = (r == n) if pivot == "same_column" else (c == n)
        if pivot == "same_column":
            a, b = (um.conjugate() / nu, -un.conjugate() / nu) if lower else (un / nu, um / nu)
        else:
            a, b = (um / nu, -un / nu) if lower else (un.conjugate() / nu, um.conjugate() / nu)
        blk = _block(a, b, 0.0)
    T = embed(blk, m, n, size)
    updated = T @ u if pivot == "same_column" else u @ T.conj().T
    return (m, n), blk, updated


def nulling_sequence(n_modes, ordering):
    """Deterministic list of ``(target_row, target_col, pivot)`` (0-based).

    Triangular: column by column from the bottom-left, going up, each entry
    nulled against the row above.  Rectangular: alternating diagonals of
    column-pivot and row-pivot nullings.
    """
    seq = []
    if ordering == "triangular":
        for c in range(n_modes - 1):
            for r in range(n_modes - 1, c, -1):
                seq.append((r, c, "same_column"))
    elif ordering == "rectangular":
        for i in range(n_modes - 1):
            for j in range(i + 1):
                if i % 2 == 0:
                    seq.append((n_modes - 1 - j, i - j, "same_row"))
                else:
                    seq.append((n_modes - 1 - i + j, j, "same_column"))
    else:
        raise ValidationError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
    return seq


def _decompose_point(u, seq):
    """Factors (pairs, blocks) with ``u = Phi F_1 ... F_K`` at a single frequency."""
    size = u.shape[0]
    left, right = [], []
    w = u
    for r, c, pivot in seq:
        (m, n), blk, w = null_factor(w, (r, c), pivot)
        (left if pivot == "same_column" else right).append((m, n, blk))
    # T_L..T_1 u T'_1^dag..T'_R^dag = D  =>  u = T_1^dag..T_L^dag D T'_R..T'_1
    d = np.diag(w).copy()
    d /= np.abs(d)
    factors = []
    for m, n, blk in left:
        # T^dag D = D (D^-1 T^dag D)
        bd = blk.conj().T
        conj = np.array([[bd[0, 0], bd[0, 1] * d[n] / d[m]], [bd[1, 0] * d[m] / d[n], bd[1, 1]]])
        factors.append((m, n, conj))
    for m, n, blk in reversed(right):
        factors.append((m, n, blk))
    return factors, d


def _anchored_unwrap(phase, anchor):
    out = np.unwrap(phase)
    return out - 2 * np.pi * np.round((out[anchor] - np.angle(np.exp(1j * out[anchor]))) / (2 * np.pi))


def _anchor_index(grid):
    return int(np.argmin(np.abs(grid.omegas)))


@dataclass(frozen=True)
class MeshNetlist:
    """Ordered two-level factors plus a residual per-mode phase layer ``Phi(w)``."""

    ordering: str
    n_modes: int
    grid: FrequencyGrid
    factors: tuple
    residual_phases: np.ndarray = field(repr=False)
    approximate: bool = False
    phase_fits: tuple = ()

    def __post_init__(self):
        if self.ordering not in ORDERINGS:
            raise ValidationError(f"ordering must be one of {ORDERINGS}")
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "residual_phases", _frozen(np.asarray(self.residual_phases, dtype=float)))

    def reconstruct(self):
        n = self.n_modes
        out = np.broadcast_to(np.eye(n, dtype=complex), (len(self.grid), n, n)).copy()
        for f in self.factors:
            out = out @ f.matrices(n)
        return np.exp(1j * self.residual_phases)[:, :, None] * out

    def layers(self):
        """ASAP layer index (0-based) of every factor."""
        last = [-1] * self.n_modes
        out = []
        for f in self.factors:
            k = max(last[f.m], last[f.n]) + 1
            last[f.m] = last[f.n] = k
            out.append(k)
        return out

    def mode_path_lengths(self):
        """Per-mode span of layers between the first and last factor touching the mode."""
        lay = self.layers()
        spans = []
        for mode in range(self.n_modes):
            ks = [k for f, k in zip(self.factors, lay) if mode in (f.m, f.n)]
            spans.append(max(ks) - min(ks) + 1 if ks else 0)
        return spans

    def to_dict(self):
        """JSON-ready document; the grid uses 12 significant digits, factor samples full precision."""

        def grid_fmt(x):
            return [float(f"{v:.12g}") for v in np.asarray(x, dtype=float)]

        def fmt(x):
            return [float(v) for v in np.asarray(x, dtype=float)]

        return {
            "ordering": self.ordering,
            "n_modes": self.n_modes,
            "omega": grid_fmt(self.grid.omegas),
            "factors": [
                {
                    "modes": [f.m + 1, f.n + 1],
                    "a_re": fmt(f.a.real), "a_im": fmt(f.a.imag),
                    "b_re": fmt(f.b.real), "b_im": fmt(f.b.imag),
                    "phi": fmt(f.phi),
                }
                for f in self.factors
            ],
            "residual_phases": [fmt(p) for p in self.residual_phases.T],
            "approximate": self.approximate,
            "phase_fits": [c.to_dict() for c in self.phase_fits],
        }

    def to_text(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data):
        """Inverse of :meth:`to_dict` (fitted cavity chains are not restored)."""
        try:
            grid = FrequencyGrid(np.asarray(data["omega"], dtype=float))
            factors = tuple(
                TwoLevelFactor(
                    f["modes"][0] - 1, f["modes"][1] - 1, grid,
                    np.asarray(f["a_re"]) + 1j * np.asarray(f["a_im"]),
                    np.asarray(f["b_re"]) + 1j * np.asarray(f["b_im"]),
                    np.asarray(f["phi"]),
                )
                for f in data["factors"]
            )
            resid = np.asarray(data["residual_phases"], dtype=float).T.reshape(len(grid), int(data["n_modes"]))
            return cls(data["ordering"], int(data["n_modes"]), grid, factors, resid, bool(data.get("approximate")))
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"malformed netlist document: {exc!r}") from exc


def _check_unitary_grid(u_grid, grid):
    u = np.asarray(u_grid, dtype=complex)
    if u.ndim != 3 or u.shape[1] != u.shape[2] or u.shape[0] != len(grid):
        raise ValidationError(f"expected a per-frequency N x N stack on the grid, got shape {u.shape}")
    eye = np.eye(u.shape[1])
    err = np.abs(u.conj().transpose(0, 2, 1) @ u - eye).max(axis=(1, 2))
    if np.any(err > UNITARY_TOL):
        k = int(np.argmax(err))
        raise ValidationError(f"input is not unitary at omega={grid.omegas[k]:.6g} (error {err[k]:.3g})")
    return u


def two_mode_decompose(u_grid, grid, ordering=DEFAULT_ORDERING):
    """Decompose ``U(w)`` into at most ``N(N-1)/2`` two-level factors with a fixed nulling order.

    Args:
        u_grid: ``(len(grid), N, N)`` unitary samples.
        grid: Frequency grid of the samples.
        ordering: ``"triangular"`` or ``"rectangular"``.

    Returns:
        MeshNetlist whose determinant phases and residual phases are unwrapped
        along ``w`` and anchored at the grid point nearest ``w = 0``.
    """
    u = _check_unitary_grid(u_grid, grid)
    n = u.shape[1]
    seq = nulling_sequence(n, ordering)
    blocks, resid, pairs = [], [], None
    for k in range(len(grid)):
        factors, d = _decompose_point(u[k], seq)
        pairs = [(m, nn) for m, nn, _ in factors]
        blocks.append([blk for _, _, blk in factors])
        resid.append(np.angle(d))
    anchor = _anchor_index(grid)
    blocks = np.array(blocks).reshape(len(grid), len(seq), 2, 2)
    out = []
    for j, (m, nn) in enumerate(pairs or []):
        a, b, _ = _params_from_block(blocks[:, j])
        phi = _anchored_unwrap(np.angle(np.linalg.det(blocks[:, j])), anchor)
        out.append(TwoLevelFactor(m, nn, grid, a, b, phi))
    resid = np.array(resid).reshape(len(grid), n)
    resid = np.stack([_anchored_unwrap(resid[:, i], anchor) for i in range(n)], axis=1)
    return MeshNetlist(ordering, n, grid, tuple(out), resid)


@dataclass(frozen=True)
class VerifyReport:
    max_error: float
    factor_count: int
    max_factor_count: int
    determinant_error: float
    norm_error: float
    smoothness_constant: float
    approximate: bool

    def to_dict(self):
        return {k: (float(f"{v:.12g}") if isinstance(v, float) else v) for k, v in self.__dict__.items()}

    @property
    def ok(self):
        return self.max_error < 1e-10 and self.factor_count <= self.max_factor_count and self.determinant_error < 1e-10


def netlist_verify(netlist, u_grid):
    """Recompute the ordered product and every netlist invariant; failures are reported, not raised."""
    u = np.asarray(u_grid, dtype=complex)
    n = netlist.n_modes
    if u.shape != (len(netlist.grid), n, n):
        raise ValidationError("netlist and unitary grid have inconsistent dimensions")
    rec = netlist.reconstruct()
    max_err = float(np.abs(rec - u).max()) if u.size else 0.0
    det_prod = np.exp(1j * netlist.residual_phases.sum(axis=1))
    for f in netlist.factors:
        det_prod = det_prod * np.linalg.det(f.block())
    det_err = float(np.abs(det_prod - np.linalg.det(u)).max()) if u.size else 0.0
    norm_err = max((float(np.abs(np.abs(f.a) ** 2 + np.abs(f.b) ** 2 - 1).max()) for f in netlist.factors),
                   default=0.0)
    smooth = 0.0
    w = netlist.grid.omegas
    if w.size > 1:
        dw = np.diff(w)
        for f in netlist.factors:
            blk = f.block()
            steps = np.linalg.norm(np.diff(blk, axis=0), axis=(1, 2)) / dw
            smooth = max(smooth, float(steps.max()))
    return VerifyReport(max_err, len(netlist.factors), n * (n - 1) // 2, det_err, norm_err, smooth,
                        netlist.approximate)


@dataclass(frozen=True)
class MziStage:
    """``T = diag(e^{i alpha1}, e^{i alpha2}) [[e^{i phi} cos t, -sin t], [e^{i phi} sin t, cos t]]``."""

    m: int
    n: int
    grid: FrequencyGrid
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    alpha1: np.ndarray = field(repr=False)
    alpha2: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("theta", "phi", "alpha1", "alpha2"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float)))

    def mzi_block(self):
        c, s = np.cos(self.theta), np.sin(self.theta)
        e = np.exp(1j * self.phi)
        return np.stack([np.stack([e * c, -s + 0j], -1), np.stack([e * s, c + 0j], -1)], -2)

    def block(self):
        ph = np.stack([np.exp(1j * self.alpha1), np.exp(1j * self.alpha2)], -1)
        return ph[..., :, None] * self.mzi_block()


def _continuous_angle(z, anchor):
    """Phase of ``z`` unwrapped along the grid; undefined where ``|z| < 1e-14`` (filled from neighbours)."""
    ang = np.angle(z)
    ok = np.abs(z) >= NULL_TOL
    if not ok.any():
        return np.zeros(z.shape)
    idx = np.arange(z.size)
    valid = idx[ok]
    nearest = valid[np.clip(np.searchsorted(valid, idx), 0, valid.size - 1)]
    ang = np.where(ok, ang, ang[nearest])
    return _anchored_unwrap(ang, anchor)


def mzi_factorize(factor):
    """Split a two-level factor into external phase shifters and an MZI.

    ``theta = atan2(|b|, |a|)``, ``alpha1 = arg b``, ``alpha2 = -arg a`` and
    ``phi_mzi = phi + arg a - arg b``, all continuous along the grid.
    """
    anchor = _anchor_index(factor.grid)
    arg_a = _continuous_angle(factor.a, anchor)
    arg_b = _continuous_angle(factor.b, anchor)
    theta = np.arctan2(np.abs(factor.b), np.abs(factor.a))
    return MziStage(factor.m, factor.n, factor.grid, theta, factor.phi + arg_a - arg_b, arg_b, -arg_a)


@dataclass(frozen=True)
class MziMesh:
    """``U(w) = diag(e^{i Phi(w)}) prod_k T^MZI_k(w)`` with all external phases collected in ``Phi``."""

    n_modes: int
    grid: FrequencyGrid
    stages: tuple
    phase_layer: np.ndarray = field(repr=False)

    def reconstruct(self):
        n = self.n_modes
        out = np.broadcast_to(np.eye(n, dtype=complex), (len(self.grid), n, n)).copy()
        for st in self.stages:
            out = out @ embed(st.mzi_block(), st.m, st.n, n)
        return np.exp(1j * self.phase_layer)[:, :, None] * out


def mzi_mesh(netlist):
    """Convert a netlist to MZIs, pushing every external phase shifter into the leading layer.

    A diagonal phase ``(b_m, b_n)`` to the right of an MZI on ``(m, n)`` equals
    a common phase ``b_n`` on both modes to its left with the MZI phase
    shifted by ``b_m - b_n``, so phases sweep from the last factor to the first.
    """
    acc = np.zeros((len(netlist.grid), netlist.n_modes))
    stages = []
    for f in reversed(netlist.factors):
        st = mzi_factorize(f)
        bm, bn = acc[:, f.m].copy(), acc[:, f.n].copy()
        acc[:, f.m] = bn + st.alpha1
        acc[:, f.n] = bn + st.alpha2
        zero = np.zeros(len(netlist.grid))
        stages.append(MziStage(f.m, f.n, f.grid, st.theta, st.phi + bm - bn, zero, zero))
    return MziMesh(netlist.n_modes, netlist.grid, tuple(reversed(stages)), netlist.residual_phases + acc)


def cavity_phase(omegas, gamma, delta, sign=INPUT_OUTPUT_SIGN):
    """Phase ``sign * 2 atan2(w + delta, gamma)`` of one single-mode cavity."""
    return sign * 2.0 * np.arctan2(np.asarray(omegas) + delta, gamma)


@dataclass(frozen=True)
class CavityChain:
    """Chain of single-mode cavities approximating a phase profile (plus a constant offset)."""

    stages: tuple
    offset: float
    omegas: np.ndarray = field(repr=False)
    target_phase: np.ndarray = field(repr=False)
    fit_residual: float
    rms_residual: float
    converged: bool = True
    sign: int = INPUT_OUTPUT_SIGN

    def __post_init__(self):
        for g, _ in self.stages:
            if not g > 0:
                raise ValidationError("cavity dampings must be positive")
        object.__setattr__(self, "stages", tuple((float(g), float(d)) for g, d in self.stages))
        object.__setattr__(self, "omegas", _frozen(np.asarray(self.omegas, dtype=float)))
        object.__setattr__(self, "target_phase", _frozen(np.asarray(self.target_phase, dtype=float)))

    def phase(self, omegas=None):
        w = self.omegas if omegas is None else np.asarray(omegas, dtype=float)
        out = np.full(w.shape, self.offset)
        for g, d in self.stages:
            out = out + cavity_phase(w, g, d, self.sign)
        return out

    def to_dict(self):
        return {
            "stages": [{"gamma": float(f"{g:.12g}"), "delta": float(f"{d:.12g}")} for g, d in self.stages],
            "offset": float(f"{self.offset:.12g}"),
            "fit_residual": float(f"{self.fit_residual:.12g}"),
            "converged": self.converged,
            "sign": self.sign,
        }


def _chain_model(p, w, sign):
    k = p.size // 2
    out = np.zeros_like(w)
    for d, lg in zip(p[:k], np.clip(p[k:], -LOG_GAMMA_LIMIT, LOG_GAMMA_LIMIT)):
        out += cavity_phase(w, np.exp(lg), d, sign)
    return out


def _fit(w, target, starts, sign):
    def obj(p):
        r = target - _chain_model(p, w, sign)
        r = r - r.mean()
        return float(np.mean(r * r))

    res = _simplex.multistart(obj, starts, screen_fev=400, n_polish=3, polish_fev=20000)
    return res


def fit_cavity_chain(omegas, target_phase, n_cavities, band=None, sign=INPUT_OUTPUT_SIGN, previous=None):
    """Least-squares fit of ``sum_k sign * 2 atan2(w + Delta_k, gamma_k) + const`` to a phase profile.

    Args:
        omegas: Sample frequencies.
        target_phase: Unwrapped target phase at ``omegas``.
        n_cavities: Number of cavities (>= 1).
        band: Optional ``(low, high)`` interval of ``w`` restricting the fit.
        sign: +1 for the input-output convention, -1 for the
            transfer-function convention of this package.
        previous: Chain with ``n_cavities - 1`` stages used as a warm start
            (nested fits never end above the previous residual).

    Returns:
        CavityChain; a constant target returns the constant-only chain.
    """
    w = np.asarray(omegas, dtype=float)
    target = np.asarray(target_phase, dtype=float)
    if w.shape != target.shape:
        raise ValidationError("omegas and target_phase must have the same shape")
    if n_cavities < 1:
        raise ValidationError("n_cavities must be >= 1")
    if band is not None:
        sel = (w >= band[0]) & (w <= band[1])
        w, target = w[sel], target[sel]
    if w.size == 0:
        raise ValidationError("band contains no samples")
    if np.abs(np.diff(target)).max(initial=0.0) > np.pi:
        raise ValidationError("target phase must be unwrapped (continuous)")
    if np.ptp(target) < 1e-12:
        return CavityChain((), float(target.mean()), w, target, float(np.abs(target - target.mean()).max()),
                           float(np.std(target)), True, sign)
    span = max(np.abs(w).max(), 1.0)
    starts = []
    if previous is not None and len(previous.stages) == n_cavities - 1:
        base_d = [d for _, d in previous.stages]
        base_g = [np.log(g) for g, _ in previous.stages]
        for d in np.linspace(-span, span, 5):
            for lg in np.log([0.3 * span, span, 1e3 * span]):
                starts.append(np.array(base_d + [d] + base_g + [lg]))
    rng = np.random.default_rng(12345 + n_cavities)
    for _ in range(max(16, 4 * n_cavities)):
        starts.append(np.concatenate([rng.uniform(-span, span, n_cavities),
                                      np.log(rng.uniform(0.1, 2.0, n_cavities) * span)]))
    res = _fit(w, target, np.array(starts), sign)
    p = res.x
    k = n_cavities
    model = _chain_model(p, w, sign)
    offset = float(np.mean(target - model))
    resid = target - model - offset
    log_g = np.clip(p[k:], -LOG_GAMMA_LIMIT, LOG_GAMMA_LIMIT)
    stages = tuple((float(np.exp(lg)), float(d)) for d, lg in zip(p[:k], log_g))
    chain = CavityChain(stages, offset, w, target, float(np.abs(resid).max()), float(np.sqrt(np.mean(resid**2))),
                        res.converged, sign)
    if previous is not None and previous.rms_residual < chain.rms_residual:
        # keep the nested guarantee: reuse the previous chain plus a far-detuned, broad cavity
        p_prev = np.array([d for _, d in previous.stages] + [0.0] + [np.log(g) for g, _ in previous.stages]
                          + [np.log(1e6 * span)])
        model = _chain_model(p_prev, w, sign)
        offset = float(np.mean(target - model))
        resid = target - model - offset
        stages = tuple((float(np.exp(lg)), float(d)) for d, lg in zip(p_prev[:k], p_prev[k:]))
        chain = CavityChain(stages, offset, w, target, float(np.abs(resid).max()),
                            float(np.sqrt(np.mean(resid**2))), res.converged, sign)
    return chain


def realize_phases(netlist, n_cavities=DEFAULT_N_CAVITIES, tolerance=DEFAULT_PHASE_TOL, band=None,
                   sign=TRANSFER_SIGN):
    """Fit cavity chains to every phase profile of the MZI form of ``netlist``.

    Profiles are the leading phase layer, each MZI's internal phase and its
    splitting phase ``2 theta``.  The returned netlist carries the fits and is
    marked approximate when any sup-norm residual exceeds ``tolerance``.
    """
    mesh = mzi_mesh(netlist)
    w = netlist.grid.omegas
    profiles = [mesh.phase_layer[:, i] for i in range(netlist.n_modes)]
    for st in mesh.stages:
        profiles += [st.phi, 2 * st.theta]
    fits = []
    for prof in profiles:
        prev = None
        for k in range(1, n_cavities + 1):
            prev = fit_cavity_chain(w, prof, k, band, sign, previous=prev)
            if prev.fit_residual <= tolerance or not prev.stages:
                break
        fits.append(prev)
    approx = any(f.fit_residual > tolerance for f in fits)
    return MeshNetlist(netlist.ordering, netlist.n_modes, netlist.grid, netlist.factors,
                       netlist.residual_phases, approx, tuple(fits))
