"""End-to-end acceptance criteria, each at its stated tolerance and runtime budget.

Every test prints a single ``criterion N: PASS|FAIL`` line (visible even with
captured output) before asserting, so the run log doubles as a scorecard.
"""

import time

import numpy as np
import pytest
from conftest import four_mode_system, random_hermitian, random_stable_system, single_mode_system, two_mode_system
from scipy.linalg import expm

from squeezing_ime.abmd import continue_decomposition
from squeezing_ime.dynamics import FrequencyGrid, transfer_function
from squeezing_ime.ime import (
    ImeChain,
    ImeStage,
    ImeTopology,
    ime_transfer,
    match_report,
    optimize_ime,
    polish_lo,
    score,
    target_db,
)
from squeezing_ime.mesh import (
    TRANSFER_SIGN,
    cavity_phase,
    fit_cavity_chain,
    mzi_factorize,
    mzi_mesh,
    netlist_verify,
    two_mode_decompose,
)
from squeezing_ime.spectra import (
    VACUUM_LEVEL,
    LocalOscillator,
    noise_spectral_power,
    optimal_real_lo,
    quadratic_form,
    real_lo_bound,
    spectral_covariance,
    sweep_envelope,
    to_db,
)

SEED = 7
TOUCH_DB = 0.01
MATCH_DB = 0.5
MIN_OVERLAP = 0.99

SINGLE_BAND = (0.0, 3.0)
SINGLE_REFERENCE_STAGE = ImeStage.from_parameters([-1.51], [2.0])
SINGLE_REFERENCE_LO = LocalOscillator.from_angles([4.96])

TWO_MODE_BAND = (0.0, 5.0)
TWO_MODE_HALF_BAND = (0.0, 2.5)
TWO_MODE_REFERENCE = ImeChain((
    ImeStage.from_parameters([-4.59, -2.86], 0.91, {(0, 1): (3.67, 10.77)}),
    ImeStage.from_parameters([-2.42, -1.62], 1.45, {(0, 1): (1.43, 12.6)}),
))
TWO_MODE_REFERENCE_LO = LocalOscillator.from_angles([1.47, 10.44, 7.69])
SWEEP_RESOLUTION_DEG = 3.0

FOUR_MODE_BAND = (0.0, 5.0)


def record(capsys, number, title, checks, elapsed=None):
    """Print the scorecard line for one criterion and return whether all checks passed."""
    ok = all(passed for passed, _ in checks)
    details = "; ".join(text for _, text in checks)
    timing = "" if elapsed is None else f" [{elapsed:.1f} s]"
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} - {title}{timing} :: {details}")
    return ok


def touch_clusters(excess_db, threshold=TOUCH_DB):
    """Number of contiguous runs where the excess over the bound is below ``threshold``."""
    hit = (excess_db < threshold).astype(int)
    return int(np.sum(np.diff(hit) == 1) + hit[0])


def smooth_unitary_grid(rng, n, grid):
    h0, h1, h2 = (random_hermitian(rng, n) for _ in range(3))
    return np.array([expm(1j * (h0 + w * h1 + 0.1 * w * w * h2)) for w in grid.omegas])


def random_passive_chain(rng, n, n_stages):
    return ImeChain(tuple(ImeStage(random_hermitian(rng, n, 2.0), rng.uniform(0.5, 2.0, n))
                          for _ in range(n_stages)))


@pytest.fixture(scope="module")
def grid():
    return FrequencyGrid.uniform()


class TestAcceptance:
    def test_criterion_1_single_mode_recovery(self, capsys, grid):
        start = time.perf_counter()
        system = single_mode_system()
        transfer = transfer_function(system, grid)
        sigma = spectral_covariance(transfer)
        decomp = continue_decomposition(transfer)
        bound = VACUUM_LEVEL * decomp.d[:, 1] ** 2
        bound_db = to_db(bound)
        pos = grid.omegas >= 0

        # (a) the bound holds for every constant real LO; an LO touches it at most once on w >= 0,
        # and exactly once when it equals the squeezed supermode at some interior frequency
        worst_violation, max_clusters = 0.0, 0
        for theta in np.linspace(0.0, np.pi, 181):
            vals = noise_spectral_power(sigma, LocalOscillator.from_angles([theta])).values
            worst_violation = max(worst_violation, float(np.max((bound - vals) / bound)))
            max_clusters = max(max_clusters, touch_clusters(to_db(vals)[pos] - bound_db[pos]))
        touch_errors = []
        for w_star in np.arange(0.5, 4.51, 0.5):
            lo = optimal_real_lo(sigma, w_star)
            excess = noise_spectral_power(sigma, lo).db_values[pos] - bound_db[pos]
            touch_errors.append((touch_clusters(excess), abs(grid.omegas[pos][np.argmin(excess)] - w_star)))
        exactly_once = all(c == 1 and dw < 0.05 for c, dw in touch_errors)

        # (b) reference single-stage parameters
        rep = match_report(system, ImeChain((SINGLE_REFERENCE_STAGE,)), SINGLE_REFERENCE_LO, grid, band=SINGLE_BAND)
        # (c) optimizer versus reference parameters
        reference_obj = score(system, ImeChain((SINGLE_REFERENCE_STAGE,)), SINGLE_REFERENCE_LO, SINGLE_BAND)
        opt = optimize_ime(system, band=SINGLE_BAND, seed=SEED)
        elapsed = time.perf_counter() - start

        checks = [
            (worst_violation < 1e-12, f"(a) bound violation {worst_violation:.1e}"),
            (max_clusters <= 1, f"(a) max touch clusters per LO {max_clusters}"),
            (exactly_once, f"(a) supermode-matched LOs touch once: {exactly_once}"),
            (rep.max_deviation_db < MATCH_DB, f"(b) max deviation {rep.max_deviation_db:.3f} dB"),
            (rep.min_overlap > MIN_OVERLAP, f"(b) min overlap {rep.min_overlap:.5f}"),
            (opt.objective <= reference_obj + 1e-6,
             f"(c) objective {opt.objective:.3e} vs reference {reference_obj:.3e}"),
            (elapsed < 30.0, "runtime < 30 s"),
        ]
        assert record(capsys, 1, "single-mode recovery", checks, elapsed)

    def test_criterion_2_hidden_squeezing_exposure(self, capsys, grid):
        start = time.perf_counter()
        transfer = transfer_function(two_mode_system(), grid)
        sigma = spectral_covariance(transfer)
        target = target_db(continue_decomposition(transfer), 3)  # d_1^-2 column of a two-mode system
        env = sweep_envelope(sigma, SWEEP_RESOLUTION_DEG)
        excess = env.envelope.db_values - target
        exact_excess = to_db(real_lo_bound(sigma).values) - target
        elapsed = time.perf_counter() - start
        checks = [
            (excess.max() > 0.1, f"envelope excess {excess.max():.3f} dB over {env.family_size} LOs"),
            (exact_excess.max() > 0.1, f"exact real-LO bound excess {exact_excess.max():.3f} dB"),
            (elapsed < 120.0, "runtime < 2 min"),
        ]
        assert record(capsys, 2, "hidden squeezing exposure", checks, elapsed)

    def test_criterion_3_hidden_squeezing_recovery(self, capsys, grid):
        start = time.perf_counter()
        system = two_mode_system()
        one = optimize_ime(system, topology=ImeTopology(2, 1), band=TWO_MODE_HALF_BAND, seed=SEED,
                           report_grid=grid)
        two = optimize_ime(system, topology=ImeTopology(2, 2), band=TWO_MODE_BAND, seed=SEED, report_grid=grid)
        raw = score(system, TWO_MODE_REFERENCE, TWO_MODE_REFERENCE_LO, TWO_MODE_BAND)
        # the reference LO angles are only given to two decimals; re-optimize the LO alone
        _, reference = polish_lo(system, TWO_MODE_REFERENCE, TWO_MODE_REFERENCE_LO, TWO_MODE_BAND)
        elapsed = time.perf_counter() - start
        checks = [
            (one.report.band_fraction == 1.0,
             f"one stage on |w|<=2.5: fraction {one.report.band_fraction:.3f}, "
             f"max {one.report.max_deviation_db:.3f} dB"),
            (two.report.band_fraction >= 0.8, f"two stages on |w|<=5: fraction {two.report.band_fraction:.3f}"),
            (abs(reference - two.objective) <= 1e-3,
             f"reference {reference:.3e} (LO-polished; raw {raw:.3e}) vs optimum {two.objective:.3e}"),
            (elapsed < 300.0, "runtime < 5 min"),
        ]
        assert record(capsys, 3, "hidden squeezing recovery", checks, elapsed)

    def test_criterion_4_four_mode(self, capsys, grid):
        start = time.perf_counter()
        system = four_mode_system()
        decomp = continue_decomposition(transfer_function(system, grid))
        db = 20 * np.log10(decomp.d)
        n_below = int(np.sum(np.all(db < 0, axis=0)))
        n_above = int(np.sum(np.all(db > 0, axis=0)))
        topology = ImeTopology(4, 1, equal_damping=True)
        opt = optimize_ime(system, topology=topology, band=FOUR_MODE_BAND, seed=SEED, report_grid=grid)
        elapsed = time.perf_counter() - start
        checks = [
            (n_below == 4 and n_above == 4, f"{n_below} squeezed / {n_above} anti-squeezed spectra"),
            (topology.stage_params == 17, f"{topology.stage_params} IME parameters"),
            (opt.report.band_fraction >= 0.7,
             f"fraction {opt.report.band_fraction:.3f}, max {opt.report.max_deviation_db:.3f} dB"),
            (elapsed < 600.0, "runtime < 10 min"),
        ]
        assert record(capsys, 4, "four-mode scalability", checks, elapsed)

    def test_criterion_5_abmd_properties(self, capsys, grid):
        rng = np.random.default_rng(5)
        coarse = FrequencyGrid.uniform(5.0, 401)
        cases = [(single_mode_system(), grid), (two_mode_system(), grid), (four_mode_system(), grid)]
        cases += [(random_stable_system(rng), coarse) for _ in range(20)]
        worst = dict(reconstruction=0.0, unitarity=0.0, symplectic=0.0, reciprocity=0.0, conjugate=0.0)
        ratios = []
        for system, g in cases:
            transfer = transfer_function(system, g)
            d = continue_decomposition(transfer)
            fine = continue_decomposition(transfer_function(system, g.refined()))
            worst["reconstruction"] = max(worst["reconstruction"], float(d.reconstruction_error(transfer).max()))
            worst["unitarity"] = max(worst["unitarity"], float(d.unitarity_error().max()))
            worst["symplectic"] = max(worst["symplectic"], float(d.symplectic_error().max()))
            worst["reciprocity"] = max(worst["reciprocity"], float(d.reciprocity_error().max()))
            worst["conjugate"] = max(worst["conjugate"], float(d.conjugate_symmetry_error()))
            ratios.append(d.step_norms().max() / fine.step_norms().max())
        ratios = np.array(ratios)
        limits = dict(reconstruction=1e-8, unitarity=1e-8, symplectic=1e-8, reciprocity=1e-10, conjugate=1e-8)
        checks = [(worst[k] < limits[k], f"{k} {worst[k]:.1e}") for k in limits]
        checks.append((bool(np.all(np.abs(ratios / 2 - 1) <= 0.2)),
                       f"refinement ratio in [{ratios.min():.3f}, {ratios.max():.3f}]"))
        assert record(capsys, 5, f"ABMD property suite ({len(cases)} systems)", checks)

    def test_criterion_6_real_noise_power(self, capsys):
        rng = np.random.default_rng(6)
        g = FrequencyGrid.uniform(5.0, 201)
        worst = 0.0
        for _ in range(200):
            system = random_stable_system(rng)
            sigma = spectral_covariance(transfer_function(system, g))
            q = rng.normal(size=2 * system.n_modes)
            q /= np.linalg.norm(q)
            worst = max(worst, float(np.abs(quadratic_form(sigma.sigmas, q).imag).max()))
        assert record(capsys, 6, "noise power reality (200 pairs)", [(worst < 1e-12, f"max |Im| {worst:.1e}")])

    def test_criterion_7_mesh_round_trip(self, capsys):
        rng = np.random.default_rng(7)
        g = FrequencyGrid.uniform(2.0, 101)
        worst = dict(reconstruction=0.0, determinant=0.0, mzi_factor=0.0, mzi_mesh=0.0)
        count_ok = True
        for n in (2, 3, 4, 6):
            for ordering in ("triangular", "rectangular"):
                u = smooth_unitary_grid(rng, n, g)
                netlist = two_mode_decompose(u, g, ordering)
                rep = netlist_verify(netlist, u)
                worst["reconstruction"] = max(worst["reconstruction"], rep.max_error)
                worst["determinant"] = max(worst["determinant"], rep.determinant_error)
                count_ok &= rep.factor_count <= n * (n - 1) // 2
                for f in netlist.factors:
                    worst["mzi_factor"] = max(worst["mzi_factor"],
                                              float(np.abs(mzi_factorize(f).block() - f.block()).max()))
                worst["mzi_mesh"] = max(worst["mzi_mesh"], float(np.abs(mzi_mesh(netlist).reconstruct() - u).max()))
        checks = [
            (worst["reconstruction"] < 1e-10, f"reconstruction {worst['reconstruction']:.1e}"),
            (count_ok, "factor count <= N(N-1)/2"),
            (worst["determinant"] < 1e-10, f"determinant {worst['determinant']:.1e}"),
            (worst["mzi_factor"] < 1e-12, f"MZI refactorization {worst['mzi_factor']:.1e}"),
            (worst["mzi_mesh"] < 1e-10, f"MZI mesh reconstruction {worst['mzi_mesh']:.1e}"),
        ]
        assert record(capsys, 7, "mesh synthesis round trip", checks)

    def test_criterion_8_cavity_phase_shifter(self, capsys, grid):
        w = grid.omegas
        gamma, delta = 1.3, -0.7
        u = ImeStage.from_parameters([delta], [gamma]).amplitude_transfer(w)[:, 0, 0]
        ref = (gamma + 1j * (w + delta)) / (gamma - 1j * (w + delta))
        modulus = float(np.abs(np.abs(u) - 1).max())
        convention = float(np.abs(u - ref.conj()).max())
        phase = float(np.abs(u - np.exp(1j * cavity_phase(w, gamma, delta, TRANSFER_SIGN))).max())
        wf = np.linspace(-3, 3, 301)
        t1 = cavity_phase(wf, 2.0, 1.0)
        t2 = cavity_phase(wf, 0.5, -1.0) + cavity_phase(wf, 1.5, 1.2) + 0.4
        fit1 = fit_cavity_chain(wf, t1, 1)
        fit2 = fit_cavity_chain(wf, t2, 2, previous=fit_cavity_chain(wf, t2, 1))
        checks = [
            (modulus < 1e-12, f"unit modulus {modulus:.1e}"),
            (convention < 1e-12, f"conjugate of (g+i(w+D))/(g-i(w+D)) {convention:.1e}"),
            (phase < 1e-12, f"phase model {phase:.1e}"),
            (fit1.fit_residual < 1e-6, f"1-cavity fit {fit1.fit_residual:.1e}"),
            (fit2.fit_residual < 1e-6, f"2-cavity fit {fit2.fit_residual:.1e}"),
        ]
        assert record(capsys, 8, "cavity phase shifter", checks)

    def test_criterion_9_passivity(self, capsys):
        rng = np.random.default_rng(9)
        g = FrequencyGrid.uniform(5.0, 401)
        worst = 0.0
        for _ in range(20):
            source = transfer_function(random_stable_system(rng), g)
            chain = random_passive_chain(rng, source.n_modes, int(rng.integers(1, 4)))
            d_src = continue_decomposition(source).d
            d_out = continue_decomposition(ime_transfer(chain, g) @ source).d
            worst = max(worst, float(np.abs(d_out - d_src).max()))
        assert record(capsys, 9, "passivity preservation (20 pairs)", [(worst < 1e-8, f"max |dd| {worst:.1e}")])
