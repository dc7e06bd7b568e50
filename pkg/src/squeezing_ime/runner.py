"""Scenario execution and flat-file export (CSV and JSON text documents).

Every float written to disk uses 12 significant digits, so repeated runs of
the same configuration and seed produce byte-identical files.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .abmd import continue_decomposition
from .dynamics import transfer_function
from .errors import ValidationError
from .ime import ImeChain, ImeStage, match_report, optimize_ime, target_db
from .mesh import MeshNetlist, netlist_verify, realize_phases, two_mode_decompose
from .spectra import (
    lo_to_angles,
    noise_spectral_power,
    optimal_real_lo,
    real_lo_bound,
    spectral_covariance,
    sweep_envelope,
    to_db,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4


def _r(x):
    return float(f"{float(x):.12g}")


def write_csv(path, header, columns):
    """Write equal-length columns as CSV with a plain header line."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, fmt="%.12g", delimiter=",", header=",".join(header), comments="")
    return Path(path)


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")
    return Path(path)


@dataclass(frozen=True)
class ScenarioResult:
    """Files written by a run, its exit status and a JSON-friendly summary."""

    analysis: str
    status: int
    files: tuple
    summary: dict = field(default_factory=dict)


def chain_to_dict(chain):
    """IME chain in the ``ime.stages`` configuration layout (1-based mode pairs)."""
    stages = []
    n = chain.n_modes
    for st in chain.stages:
        g = st.g_ime
        couplings = [[m + 1, k + 1, _r(abs(g[m, k])), _r(-np.angle(g[m, k]))]
                     for m in range(n) for k in range(m + 1, n) if g[m, k] != 0]
        stages.append({"detunings": [_r(v) for v in np.diag(g).real],
                       "gamma": [_r(v) for v in st.gamma_ime], "couplings": couplings})
    return stages


def chain_from_dict(stages, n_modes):
    out = []
    for st in stages:
        couplings = {(m - 1, k - 1): (theta, phi) for m, k, theta, phi in st["couplings"]}
        out.append(ImeStage.from_parameters(st["detunings"], st["gamma"], couplings))
    return ImeChain(tuple(out), n_modes)


def _report_dict(config, opt):
    rep = opt.report
    topo = opt.topology
    return {
        "scenario": config.name,
        "seed": opt.seed,
        "topology": {
            "n_modes": topo.n_modes,
            "n_stages": topo.n_stages,
            "couplings": [[m + 1, n + 1] for m, n in topo.couplings],
            "equal_damping": topo.equal_damping,
            "n_params": topo.n_params,
        },
        "objective_name": opt.objective_name,
        "objective": _r(opt.objective),
        "converged": bool(opt.converged),
        "n_evaluations": int(opt.n_evaluations),
        "params": [_r(v) for v in opt.params],
        "target_index": rep.target_index,
        "band": [_r(v) for v in rep.band],
        "tol_db": _r(rep.tol_db),
        "band_fraction": _r(rep.band_fraction),
        "max_deviation_db": _r(rep.max_deviation_db),
        "min_overlap": _r(rep.min_overlap),
        "ime": {"stages": chain_to_dict(opt.chain),
                "lo_angles": None if opt.lo is None else [_r(v) for v in lo_to_angles(opt.lo.q)]},
    }


def _run_spectrum(config, out):
    grid = config.build_grid()
    sigma = spectral_covariance(transfer_function(config.build_system(), grid))
    lo = config.build_lo("spectrum") or optimal_real_lo(sigma, 0.0)
    spec = noise_spectral_power(sigma, lo)
    f = write_csv(out / "spectrum.csv", ["omega", "linear", "db"], [grid.omegas, spec.values, spec.db_values])
    return EXIT_OK, (f,), {"lo": [_r(v) for v in lo.q], "min_db": _r(spec.db_values.min())}


def _run_abmd(config, out):
    grid = config.build_grid()
    decomp = continue_decomposition(transfer_function(config.build_system(), grid))
    n2 = 2 * decomp.n_modes
    w = grid.omegas
    files = [
        write_csv(out / "abmd_d.csv", ["omega"] + [f"d{i}" for i in range(1, n2 + 1)],
                  [w] + [decomp.d[:, i] for i in range(n2)]),
        write_csv(out / "supermodes.csv", ["omega"] + [f"db_{i}" for i in range(1, n2 + 1)],
                  [w] + [20 * np.log10(decomp.d[:, i]) for i in range(n2)]),
    ]
    header = ["omega"] + [f"re(u_{j})" for j in range(1, n2 + 1)] + [f"im(u_{j})" for j in range(1, n2 + 1)]
    for k in range(n2):
        col = decomp.u[:, :, k]
        files.append(write_csv(out / f"supermode_{k + 1}.csv", header,
                               [w] + [col[:, j].real for j in range(n2)] + [col[:, j].imag for j in range(n2)]))
    db = 20 * np.log10(decomp.d)
    summary = {"n_squeezed": int(np.sum(np.all(db < 0, axis=0))),
               "n_antisqueezed": int(np.sum(np.all(db > 0, axis=0))),
               "gauge": [int(p) + 1 for p in decomp.gauge], "crossings": len(decomp.crossings)}
    return EXIT_OK, tuple(files), summary


def _run_hd_sweep(config, out):
    grid = config.build_grid()
    transfer = transfer_function(config.build_system(), grid)
    sigma = spectral_covariance(transfer)
    sec = config.sections["hd_sweep"]
    k = sec["target_index"] or config.n_modes + 1
    if not 1 <= k <= 2 * config.n_modes:
        raise ValidationError(f"field 'hd_sweep.target_index': expected 1..{2 * config.n_modes}, got {k}")
    env = sweep_envelope(sigma, sec["resolution_deg"])
    bound = real_lo_bound(sigma)
    tgt = target_db(continue_decomposition(transfer), k)
    env_db = env.envelope.db_values
    f = write_csv(out / "hd_sweep.csv",
                  ["omega", "envelope_linear", "envelope_db", "real_lo_bound_db", "supermode_db", "excess_db"],
                  [grid.omegas, env.envelope.values, env_db, to_db(bound.values), tgt, env_db - tgt])
    return EXIT_OK, (f,), {"family_size": env.family_size, "max_excess_db": _r((env_db - tgt).max()),
                           "max_bound_excess_db": _r((to_db(bound.values) - tgt).max())}


def _optimize(config, out):
    opt_sec = config.sections["optimize"]
    if opt_sec["seed"] is None:
        raise ValidationError("field 'optimize.seed' is required for optimization (or pass --seed)")
    opt = optimize_ime(
        config.build_system(),
        target_index=opt_sec["target_index"],
        topology=config.build_topology(),
        band=tuple(opt_sec["band"]),
        objective=opt_sec["objective"],
        seed=opt_sec["seed"],
        n_starts=opt_sec["n_starts"],
        n_points=opt_sec["n_points"],
        report_grid=config.build_grid(),
        tol_db=opt_sec["tol_db"],
    )
    rep = opt.report
    files = (
        write_json(out / "match_report.txt", _report_dict(config, opt)),
        write_csv(out / "match_spectrum.csv", ["omega", "detected_db", "target_db", "overlap"],
                  [rep.grid.omegas, rep.detected_db, rep.target_db, rep.overlap]),
    )
    return opt, files


def _run_optimize(config, out):
    opt, files = _optimize(config, out)
    status = EXIT_OK if opt.converged else EXIT_NOT_CONVERGED
    return status, files, {"objective": _r(opt.objective), "band_fraction": _r(opt.report.band_fraction),
                           "converged": bool(opt.converged)}


def _run_decompose(config, out):
    chain = config.build_chain()
    files, status = (), EXIT_OK
    if chain is None:
        opt, files = _optimize(config, out)
        chain = opt.chain
        status = EXIT_OK if opt.converged else EXIT_NOT_CONVERGED
    grid = config.build_grid()
    u = chain.amplitude_transfer(grid.omegas)
    sec = config.sections["decompose"]
    netlist = two_mode_decompose(u, grid, sec["ordering"])
    band = None if sec["band"] is None else tuple(sec["band"])
    netlist = realize_phases(netlist, sec["n_cavities"], sec["phase_tolerance"], band)
    report = netlist_verify(netlist, u)
    doc = netlist.to_dict()
    doc["verification"] = report.to_dict()
    files += (write_json(out / "netlist.txt", doc), write_json(out / "verify_report.txt", report.to_dict()))
    if not report.ok:
        status = EXIT_NOT_CONVERGED
    return status, files, report.to_dict()


def _run_verify(config, out, netlist_path=None):
    path = Path(netlist_path) if netlist_path else out / "netlist.txt"
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"netlist {path} is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
    netlist = MeshNetlist.from_dict(doc)
    chain = config.build_chain()
    if chain is None:
        rep_path = out / "match_report.txt"
        if not rep_path.exists():
            raise ValidationError("verify needs 'ime.stages' in the configuration or a match_report.txt")
        chain = chain_from_dict(json.loads(rep_path.read_text())["ime"]["stages"], config.n_modes)
    u = chain.amplitude_transfer(netlist.grid.omegas)
    report = netlist_verify(netlist, u)
    f = write_json(out / "verify_report.txt", report.to_dict())
    return (EXIT_OK if report.ok else EXIT_NOT_CONVERGED), (f,), report.to_dict()


_RUNNERS = {
    "spectrum": _run_spectrum,
    "abmd": _run_abmd,
    "hd-sweep": _run_hd_sweep,
    "optimize-ime": _run_optimize,
    "decompose": _run_decompose,
}


def run_scenario(config, out_dir, analysis=None, netlist_path=None):
    """Run one analysis and write its files into ``out_dir``.

    Args:
        config: Validated ScenarioConfig.
        out_dir: Output directory (created if missing).
        analysis: Overrides ``config.analysis``; ``"verify"`` re-checks a netlist.
        netlist_path: Netlist document for ``verify`` (default ``out_dir/netlist.txt``).

    Returns:
        ScenarioResult with status 0 on success or 3 when an optimizer did not
        converge / a verification invariant failed (files are still written).
    """
    analysis = analysis or config.analysis
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if analysis == "verify":
        status, files, summary = _run_verify(config, out, netlist_path)
    elif analysis in _RUNNERS:
        status, files, summary = _RUNNERS[analysis](config, out)
    else:
        raise ValidationError(f"unknown analysis {analysis!r}")
    return ScenarioResult(analysis, status, tuple(str(f) for f in files), summary)
