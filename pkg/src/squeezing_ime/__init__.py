"""Multimode squeezed-light sources: spectra, morphing supermodes, IME mode-matching and mesh synthesis."""

from .abmd import MorphingDecomposition, continue_decomposition, pointwise_bmd, supermode_quadratures
from .config import ScenarioConfig, load_config, parse_config
from .dynamics import FrequencyGrid, QuadraticSystem, TransferGrid, build_coupling_matrix, transfer_function
from .errors import DecompositionError, UnstableSystemError, ValidationError
from .ime import (
    ImeChain,
    ImeStage,
    ImeTopology,
    MatchReport,
    generalized_lo,
    ime_transfer,
    match_report,
    optimize_ime,
)
from .mesh import (
    CavityChain,
    MeshNetlist,
    MziStage,
    TwoLevelFactor,
    fit_cavity_chain,
    mzi_factorize,
    netlist_verify,
    null_factor,
    two_mode_decompose,
)
from .runner import run_scenario
from .spectra import (
    VACUUM_LEVEL,
    LocalOscillator,
    NoiseSpectrum,
    SpectralCovariance,
    hd_sweep,
    noise_spectral_power,
    real_lo_bound,
    spectral_covariance,
)

__all__ = [
    "CavityChain", "DecompositionError", "FrequencyGrid", "ImeChain", "ImeStage", "ImeTopology",
    "LocalOscillator", "MatchReport", "MeshNetlist", "MorphingDecomposition", "MziStage", "NoiseSpectrum",
    "QuadraticSystem", "ScenarioConfig", "SpectralCovariance", "TransferGrid", "TwoLevelFactor",
    "UnstableSystemError", "VACUUM_LEVEL", "ValidationError", "build_coupling_matrix", "continue_decomposition",
    "fit_cavity_chain", "generalized_lo", "hd_sweep", "ime_transfer", "load_config", "match_report",
    "mzi_factorize", "netlist_verify", "noise_spectral_power", "null_factor", "optimize_ime", "parse_config",
    "pointwise_bmd", "real_lo_bound", "run_scenario", "spectral_covariance", "supermode_quadratures",
    "transfer_function", "two_mode_decompose",
]
