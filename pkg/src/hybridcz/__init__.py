"""Hybrid-qubit two-qubit gate simulation.

Submodules
----------
model
    28-state Hamiltonian and device parameters.
pulse
    Tunnel-coupling ramps, AC drives and composite control schedules.
noise
    Quasistatic and 1/f detuning noise.
propagate
    Time evolution and adiabatic state labeling.
gates
    Calibration, fidelity metrics and error budgets.
cli
    Command-line experiment runner.
"""

from .errors import (
    AliasingError,
    CalibrationError,
    ConfigError,
    GateDestroyedError,
    HybridCZError,
    IntegrationError,
    LabelingAmbiguousError,
    NoiseTraceError,
    OutOfRangeError,
    SingularParameterError,
)
from .gates import (
    CZ,
    ZCNOT_IDEAL,
    CZSettings,
    GateReport,
    calibrate_cz,
    calibrate_single_qubit,
    calibrate_zcnot,
    chi_fidelity,
    compose_zcnot,
    evaluate_cz,
    makhlin_invariants,
    process_fidelity,
    single_qubit_gate,
)
from .model import BASIS, DEFAULT_PARAMS, SystemParams, build_hamiltonian, effective_zz_coupling
from .noise import NOISE_FREE, NoiseRealization, OneOverFSpec, quadrature_grid
from .propagate import label_adiabatic, propagate
from .pulse import AcDrive, ControlSchedule, TunnelRamp

__version__ = "0.1.0"
