"""Independent full-Hamiltonian integrator used to check every predictor.

This module deliberately shares no derivation machinery with
:mod:`msgate.magnus`: it builds the dense Hamiltonian and integrates the
Schrodinger equation with a hand-rolled fixed-step fourth-order Runge-Kutta
scheme.  Agreement between the two routes is the package's core evidence.

Two drive frames are provided:

* ``static_axis`` -- H(tau) = lam*S_z - omega*(a^dag e^{i tau} + a e^{-i tau})*S_phi,
  the frame in which the perturbative coefficients are defined.
* ``ramped_axis`` -- the miscalibration term rotated away, leaving
  H(s) = -omega*(a^dag e^{i s} + a e^{-i s})*S_{phi0 + lam*s}.  This is the
  hardware's bookkeeping between gates (drive phase counted against the
  qubit frame), used by the two-gate calibration sequence.  Populations are
  frame-independent, so no de-rotation is needed before measuring.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .hilbert import (
    SIGMA_Z,
    QUBIT_LABELS,
    CompositeState,
    FockCutoff,
    Frame,
    partial_trace_phonons,
    purity,
)
from .ideal import DimensionlessGateParams, collective_spin, ideal_output_state

__all__ = [
    "IntegratorConfig",
    "PropagationResult",
    "GuardBandError",
    "hamiltonian_matrix",
    "propagate",
    "propagate_batch",
    "propagate_ramped_axis",
    "observables",
    "relative_phase_pair",
    "expectation_trajectory",
    "sweep",
    "write_sweep_csv",
    "SWEEP_COLUMNS",
]


class GuardBandError(RuntimeError):
    """Probability reached the top of the Fock ladder; results untrusted."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings and numerical-health thresholds."""

    steps_per_gate: int = 50_000
    guard_levels: int = 5
    guard_tolerance: float = 1e-10
    norm_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.steps_per_gate < 1:
            raise ValueError("steps_per_gate must be positive")
        if self.guard_levels < 1:
            raise ValueError("guard_levels must be positive")


@dataclass
class PropagationResult:
    """Final state plus the health numbers accumulated during integration."""

    state: CompositeState
    norm_drift: float
    guard_band_mass: float
    steps: int

    def check(self, config: IntegratorConfig) -> "PropagationResult":
        if self.guard_band_mass > config.guard_tolerance:
            raise GuardBandError(
                f"guard-band occupation {self.guard_band_mass:.3e} exceeds "
                f"{config.guard_tolerance:.1e}; raise the Fock cutoff"
            )
        return self


def _ladder(dim: int) -> np.ndarray:
    """Annihilation operator a on 0..dim-1."""
    return np.diag(np.sqrt(np.arange(1.0, dim)), 1).astype(complex)


def hamiltonian_matrix(
    tau: float, params: DimensionlessGateParams, cutoff: FockCutoff
) -> np.ndarray:
    """Dense static-axis Hamiltonian at dimensionless time tau."""
    d = cutoff.dim
    a = _ladder(d)
    eye2 = np.eye(2, dtype=complex)
    s_z = 0.5 * (np.kron(SIGMA_Z, eye2) + np.kron(eye2, SIGMA_Z))
    s_phi = collective_spin(params.phi)
    drive = np.exp(1j * tau) * a.conj().T + np.exp(-1j * tau) * a
    return params.lambda_tilde * np.kron(s_z, np.eye(d)) - params.omega_tilde * np.kron(
        s_phi, drive
    )


def _rk4(apply_h, psi: np.ndarray, t0: float, t1: float, steps: int) -> np.ndarray:
    """Classic RK4 for i dpsi/dt = H(t) psi; apply_h(t, psi) -> H(t) psi."""
    h = (t1 - t0) / steps
    for k in range(steps):
        t = t0 + k * h
        k1 = -1j * apply_h(t, psi)
        k2 = -1j * apply_h(t + 0.5 * h, psi + 0.5 * h * k1)
        k3 = -1j * apply_h(t + 0.5 * h, psi + 0.5 * h * k2)
        k4 = -1j * apply_h(t + h, psi + h * k3)
        psi = psi + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    return psi


def _static_axis_apply(params, cutoff, lambda_values):
    """H(t) psi for the static-axis frame, batched over columns.

    ``lambda_values`` has one miscalibration per column; the drive part is
    shared across the batch (same matrices), the S_z part is a diagonal
    rescaled per column.
    """
    d = cutoff.dim
    a = _ladder(d)
    coupling = -params.omega_tilde * np.kron(collective_spin(params.phi), a.conj().T)
    coupling_dag = coupling.conj().T
    z_diag = np.repeat([1.0, 0.0, 0.0, -1.0], d)[:, None]
    lam = np.asarray(lambda_values, dtype=float)[None, :]

    def apply_h(t: float, psi: np.ndarray) -> np.ndarray:
        drive = np.exp(1j * t) * (coupling @ psi) + np.exp(-1j * t) * (
            coupling_dag @ psi
        )
        return drive + lam * (z_diag * psi)

    return apply_h


def _guard_band_mass(amps: np.ndarray, cutoff: FockCutoff, levels: int) -> float:
    """Largest per-column probability in the top Fock levels."""
    d = cutoff.dim
    levels = min(levels, d)
    blocks = amps.reshape(4, d, -1)
    mass = np.abs(blocks[:, d - levels :, :]) ** 2
    return float(mass.sum(axis=(0, 1)).max())


def propagate_batch(
    amps: np.ndarray,
    cutoff: FockCutoff,
    params: DimensionlessGateParams,
    lambda_values: np.ndarray,
    config: IntegratorConfig = IntegratorConfig(),
    span: tuple[float, float] | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Propagate many columns at once in the static-axis frame.

    Each column j evolves under the Hamiltonian with miscalibration
    ``lambda_values[j]``; all other parameters are shared.  Returns
    (final amplitudes, per-column norm drift, worst guard-band mass).
    """
    amps = np.asarray(amps, dtype=complex)
    squeeze = amps.ndim == 1
    if squeeze:
        amps = amps[:, None]
    lam = np.broadcast_to(np.asarray(lambda_values, dtype=float), (amps.shape[1],))
    if span is None:
        span = (0.0, params.tau_gate)
    apply_h = _static_axis_apply(params, cutoff, lam)
    steps = config.steps_per_gate
    final = _rk4(apply_h, amps, span[0], span[1], steps)
    drift = np.abs(np.linalg.norm(final, axis=0) - np.linalg.norm(amps, axis=0))
    guard = _guard_band_mass(final, cutoff, config.guard_levels)
    if squeeze:
        final = final[:, 0]
    return final, drift, guard


def propagate(
    initial: CompositeState,
    params: DimensionlessGateParams,
    config: IntegratorConfig = IntegratorConfig(),
    span: tuple[float, float] | None = None,
) -> PropagationResult:
    """Integrate one state through the static-axis Hamiltonian."""
    final, drift, guard = propagate_batch(
        initial.amplitudes,
        initial.cutoff,
        params,
        np.array([params.lambda_tilde]),
        config,
        span,
    )
    state = CompositeState(final, initial.cutoff, initial.frame)
    return PropagationResult(state, float(drift.max()), guard, config.steps_per_gate)


def propagate_ramped_axis(
    amps: np.ndarray,
    cutoff: FockCutoff,
    omega_tilde: float,
    lambda_tilde: float,
    phi_values: np.ndarray,
    span: tuple[float, float],
    config: IntegratorConfig = IntegratorConfig(),
) -> tuple[np.ndarray, np.ndarray, float]:
    """Propagate columns under the ramped-axis Hamiltonian.

    Column j sees the spin axis at angle phi_values[j] + lambda_tilde * s
    (s is global, so a later span continues the same ramp).  The four drive
    matvecs are shared across the batch; only the per-column axis angle
    differs, entering through scalar cosine/sine weights.
    """
    amps = np.asarray(amps, dtype=complex)
    squeeze = amps.ndim == 1
    if squeeze:
        amps = amps[:, None]
    phi = np.broadcast_to(np.asarray(phi_values, dtype=float), (amps.shape[1],))

    d = cutoff.dim
    a = _ladder(d)
    k_y = -omega_tilde * np.kron(collective_spin(0.0), a.conj().T)
    k_x = -omega_tilde * np.kron(collective_spin(math.pi / 2.0), a.conj().T)
    k_y_dag = k_y.conj().T
    k_x_dag = k_x.conj().T

    def apply_h(s: float, psi: np.ndarray) -> np.ndarray:
        e_plus = np.exp(1j * s)
        drive_y = e_plus * (k_y @ psi) + np.conj(e_plus) * (k_y_dag @ psi)
        drive_x = e_plus * (k_x @ psi) + np.conj(e_plus) * (k_x_dag @ psi)
        angle = phi + lambda_tilde * s
        return drive_y * np.cos(angle)[None, :] + drive_x * np.sin(angle)[None, :]

    final = _rk4(apply_h, amps, span[0], span[1], config.steps_per_gate)
    drift = np.abs(np.linalg.norm(final, axis=0) - np.linalg.norm(amps, axis=0))
    guard = _guard_band_mass(final, cutoff, config.guard_levels)
    if squeeze:
        final = final[:, 0]
    return final, drift, guard


def relative_phase_pair(initial_label: str) -> tuple[int, int]:
    """(row, column) of the reduced-matrix coherence whose argument is the
    gate's relative phase for a given computational input."""
    pairs = {"gg": (3, 0), "ee": (0, 3), "ge": (2, 1), "eg": (1, 2)}
    return pairs[initial_label]


def observables(
    state: CompositeState,
    initial_label: str,
    initial_n: int,
    coherence_floor: float = 1e-6,
) -> dict:
    """Standard scorecard of a final state for a computational-basis input.

    Keys: populations (gg, ge, eg, ee order), relative_phase, coherence_abs,
    phase_reliable, fidelity, purity, norm, rho (QubitDensityMatrix).
    Fidelity is against the ideal *qubit* output (reduced-state overlap).
    """
    comp = state.in_frame(Frame.COMPUTATIONAL)
    rho = partial_trace_phonons(comp)
    pops = np.real(np.diag(rho.matrix)).copy()
    row, col = relative_phase_pair(initial_label)
    coh = rho.matrix[row, col]
    target = ideal_output_state(initial_label, initial_n, state.cutoff)
    target_qubit = target.amplitudes.reshape(4, state.cutoff.dim)[:, initial_n]
    fid = float(np.real(target_qubit.conj() @ rho.matrix @ target_qubit))
    return {
        "populations": pops,
        "relative_phase": float(np.angle(coh)),
        "coherence_abs": float(abs(coh)),
        "phase_reliable": bool(abs(coh) > coherence_floor),
        "fidelity": fid,
        "purity": purity(rho),
        "norm": comp.norm,
        "rho": rho,
    }


def expectation_trajectory(
    initial: CompositeState,
    params: DimensionlessGateParams,
    n_records: int = 64,
    config: IntegratorConfig = IntegratorConfig(),
) -> dict[str, np.ndarray]:
    """Record <a>, norm and guard mass at evenly spaced times over the gate."""
    if n_records < 2:
        raise ValueError("need at least two record points")
    cutoff = initial.cutoff
    d = cutoff.dim
    a_op = np.kron(np.eye(4, dtype=complex), _ladder(d))
    taus = np.linspace(0.0, params.tau_gate, n_records)
    steps_each = max(1, config.steps_per_gate // (n_records - 1))
    apply_h = _static_axis_apply(params, cutoff, np.array([params.lambda_tilde]))
    psi = initial.amplitudes[:, None]
    a_exp = np.empty(n_records, dtype=complex)
    norms = np.empty(n_records)
    guard = np.empty(n_records)
    for i, tau in enumerate(taus):
        if i > 0:
            psi = _rk4(apply_h, psi, taus[i - 1], tau, steps_each)
        v = psi[:, 0]
        nrm = np.linalg.norm(v)
        a_exp[i] = np.vdot(v, a_op @ v) / max(nrm**2, 1e-300)
        norms[i] = nrm
        guard[i] = _guard_band_mass(psi, cutoff, config.guard_levels)
    return {"tau": taus, "a_expect": a_exp, "norm": norms, "guard_band_mass": guard}


SWEEP_COLUMNS = [
    "lambda_tilde",
    "fock_n",
    "p_gg",
    "p_ge",
    "p_eg",
    "p_ee",
    "relative_phase",
    "coherence_abs",
    "fidelity",
    "purity",
    "norm_drift",
    "guard_band_mass",
]


def sweep(
    lambda_values: np.ndarray,
    fock_levels: list[int],
    params: DimensionlessGateParams,
    cutoff: FockCutoff,
    config: IntegratorConfig = IntegratorConfig(),
    initial_label: str = "gg",
) -> list[dict]:
    """Propagate |initial_label, n> across a miscalibration grid.

    All (lambda, n) pairs are batched into a single RK4 run; rows come back
    ordered by (n, lambda) with one dict per pair matching SWEEP_COLUMNS.
    """
    lam = np.asarray(lambda_values, dtype=float)
    pairs = [(n, l) for n in fock_levels for l in lam]
    amps = np.zeros((cutoff.composite_dim, len(pairs)), dtype=complex)
    q = QUBIT_LABELS.index(initial_label)
    for j, (n, _) in enumerate(pairs):
        amps[cutoff.index(q, n), j] = 1.0
    lam_cols = np.array([l for _, l in pairs])
    final, drift, _ = propagate_batch(amps, cutoff, params, lam_cols, config)
    rows = []
    for j, (n, l) in enumerate(pairs):
        state = CompositeState(final[:, j], cutoff)
        guard_j = _guard_band_mass(final[:, j : j + 1], cutoff, config.guard_levels)
        obs = observables(state, initial_label, n)
        rows.append(
            {
                "lambda_tilde": l,
                "fock_n": n,
                "p_gg": obs["populations"][0],
                "p_ge": obs["populations"][1],
                "p_eg": obs["populations"][2],
                "p_ee": obs["populations"][3],
                "relative_phase": obs["relative_phase"],
                "coherence_abs": obs["coherence_abs"],
                "fidelity": obs["fidelity"],
                "purity": obs["purity"],
                "norm_drift": float(drift[j]),
                "guard_band_mass": guard_j,
            }
        )
    return rows


def write_sweep_csv(path, rows: list[dict], extra_columns: list[str] | None = None) -> None:
    """Versioned CSV dump of sweep rows (deterministic float formatting)."""
    columns = SWEEP_COLUMNS + (extra_columns or [])
    with open(path, "w", newline="") as fh:
        fh.write("# schema=msgate/sweep/1\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [repr(float(row[c])) if c != "fock_n" else str(int(row[c])) for c in columns]
            )
