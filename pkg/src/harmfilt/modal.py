"""Harmonic resonance mode analysis over a frequency sweep.

The admittance matrix is eigen-decomposed at each swept frequency; modal
impedances are 1/|lambda|.  Modes are tracked across the sweep by right-
eigenvector overlap, and a mode is critical when its peak modal impedance
is a local maximum exceeding a multiple of the window median.  Bus
participation factors are the products of left and right eigenvector
components, normalized to sum to one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import ValidationError
from .grid_model import StudyCase
from .harmonic_matrix import build_harmonic_admittance
from .scenario import BASE_SCENARIO, PlacementScenario

log = logging.getLogger(__name__)

OVERLAP_MATCH = 0.7
CRITICAL_FACTOR = 3.0
_DEGENERATE_TOL = 1e-10


@dataclass(frozen=True)
class CriticalMode:
    mode_id: int
    frequency_hz: float
    harmonic_order: float
    modal_impedance: float
    participation: np.ndarray | None  # complex, sums to 1; None if degenerate
    degenerate: bool = False

    def participation_magnitude(self) -> np.ndarray:
        if self.participation is None:
            raise ValidationError(f"mode {self.mode_id} is degenerate")
        return np.abs(self.participation)

    def dominant_bus_index(self) -> int:
        return int(np.argmax(self.participation_magnitude()))


@dataclass(frozen=True)
class ModalResult:
    frequencies_hz: np.ndarray
    mode_ids: np.ndarray  # (n_freq, N) tracked id per eigenvalue slot
    modal_impedance: np.ndarray  # (n_freq, N)
    critical: tuple[CriticalMode, ...]
    skipped_frequencies: tuple[float, ...] = ()

    def trajectory(self, mode_id: int) -> tuple[np.ndarray, np.ndarray]:
        """(frequency, modal impedance) samples belonging to one mode id."""
        freqs, zs = [], []
        for fi, f in enumerate(self.frequencies_hz):
            hit = np.flatnonzero(self.mode_ids[fi] == mode_id)
            if hit.size:
                freqs.append(f)
                zs.append(self.modal_impedance[fi, hit[0]])
        return np.array(freqs), np.array(zs)

    def peak_impedance(self, mode_id: int) -> float:
        _, zs = self.trajectory(mode_id)
        if zs.size == 0:
            raise ValidationError(f"unknown mode id {mode_id}")
        return float(np.max(zs))


def participation(vl: np.ndarray, vr: np.ndarray) -> np.ndarray | None:
    """Left*right participation vector normalized to unit sum.

    ``vl`` is the left eigenvector as returned by scipy (conjugated
    convention).  Returns None when the normalization is degenerate
    (repeated eigenvalue / defective pair).
    """
    raw = vl.conj() * vr
    denom = raw.sum()
    if abs(denom) < _DEGENERATE_TOL:
        return None
    return raw / denom


def sweep_modes(
    study: StudyCase,
    scenario: PlacementScenario = BASE_SCENARIO,
    f_start_hz: float = 120.0,
    f_stop_hz: float = 480.0,
    step_hz: float = 1.0,
    critical_factor: float = CRITICAL_FACTOR,
) -> ModalResult:
    """Eigen-sweep of Y(f) with mode tracking and critical-mode extraction."""
    if step_hz <= 0 or f_stop_hz <= f_start_hz:
        raise ValidationError("sweep range/step must be positive")
    f0 = study.config.f0_hz
    if f_start_hz / f0 < 2.0:
        raise ValidationError(
            f"sweep start {f_start_hz} Hz is below twice the fundamental"
        )
    freqs = np.arange(f_start_hz, f_stop_hz + 0.5 * step_hz, step_hz)
    n = study.n

    mode_ids = np.full((len(freqs), n), -1, dtype=int)
    z_modal = np.full((len(freqs), n), np.nan)
    eigvecs_prev: np.ndarray | None = None
    ids_prev: np.ndarray | None = None
    next_id = 0
    skipped: list[float] = []
    # per tracked mode: (peak z, frequency row, left vec, right vec)
    best: dict[int, tuple[float, int, np.ndarray, np.ndarray]] = {}

    for fi, f in enumerate(freqs):
        h = f / f0
        y = build_harmonic_admittance(study, scenario, h).toarray()
        try:
            w, vl, vr = la.eig(y, left=True, right=True)
        except la.LinAlgError:
            skipped.append(float(f))
            continue
        z = 1.0 / np.abs(w)

        ids = np.full(n, -1, dtype=int)
        if eigvecs_prev is None:
            ids = np.arange(n)
            next_id = n
        else:
            overlap = np.abs(eigvecs_prev.conj().T @ vr)
            taken: set[int] = set()
            order = np.argsort(-overlap.max(axis=0))
            for col in order:
                row = int(np.argmax(overlap[:, col]))
                if overlap[row, col] > OVERLAP_MATCH and ids_prev[row] not in taken:
                    ids[col] = ids_prev[row]
                    taken.add(ids_prev[row])
                else:
                    ids[col] = next_id
                    next_id += 1
        mode_ids[fi] = ids
        z_modal[fi] = z
        for col in range(n):
            m = int(ids[col])
            if m not in best or z[col] > best[m][0]:
                best[m] = (float(z[col]), fi, vl[:, col].copy(), vr[:, col].copy())
        eigvecs_prev = vr
        ids_prev = ids

    valid = z_modal[np.isfinite(z_modal)]
    if valid.size == 0:
        raise ValidationError("modal sweep produced no decompositions")
    threshold = critical_factor * float(np.median(valid))

    critical: list[CriticalMode] = []
    for mode_id in range(next_id):
        if mode_id not in best:
            continue
        peak, fi, vl_peak, vr_peak = best[mode_id]
        if peak <= threshold:
            continue
        rows, cols = np.nonzero(mode_ids == mode_id)
        zs = z_modal[rows, cols]
        peak_pos = int(np.argmax(zs))
        # require a local maximum inside the trajectory (or a boundary peak)
        if 0 < peak_pos < zs.size - 1:
            if not (zs[peak_pos] >= zs[peak_pos - 1] and zs[peak_pos] >= zs[peak_pos + 1]):
                continue
        pf = participation(vl_peak, vr_peak)
        critical.append(
            CriticalMode(
                mode_id=mode_id,
                frequency_hz=float(freqs[fi]),
                harmonic_order=float(freqs[fi] / f0),
                modal_impedance=peak,
                participation=pf,
                degenerate=pf is None,
            )
        )
    critical.sort(key=lambda m: -m.modal_impedance)
    log.info(
        "modal sweep %s: %d frequencies, %d tracked modes, %d critical",
        scenario.scenario_id, len(freqs), next_id, len(critical),
    )
    return ModalResult(
        frequencies_hz=freqs,
        mode_ids=mode_ids,
        modal_impedance=z_modal,
        critical=tuple(critical),
        skipped_frequencies=tuple(skipped),
    )
