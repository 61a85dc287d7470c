"""Forward simulation of photon-counting observables and the data likelihood.

Two experiment kinds are supported: ``"LT"`` (lifetime histogram after
pulsed excitation from the topmost level) and ``"G2"`` (steady-state
second-order intensity correlation).
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .engine import (
    SteadyStateError,
    build_liouvillian,
    eigen_decompose,
    expectation_trace,
    steady_state,
    steady_state_from_eigen,
)
from .library import EMISSION, EXCITATION, LEVELS
from .model import Model, gamma_from_moments

LT, G2 = "LT", "G2"
KINDS = (LT, G2)
DEFAULT_IRF_FWHM = 0.240  # ns
G2_REF_MIN = 5.0  # ns; correlations are assumed to have decayed by here


class UnphysicalModelError(ValueError):
    """The model cannot produce the requested observable (e.g. no emission)."""


@dataclass
class ExperimentTrace:
    """Values of one experiment on a uniform delay grid.

    LT values are normalized to peak 1 and G2 values to a long-delay level
    of 1.  ``counts`` keeps raw counts when the trace came from a counting
    experiment or a synthetic draw.
    """

    kind: str
    tau: np.ndarray
    values: np.ndarray
    weights: np.ndarray = None
    counts: np.ndarray = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        self.tau = np.asarray(self.tau, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.tau.ndim != 1 or self.tau.shape != self.values.shape:
            raise ValueError("tau and values must be 1-D arrays of equal length")
        check_grid(self.tau, self.kind)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("trace values must be finite and non-negative")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.tau.shape or np.any(self.weights < 0):
                raise ValueError("weights must be non-negative and match tau")

    def with_weights(self, weights):
        return ExperimentTrace(self.kind, self.tau, self.values, weights, self.counts)


def check_grid(tau, kind=LT, atol=1e-9):
    tau = np.asarray(tau, dtype=float)
    if tau.size < 2:
        raise ValueError("a delay grid needs at least two points")
    steps = np.diff(tau)
    if np.any(steps <= 0):
        raise ValueError("delay grid must be strictly increasing")
    if np.abs(steps - steps.mean()).max() > atol:
        raise ValueError("delay grid must be uniformly spaced")
    if kind == G2:
        if np.abs(tau + tau[::-1]).max() > atol or not np.any(np.abs(tau) < atol):
            raise ValueError("G2 grid must be symmetric about and contain tau = 0")
    elif tau[0] < -atol:
        raise ValueError("LT grid must start at tau >= 0")
    return float(steps.mean())


def lt_grid(t_max=8.0, dt=0.025):
    return np.arange(int(round(t_max / dt)) + 1) * dt


def g2_grid(t_max=8.0, dt=0.05):
    n = int(round(t_max / dt))
    return np.arange(-n, n + 1) * dt


@dataclass(frozen=True)
class SimulationSettings:
    """Instrument and simulation options shared by all traces.

    ``strip_hamiltonian_drive`` removes Hamiltonian terms that connect
    levels of different excitation number when simulating a lifetime
    (pulsed, drive-off) experiment.
    """

    irf_fwhm: float = DEFAULT_IRF_FWHM
    strip_hamiltonian_drive: bool = True

    def __post_init__(self):
        if self.irf_fwhm is not None and not self.irf_fwhm > 0:
            raise ValueError("irf_fwhm must be > 0 (or None for no IRF)")


@dataclass(frozen=True)
class NoiseModel:
    """Instrument and shot-noise parameters for synthetic data.

    ``background=None`` uses the model's own background level.
    """

    irf_fwhm: float = DEFAULT_IRF_FWHM
    background: float = None
    poisson_scale: float = 1e4

    def __post_init__(self):
        if not self.irf_fwhm > 0:
            raise ValueError("irf_fwhm must be > 0")
        if self.background is not None and self.background < 0:
            raise ValueError("background must be >= 0")
        if not self.poisson_scale > 0:
            raise ValueError("poisson_scale must be > 0")


# --- instrument response ----------------------------------------------------

@lru_cache(maxsize=64)
def _gaussian_kernel(fwhm, dt):
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    half = int(math.ceil(5.0 * sigma / dt))
    x = np.arange(-half, half + 1) * dt
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    k.setflags(write=False)
    return k


def convolve_irf(values, tau, fwhm=DEFAULT_IRF_FWHM):
    """Convolve with a unit-sum Gaussian IRF truncated at +-5 sigma.

    Edges are padded by symmetric reflection.
    """
    if not fwhm > 0:
        raise ValueError("IRF FWHM must be > 0")
    values = np.asarray(values, dtype=float)
    tau = np.asarray(tau, dtype=float)
    dt = (tau[-1] - tau[0]) / (len(tau) - 1)
    kern = _gaussian_kernel(float(fwhm), round(float(dt), 12))
    half = len(kern) // 2
    if half == 0:
        return values.copy()
    if half > values.size:
        padded = np.pad(values, half, mode="symmetric")
    else:
        padded = np.concatenate([values[half - 1::-1], values, values[:-half - 1:-1]])
    return np.convolve(padded, kern, mode="valid")


# --- ideal observables ------------------------------------------------------

def excitation_number(d):
    """Number of excited emitters for each level of the d-level system."""
    return {2: np.array([1, 0]), 4: np.array([0, 1, 1, 2])}[d]


def _is_drive(op):
    exc = excitation_number(op.dim)
    return any(exc[i] != exc[j] for i, j in op.key)


def emission_processes(model):
    return [(op, g) for op, g in model.lindblad if op.optical_class == EMISSION and g > 0]


def lifetime_model(model, strip_hamiltonian_drive=True):
    """The model with excitation processes removed (pulse-off evolution)."""
    lind = tuple((op, g) for op, g in model.lindblad if op.optical_class != EXCITATION)
    ham = model.hamiltonian
    if strip_hamiltonian_drive:
        ham = tuple((op, w) for op, w in ham if not _is_drive(op))
    return Model(model.dim, ham, lind, model.background)


def _emission_observable(emitters, d):
    E = np.zeros((d, d), dtype=complex)
    for op, g in emitters:
        m = op.matrix
        E += g * (m.conj().T @ m)
    return E


def excited_state(d):
    rho = np.zeros((d, d), dtype=complex)
    top = LEVELS[d].index("e")
    rho[top, top] = 1.0
    return rho


def ideal_lifetime(model, tau, strip_hamiltonian_drive=True):
    """Emission intensity ``sum_v gamma_v Tr(v^+ v rho(tau))`` from the top level."""
    tau = np.asarray(tau, dtype=float)
    emitters = emission_processes(model)
    if not emitters:
        return np.zeros_like(tau)
    lv = build_liouvillian(lifetime_model(model, strip_hamiltonian_drive))
    E = _emission_observable(emitters, model.dim)
    return expectation_trace(lv, excited_state(model.dim), E, tau).real


def g2_reference_delay(tau):
    return max(G2_REF_MIN, 0.9 * float(np.max(np.abs(tau))))


def ideal_g2(model, tau, tau_ref=None):
    """Normalized ``g2(tau)`` by the quantum regression theorem.

    ``G2(tau) = sum_{v,u} gamma_v gamma_u Tr[v^+ v V(tau)(u rho_ss u^+)]``
    over monitored-emission processes, evaluated at ``|tau|`` and divided by
    its value at ``tau_ref``.
    """
    tau = np.asarray(tau, dtype=float)
    if tau_ref is None:
        tau_ref = g2_reference_delay(tau)
    emitters = emission_processes(model)
    if not emitters:
        raise UnphysicalModelError("model has no monitored emission process")
    d = model.dim
    lv = build_liouvillian(model)
    decomp = eigen_decompose(lv)
    try:
        rho_ss = steady_state_from_eigen(decomp, d) if decomp is not None else steady_state(lv)
    except SteadyStateError as err:
        raise UnphysicalModelError(str(err)) from err
    E = _emission_observable(emitters, d)
    seed = np.zeros((d, d), dtype=complex)
    for op, g in emitters:
        m = op.matrix
        seed += g * (m @ rho_ss @ m.conj().T)
    delays = np.append(np.abs(tau), tau_ref)
    G = expectation_trace(lv, seed, E, delays, decomp=decomp).real
    norm = G[-1]
    if not norm > 1e-14:
        raise UnphysicalModelError("steady-state emission vanishes")
    return G[:-1] / norm


def apply_instrument(ideal, tau, kind, irf_fwhm=DEFAULT_IRF_FWHM, background=0.0):
    """IRF convolution, additive background and renormalization."""
    y = np.asarray(ideal, dtype=float)
    if irf_fwhm is not None:
        y = convolve_irf(y, tau, irf_fwhm)
    if kind == LT:
        peak = y.max()
        if peak > 0:
            y = y / peak
        y = y + background
        peak = y.max()
        return y / peak if peak > 0 else y
    return (y + background) / (1.0 + background)


def lifetime_trace(model, tau, settings=SimulationSettings(), background=None):
    """Simulated, instrument-broadened lifetime trace (peak 1).

    ``background=None`` uses ``model.background``.
    """
    b = model.background if background is None else background
    ideal = ideal_lifetime(model, tau, settings.strip_hamiltonian_drive)
    return ExperimentTrace(LT, tau, apply_instrument(ideal, tau, LT, settings.irf_fwhm, b))


def g2_trace(model, tau, settings=SimulationSettings(), background=None):
    """Simulated, instrument-broadened g2 trace (long-delay level 1)."""
    b = model.background if background is None else background
    ideal = ideal_g2(model, tau)
    return ExperimentTrace(G2, tau, apply_instrument(ideal, tau, G2, settings.irf_fwhm, b))


def simulate_values(model, kind, tau, settings=SimulationSettings(), background=None):
    """Like :func:`simulate` but returns the bare value array (no grid checks)."""
    b = model.background if background is None else background
    if kind == LT:
        ideal = ideal_lifetime(model, tau, settings.strip_hamiltonian_drive)
    elif kind == G2:
        ideal = ideal_g2(model, tau)
    else:
        raise ValueError(f"unknown experiment kind {kind!r}")
    return apply_instrument(ideal, tau, kind, settings.irf_fwhm, b)


def simulate(model, kind, tau, settings=SimulationSettings(), background=None):
    if kind == LT:
        return lifetime_trace(model, tau, settings, background)
    if kind == G2:
        return g2_trace(model, tau, settings, background)
    raise ValueError(f"unknown experiment kind {kind!r}")


# --- weights and likelihood ---------------------------------------------------

def weight_lt(values, tau):
    """``|dy/dtau| / sum(y)``; uniform ``1/n`` when that is identically zero."""
    y = np.asarray(values, dtype=float)
    grad = np.abs(np.gradient(y, np.asarray(tau, dtype=float)))
    total = y.sum()
    if total <= 0 or not np.any(grad > 0):
        return np.full(y.shape, 1.0 / y.size)
    return grad / total


def weight_g2(tau, width=1.0):
    """Gaussian emphasis of the region around zero delay."""
    if not width > 0:
        raise ValueError("g2 weight width must be > 0")
    tau = np.asarray(tau, dtype=float)
    return np.exp(-0.5 * (tau / width) ** 2)


def attach_weights(traces, g2_width=1.0, multipliers=None):
    """Return copies of the data traces carrying their likelihood weights."""
    multipliers = multipliers or {}
    out = []
    for tr in traces:
        w = weight_lt(tr.values, tr.tau) if tr.kind == LT else weight_g2(tr.tau, g2_width)
        out.append(tr.with_weights(w * multipliers.get(tr.kind, 1.0)))
    return out


def residuals(model, data, settings=SimulationSettings()):
    """Simulated minus measured values for each data trace."""
    return [simulate_values(model, tr.kind, tr.tau, settings) - tr.values for tr in data]


def weighted_sse(model, data, settings=SimulationSettings()):
    """``sum_tau w (y_sim - y)^2`` per experiment; raises on unphysical models."""
    out = np.empty(len(data))
    for k, (tr, dy) in enumerate(zip(data, residuals(model, data, settings))):
        w = tr.weights if tr.weights is not None else np.ones_like(dy)
        out[k] = np.dot(w, dy * dy)
    return out


def log_likelihood(model, data, beta, settings=SimulationSettings()):
    """``sum_k -beta_k/2 * sum_tau w_k dy_k^2``; ``-inf`` if simulation fails."""
    beta = np.asarray(beta, dtype=float)
    for tr in data:
        if tr.weights is None:
            raise ValueError(f"{tr.kind} trace has no weights; see attach_weights")
    try:
        sse = weighted_sse(model, data, settings)
    except (UnphysicalModelError, SteadyStateError):
        return -math.inf
    return float(-0.5 * np.dot(beta, sse))


def gibbs_update_beta(dy, weights, a, b, rng):
    """Draw a noise precision from its conjugate Gamma posterior."""
    dy = np.asarray(dy, dtype=float)
    shape = a + 0.5 * dy.size
    rate = b + 0.5 * np.dot(weights, dy * dy)
    return rng.gamma(shape, 1.0 / rate)


def default_beta_prior(trace, poisson_scale, boost=None):
    """Gamma ``(shape, rate)`` centred on the shot-noise precision.

    The mean is the reciprocal of the average Poisson variance of a trace
    normalized by ``poisson_scale`` counts; G2 gets a 1.25x boost by default.
    The variance equals the squared mean, i.e. a broad prior with shape 1.
    """
    if boost is None:
        boost = 1.25 if trace.kind == G2 else 1.0
    var = max(float(np.mean(trace.values)), 1e-12) / poisson_scale
    m = boost / var
    return gamma_from_moments(m, m * m)


# --- synthetic data -----------------------------------------------------------

def synth_data(model, noise, grids, rng, settings=None):
    """Poisson-sampled traces.

    ``grids`` maps an experiment kind to its delay grid.  Ideal traces are
    scaled so that their maximum is ``noise.poisson_scale`` expected counts,
    sampled, and divided by the expected count of the normalization level.
    """
    if settings is None:
        settings = SimulationSettings(irf_fwhm=noise.irf_fwhm)
    out = []
    for kind, tau in grids.items():
        ideal = simulate(model, kind, tau, settings, background=noise.background).values
        scale = noise.poisson_scale / ideal.max()
        counts = rng.poisson(ideal * scale)
        out.append(ExperimentTrace(kind, tau, counts / scale, counts=counts))
    return out


# --- delimited text I/O -------------------------------------------------------

class DataFormatError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = path, line


def read_counts(path):
    """Read a two-column (tau_ns, counts) file; header and ``#`` comments optional."""
    taus, counts = [], []
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise DataFormatError(path, n, f"expected 2 columns, got {len(parts)}")
            try:
                t, c = float(parts[0]), float(parts[1])
            except ValueError:
                if not taus:
                    continue  # header line
                raise DataFormatError(path, n, f"non-numeric entry {line!r}") from None
            if not (math.isfinite(t) and math.isfinite(c)) or c < 0:
                raise DataFormatError(path, n, "values must be finite, counts >= 0")
            taus.append(t)
            counts.append(c)
    if len(taus) < 2:
        raise DataFormatError(path, 0, "file holds fewer than two data rows")
    return np.array(taus), np.array(counts)


def rebin(tau_src, counts_src, tau_dst):
    """Aggregate counts into the bins of a uniform target grid."""
    tau_dst = np.asarray(tau_dst, dtype=float)
    dt = (tau_dst[-1] - tau_dst[0]) / (len(tau_dst) - 1)
    edges = np.append(tau_dst - dt / 2, tau_dst[-1] + dt / 2)
    hist, _ = np.histogram(tau_src, bins=edges, weights=counts_src)
    return hist


def normalize_counts(kind, tau, counts):
    """LT: divide by the peak of a 5-point running mean.  G2: divide by the
    mean of the 5% of points at the largest |tau|."""
    counts = np.asarray(counts, dtype=float)
    if kind == LT:
        smooth = np.convolve(counts, np.ones(5) / 5, mode="same")
        ref = smooth.max()
    else:
        n_tail = max(2, int(round(0.05 * counts.size)))
        ref = counts[np.argsort(-np.abs(tau), kind="stable")[:n_tail]].mean()
    if not ref > 0:
        raise ValueError(f"{kind} trace has no counts to normalize by")
    return counts / ref


def load_trace(path, kind, tau_grid=None):
    """Ingest a counts file as a normalized :class:`ExperimentTrace`.

    When ``tau_grid`` is given and differs from the file's grid, the counts
    are rebinned onto it first.
    """
    tau, counts = read_counts(path)
    if tau_grid is not None:
        tau_grid = np.asarray(tau_grid, dtype=float)
        if tau.shape != tau_grid.shape or np.abs(tau - tau_grid).max() > 1e-9:
            counts = rebin(tau, counts, tau_grid)
            tau = tau_grid
    try:
        check_grid(tau, kind)
        values = normalize_counts(kind, tau, counts)
        return ExperimentTrace(kind, tau, values, counts=counts)
    except ValueError as err:
        raise DataFormatError(path, 0, str(err)) from err


def write_trace(path, trace):
    """Write ``tau_ns<TAB>counts`` (raw counts when present, else values)."""
    col = trace.counts if trace.counts is not None else trace.values
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("tau_ns\tcounts\n")
        for t, c in zip(trace.tau, col):
            c = int(c) if trace.counts is not None and float(c).is_integer() else repr(float(c))
            fh.write(f"{float(t)!r}\t{c}\n")
