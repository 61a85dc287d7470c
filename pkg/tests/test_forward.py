import numpy as np
import pytest
from oracles import emg, oracle_g2, oracle_lifetime
from conftest import random_emitting_model

from lindblearn.forward import (
    G2,
    LT,
    DataFormatError,
    ExperimentTrace,
    NoiseModel,
    SimulationSettings,
    UnphysicalModelError,
    apply_instrument,
    attach_weights,
    check_grid,
    convolve_irf,
    default_beta_prior,
    g2_grid,
    g2_reference_delay,
    g2_trace,
    gibbs_update_beta,
    ideal_g2,
    ideal_lifetime,
    lifetime_trace,
    load_trace,
    log_likelihood,
    lt_grid,
    read_counts,
    rebin,
    synth_data,
    weight_g2,
    weight_lt,
    write_trace,
)
from lindblearn.model import (
    Model,
    preset_independent_emitters,
    preset_single_emitter,
    preset_symmetric_two_emitter,
)

NO_IRF = SimulationSettings(irf_fwhm=None)


# --- grids and traces -----------------------------------------------------------

def test_grids():
    t = lt_grid(8, 0.025)
    assert t[0] == 0 and t[-1] == pytest.approx(8) and t.size == 321
    g = g2_grid(8, 0.05)
    assert g.size == 321 and g[160] == 0 and np.allclose(g, -g[::-1])
    assert check_grid(t) == pytest.approx(0.025)


@pytest.mark.parametrize("tau,kind", [
    ([0.0], LT), ([0, 2, 1], LT), ([0, 1, 3], LT), ([-1, 0, 1, 2], G2), ([0.5, 1.0], G2),
    ([-1.0, 0.0, 1.0], LT),
])
def test_bad_grids(tau, kind):
    with pytest.raises(ValueError):
        check_grid(np.array(tau, float), kind)


def test_trace_validation():
    tau = lt_grid(1, 0.1)
    with pytest.raises(ValueError):
        ExperimentTrace(LT, tau, -np.ones_like(tau))
    with pytest.raises(ValueError):
        ExperimentTrace(LT, tau, np.full(tau.size, np.nan))
    with pytest.raises(ValueError):
        ExperimentTrace("XX", tau, np.ones_like(tau))
    with pytest.raises(ValueError):
        ExperimentTrace(LT, tau, np.ones_like(tau), weights=-np.ones_like(tau))


# --- lifetime -----------------------------------------------------------------------

def test_lifetime_single_decay_is_exponential(lib2):
    tau = lt_grid(8, 0.025)
    m = Model(2, (), ((lib2.by_label("σ-"), 1.0),))
    assert np.abs(lifetime_trace(m, tau, NO_IRF).values - np.exp(-tau)).max() < 1e-10
    # the driven preset decays the same way once the drive is switched off
    m2 = preset_single_emitter(0.5, 1.3)
    assert np.abs(lifetime_trace(m2, tau, NO_IRF).values - np.exp(-1.3 * tau)).max() < 1e-10


def test_lifetime_strips_excitation(lib2):
    tau = lt_grid(5, 0.05)
    sm, sp, sx = (lib2.by_label(x) for x in ("σ-", "σ+", "σx"))
    full = Model(2, ((sx, 0.8),), ((sm, 1.0), (sp, 0.4)))
    stripped = Model(2, (), ((sm, 1.0),))
    assert np.array_equal(ideal_lifetime(full, tau), ideal_lifetime(stripped, tau))
    # keeping the drive changes the trace
    kept = ideal_lifetime(full, tau, strip_hamiltonian_drive=False)
    assert np.abs(kept - ideal_lifetime(stripped, tau)).max() > 1e-3
    assert np.allclose(kept, ideal_lifetime(Model(2, ((sx, 0.8),), ((sm, 1.0),)), tau, False))


def test_lifetime_without_emission_is_flat(lib2):
    tau = lt_grid(2, 0.1)
    m = Model(2, (), ((lib2.by_label("σe + σ-"), 1.0),), 0.05)
    assert np.all(ideal_lifetime(m, tau) == 0)
    assert np.allclose(lifetime_trace(m, tau, NO_IRF).values, 1.0)


def test_lifetime_background_floor():
    tau = lt_grid(8, 0.025)
    vals = lifetime_trace(preset_single_emitter(0.5, 1.0, 0.1), tau).values
    assert vals.max() == pytest.approx(1.0)
    assert vals.min() >= 0.1 / 1.1 - 1e-12


def test_lifetime_matches_rk4_oracle(lib4):
    rng = np.random.default_rng(11)
    tau = lt_grid(4, 0.1)
    for _ in range(5):
        m = random_emitting_model(rng, lib4)
        got = ideal_lifetime(m, tau)
        assert np.abs(got - oracle_lifetime(m, tau)).max() < 1e-5


# --- g2 -------------------------------------------------------------------------------

def test_g2_driven_two_level_limits():
    tau = g2_grid(5, 0.05)
    g = ideal_g2(preset_single_emitter(0.5, 1.0), tau)
    assert abs(g[tau.size // 2]) < 1e-8
    assert g[-1] == pytest.approx(1.0, abs=1e-3) and g[0] == g[-1]
    assert np.allclose(g, g[::-1])


def test_g2_independent_emitters_half():
    tau = g2_grid(8, 0.05)
    g = ideal_g2(preset_independent_emitters(1.0, 1.0), tau)
    assert abs(g[tau.size // 2] - 0.5) < 1e-6
    assert abs(g[-1] - 1.0) < 1e-3


def test_g2_reference_normalization(lib4):
    tau = g2_grid(8, 0.05)
    assert g2_reference_delay(tau) == pytest.approx(7.2)
    assert g2_reference_delay(g2_grid(3, 0.05)) == 5.0
    m = preset_symmetric_two_emitter(1.0, 0.3, 0.2)
    t = np.array([-7.2, 0.0, 7.2])
    g = ideal_g2(m, t, tau_ref=7.2)
    assert g[0] == g[2] == pytest.approx(1.0, abs=1e-14)


def test_g2_matches_rk4_oracle(lib4):
    rng = np.random.default_rng(12)
    tau = g2_grid(6, 0.1)
    for _ in range(5):
        m = random_emitting_model(rng, lib4)
        got = ideal_g2(m, tau)
        ref = oracle_g2(m, tau, g2_reference_delay(tau))
        assert np.abs(got - ref).max() < 1e-5


def test_g2_requires_emission(lib2):
    tau = g2_grid(2, 0.1)
    with pytest.raises(UnphysicalModelError):
        ideal_g2(Model(2, (), ((lib2.by_label("σ+"), 1.0),)), tau)
    # decay only: the steady state is dark, so nothing is emitted
    with pytest.raises(UnphysicalModelError):
        ideal_g2(Model(2, (), ((lib2.by_label("σ-"), 1.0),)), tau)


def test_g2_background_lifts_dip():
    tau = g2_grid(8, 0.05)
    ideal = ideal_g2(preset_single_emitter(), tau)
    y = apply_instrument(ideal, tau, G2, None, background=0.25)
    assert y[tau.size // 2] == pytest.approx(0.25 / 1.25, abs=1e-8)
    tr = g2_trace(preset_single_emitter(0.5, 1.0, 0.0), tau)
    assert tr.values[tau.size // 2] > 0  # IRF fills the dip


# --- instrument -----------------------------------------------------------------------

def test_irf_delta_and_constant():
    tau = g2_grid(4, 0.01)
    spike = np.zeros_like(tau)
    spike[tau.size // 2] = 1.0
    out = convolve_irf(spike, tau, 0.24)
    sigma = 0.24 / (2 * np.sqrt(2 * np.log(2)))
    ref = 0.01 * np.exp(-0.5 * (tau / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.abs(out - ref).max() < 1e-3 * ref.max()
    half = tau[out >= out.max() / 2]
    assert half[-1] - half[0] == pytest.approx(0.24, abs=0.011)
    assert np.abs(convolve_irf(np.full(200, 3.0), lt_grid(1.99, 0.01)) - 3.0).max() < 1e-10


def test_irf_on_exponential_matches_emg():
    dt = 0.005
    tau = np.arange(-2000, 2001) * dt
    y = np.where(tau >= 0, np.exp(-np.clip(tau, 0, None)), 0.0)
    y[tau == 0] = 0.5  # midpoint rule at the step
    out = convolve_irf(y, tau, 0.24)
    sigma = 0.24 / (2 * np.sqrt(2 * np.log(2)))
    inner = np.abs(tau) < 6
    assert np.abs(out - emg(tau, 1.0, sigma))[inner].max() < 1e-4


# --- weights and likelihood -------------------------------------------------------------

def test_lt_weights():
    tau = np.arange(501) * 0.01
    y = np.exp(-tau)
    w = weight_lt(y, tau)
    ratio = w[1:-1] / np.exp(-tau[1:-1])
    assert np.all(w >= 0)
    assert np.ptp(ratio) / ratio.mean() < 1e-3
    assert np.allclose(weight_lt(np.ones(10), np.arange(10.0)), 0.1)


def test_g2_weights():
    tau = g2_grid(3, 0.5)
    w = weight_g2(tau, 1.0)
    assert w[tau.size // 2] == 1.0
    assert weight_g2(np.array([1.0]), 1.0)[0] == pytest.approx(np.exp(-0.5))
    assert np.array_equal(w, w[::-1])
    with pytest.raises(ValueError):
        weight_g2(tau, 0.0)


def _trace(values, kind=LT, weights=None):
    tau = lt_grid(len(values) - 1, 1.0) if kind == LT else g2_grid((len(values) - 1) // 2, 1.0)
    return ExperimentTrace(kind, tau, np.asarray(values, float), weights)


def test_log_likelihood_arithmetic(lib2):
    m = Model(2, (), ((lib2.by_label("σ-"), 1.0),))
    tau = lt_grid(2, 1.0)
    sim = lifetime_trace(m, tau).values
    data = ExperimentTrace(LT, tau, sim - np.array([0.1, 0.0, -0.1]), np.ones(3))
    assert log_likelihood(m, [data], [2.0]) == pytest.approx(-0.02, abs=1e-12)
    assert log_likelihood(m, [data], [4.0]) == pytest.approx(-0.04, abs=1e-12)
    exact = ExperimentTrace(LT, tau, sim, np.ones(3))
    assert log_likelihood(m, [exact], [2.0]) == 0.0
    with pytest.raises(ValueError):
        log_likelihood(m, [ExperimentTrace(LT, tau, sim)], [1.0])


def test_log_likelihood_unphysical_is_minus_inf(lib2):
    tau = g2_grid(2, 0.5)
    data = attach_weights([ExperimentTrace(G2, tau, np.ones_like(tau))])
    m = Model(2, (), ((lib2.by_label("σ-"), 1.0),))
    assert log_likelihood(m, data, [1.0]) == -np.inf


def test_gibbs_beta_conjugacy():
    rng = np.random.default_rng(0)
    draws = np.array([gibbs_update_beta(np.zeros(2), np.ones(2), 1.0, 1.0, rng)
                      for _ in range(100_000)])
    assert abs(draws.mean() - 2.0) < 0.05
    small = [gibbs_update_beta(np.full(50, 0.01), np.ones(50), 1, 1, rng) for _ in range(2000)]
    large = [gibbs_update_beta(np.full(50, 0.1), np.ones(50), 1, 1, rng) for _ in range(2000)]
    assert np.median(large) < np.median(small)
    a = gibbs_update_beta(np.ones(3), np.ones(3), 1, 1, np.random.default_rng(5))
    b = gibbs_update_beta(np.ones(3), np.ones(3), 1, 1, np.random.default_rng(5))
    assert a == b


def test_default_beta_prior():
    tr = _trace([1.0, 0.5, 0.25, 0.25])
    a, b = default_beta_prior(tr, 1e4)
    assert a == pytest.approx(1.0)
    assert a / b == pytest.approx(1e4 / 0.5)
    g = _trace([1.0, 0.5, 1.0], G2)
    a2, b2 = default_beta_prior(g, 1e4)
    assert a2 / b2 == pytest.approx(1.25 * 1e4 / (2.5 / 3))


# --- synthetic data ------------------------------------------------------------------------

def test_synth_data_properties():
    m = preset_single_emitter(0.5, 1.0, 0.02)
    grids = {LT: lt_grid(), G2: g2_grid()}
    a = synth_data(m, NoiseModel(), grids, np.random.default_rng(3))
    b = synth_data(m, NoiseModel(), grids, np.random.default_rng(3))
    for x, y in zip(a, b):
        assert np.array_equal(x.values, y.values) and np.all(x.counts >= 0)
    big = synth_data(m, NoiseModel(poisson_scale=1e7), grids, np.random.default_rng(4))
    for tr in big:
        ideal = lifetime_trace(m, tr.tau) if tr.kind == LT else g2_trace(m, tr.tau)
        assert np.abs(tr.values - ideal.values).max() < 1e-2


# --- I/O ---------------------------------------------------------------------------------

def test_trace_file_round_trip(tmp_path):
    m = preset_single_emitter(0.5, 1.0, 0.02)
    grids = {LT: lt_grid(), G2: g2_grid()}
    for tr in synth_data(m, NoiseModel(), grids, np.random.default_rng(8)):
        path = tmp_path / f"{tr.kind}.tsv"
        write_trace(path, tr)
        back = load_trace(path, tr.kind, tr.tau)
        assert np.array_equal(back.counts, tr.counts)
        assert np.array_equal(back.tau, tr.tau)


def test_read_counts_errors(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("tau\tcounts\n0.0\t5\n0.1\tx\n")
    with pytest.raises(DataFormatError, match=":3:"):
        read_counts(p)
    p.write_text("0.0\t5\n0.1\t1\t2\n")
    with pytest.raises(DataFormatError, match=":2:"):
        read_counts(p)
    p.write_text("")
    with pytest.raises(DataFormatError):
        read_counts(p)
    p.write_text("# comment\n0.0, 4\n0.1, -1\n")
    with pytest.raises(DataFormatError, match=":3:"):
        read_counts(p)


def test_rebin_conserves_counts(tmp_path):
    fine = np.arange(800) * 0.01
    counts = np.random.default_rng(0).poisson(100 * np.exp(-fine))
    coarse = lt_grid(7.95, 0.05)
    out = rebin(fine, counts, coarse)
    assert out.sum() == counts[fine < 7.975].sum()
    p = tmp_path / "fine.tsv"
    p.write_text("".join(f"{float(t)!r}\t{int(c)}\n" for t, c in zip(fine, counts)))
    tr = load_trace(p, LT, coarse)
    assert tr.tau.size == coarse.size and tr.values.max() <= 1.2
