"""Reversible-jump MCMC over master-equation structures and rates.

A chain state is a model plus one noise precision per experiment.  Each
step draws a move kind from the move table, proposes a candidate, applies
the Metropolis-Hastings-Green test and then Gibbs-samples the precisions.

Births draw the new rate from the rate prior, so the dimension-matching
Jacobian is one and the new rate's prior density cancels against its
proposal density.  Move kinds that cannot be applied in the current state
are redrawn (up to ``MAX_MOVE_TRIES`` times); the resulting state-dependent
selection probabilities enter the proposal ratio exactly.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .engine import SteadyStateError
from .forward import UnphysicalModelError, default_beta_prior, gibbs_update_beta, residuals
from .forward import SimulationSettings
from .model import (
    Model,
    PriorConfig,
    canonical_signature,
    gamma_logpdf_scalar,
    model_structure_log_prior,
    rate_prior_log,
    sample_rate,
)

RATE = "RATE"
BIRTH_H, DEATH_H, SWAP_H = "BIRTH[H]", "DEATH[H]", "SWAP[H]"
BIRTH_L, DEATH_L, SWAP_L = "BIRTH[L]", "DEATH[L]", "SWAP[L]"
BIRTH_LC, DEATH_LC, SWAP_LC = "BIRTH[L*]", "DEATH[L*]", "SWAP[L*]"
MOVE_KINDS = (RATE, BIRTH_H, DEATH_H, SWAP_H, BIRTH_L, DEATH_L, SWAP_L,
              BIRTH_LC, DEATH_LC, SWAP_LC)
BIRTH_KINDS = (BIRTH_H, BIRTH_L, BIRTH_LC)
MAX_MOVE_TRIES = 10

DEFAULT_MOVE_PROBS = {
    RATE: 0.40, BIRTH_H: 0.04, DEATH_H: 0.04, SWAP_H: 0.08,
    BIRTH_L: 0.08, DEATH_L: 0.08, SWAP_L: 0.16,
    BIRTH_LC: 0.04, DEATH_LC: 0.04, SWAP_LC: 0.04,
}


@dataclass(frozen=True)
class MoveTable:
    probs: dict = field(default_factory=lambda: dict(DEFAULT_MOVE_PROBS))

    def __post_init__(self):
        probs = {k: float(self.probs.get(k, 0.0)) for k in MOVE_KINDS}
        unknown = set(self.probs) - set(MOVE_KINDS)
        if unknown:
            raise ValueError(f"unknown move kinds: {sorted(unknown)}")
        if any(p < 0 for p in probs.values()):
            raise ValueError("move probabilities must be >= 0")
        if abs(sum(probs.values()) - 1.0) > 1e-12:
            raise ValueError(f"move probabilities sum to {sum(probs.values())}, not 1")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def rate_only(cls):
        return cls({RATE: 1.0})

    def vector(self):
        return np.array([self.probs[k] for k in MOVE_KINDS])


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 100_000
    proposal_variance: float = 0.3
    burn_in: float = 0.2
    thinning: int = 10
    seed: int = 0
    moves: MoveTable = field(default_factory=MoveTable)
    n_start: int = 2
    rate_scales: int = 4
    anneal_start: float = 1e-3
    anneal_fraction: float = 0.5

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not self.proposal_variance > 0:
            raise ValueError("proposal_variance must be > 0")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.n_start < 0:
            raise ValueError("n_start must be >= 0")
        if self.rate_scales < 1:
            raise ValueError("rate_scales must be >= 1")
        if not 0 < self.anneal_start <= 1:
            raise ValueError("anneal_start must lie in (0, 1]")
        if not 0 <= self.anneal_fraction <= 1:
            raise ValueError("anneal_fraction must lie in [0, 1]")

    def temperature(self, step):
        """Likelihood power used at ``step`` (1-based).

        Rises geometrically from ``anneal_start`` to 1 over the first
        ``anneal_fraction`` of the burn-in; every kept sample uses power 1.
        """
        n = math.floor(self.anneal_fraction * math.ceil(self.burn_in * self.steps))
        if self.anneal_start >= 1 or step > n:
            return 1.0
        return self.anneal_start ** (1.0 - (step - 1) / n)

    @property
    def rate_step_sds(self):
        """Step sizes of the RATE kernel: sqrt(proposal_variance) and
        ``rate_scales - 1`` successive tenths of it."""
        sd = math.sqrt(self.proposal_variance)
        return tuple(sd * 10.0 ** -j for j in range(self.rate_scales))

    def snapshot(self):
        d = asdict(self)
        d["moves"] = dict(self.moves.probs)
        return d


# --- targets ------------------------------------------------------------------

class FlatLikelihood:
    """Constant likelihood; the chain then samples the prior."""

    kinds = ()
    n_points = np.zeros(0)

    def sse(self, model):
        return np.zeros(0)

    def default_beta_priors(self):
        return {}


class TraceLikelihood:
    """Weighted least-squares likelihood of LT/G2 data.

    ``data`` traces must carry weights (see
    :func:`lindblearn.forward.attach_weights`).
    """

    def __init__(self, data, settings=SimulationSettings(), poisson_scale=1e4):
        for tr in data:
            if tr.weights is None:
                raise ValueError(f"{tr.kind} trace has no weights")
        self.data = list(data)
        self.settings = settings
        self.poisson_scale = poisson_scale
        self.kinds = tuple(tr.kind for tr in self.data)
        self.n_points = np.array([tr.tau.size for tr in self.data], dtype=float)

    def sse(self, model):
        """Weighted squared residuals per experiment, or None if unphysical."""
        try:
            res = residuals(model, self.data, self.settings)
        except (UnphysicalModelError, SteadyStateError):
            return None
        return np.array([np.dot(tr.weights, r * r) for tr, r in zip(self.data, res)])

    def residuals(self, model):
        return residuals(model, self.data, self.settings)

    def default_beta_priors(self):
        """Shot-noise-calibrated precision priors.

        A trace carrying raw counts uses its own counts-per-unit scale;
        otherwise ``poisson_scale`` is assumed.
        """
        out = {}
        for tr in self.data:
            scale = self.poisson_scale
            if tr.counts is not None and tr.values.sum() > 0:
                scale = float(np.sum(tr.counts) / np.sum(tr.values))
            out[tr.kind] = default_beta_prior(tr, scale)
        return out


@dataclass(frozen=True)
class ChainState:
    model: Model
    beta: np.ndarray
    log_posterior: float
    step_index: int = 0
    log_prior: float = 0.0
    sse: np.ndarray = None
    model_prior: float = None


@dataclass
class ChainRecord:
    """Thinned post-burn-in samples and move statistics of one chain.

    Each sample is a dict with keys ``step``, ``signature``, ``H``, ``L``
    (lists of ``[label, rate]``), ``background``, ``beta`` and
    ``log_posterior``.
    """

    dim: int
    seed: int
    config: dict
    samples: list = field(default_factory=list)
    proposed: dict = field(default_factory=dict)
    accepted: dict = field(default_factory=dict)
    aborted: int = 0
    kinds: tuple = ()

    def signatures(self):
        return [s["signature"] for s in self.samples]

    def models(self, library=None):
        return [sample_to_model(s, self.dim, library) for s in self.samples]

    def acceptance_rates(self):
        return {k: (self.accepted.get(k, 0) / n if n else 0.0) for k, n in self.proposed.items()}

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["kinds"] = tuple(d.get("kinds", ()))
        return cls(**d)


def sample_to_model(sample, dim, library=None):
    from .library import operator_from_label

    def op(label):
        return library.by_label(label) if library is not None else operator_from_label(label, dim)

    return Model(dim, tuple((op(lb), r) for lb, r in sample["H"]),
                 tuple((op(lb), r) for lb, r in sample["L"]), sample["background"])


def _sample_dict(state):
    m = state.model
    return {
        "step": state.step_index,
        "signature": canonical_signature(m),
        "H": [[op.label, r] for op, r in m.hamiltonian],
        "L": [[op.label, r] for op, r in m.lindblad],
        "background": m.background,
        "beta": [float(b) for b in state.beta],
        "log_posterior": state.log_posterior,
    }


# --- the sampler ----------------------------------------------------------------

class Sampler:
    """Reversible-jump sampler bound to a library, target and priors."""

    def __init__(self, library, likelihood=None, prior=PriorConfig(), config=SamplerConfig()):
        self.library = library
        self.likelihood = likelihood if likelihood is not None else FlatLikelihood()
        self.prior = prior
        self.config = config
        self.table = config.moves
        self._pvec = self.table.vector()
        self._power = 1.0  # likelihood power; below 1 only during annealed burn-in
        self._pcum = np.cumsum(self._pvec)
        self.h_pool = library.hamiltonian_indices
        self.n_hbar = len(self.h_pool)
        self.n_lbar = len(library)
        defaults = self.likelihood.default_beta_priors()
        self.beta_priors = [prior.beta_priors.get(k, defaults.get(k)) for k in self.likelihood.kinds]
        self._rate_gamma = prior.rate_gamma

    # -- densities --

    def model_log_prior(self, model):
        """Structure prior plus rate priors (everything but the precisions)."""
        return (model_structure_log_prior(model, self.library, self.prior)
                + rate_prior_log(model.rates(), self.prior))

    def beta_log_prior(self, beta):
        return sum(gamma_logpdf_scalar(float(b), a_k, b_k)
                   for b, (a_k, b_k) in zip(beta, self.beta_priors))

    def log_prior(self, model, beta):
        return self.model_log_prior(model) + self.beta_log_prior(beta)

    def _log_lik(self, sse, beta):
        if sse is None:
            return -math.inf
        return sum(0.5 * n * math.log(b) - 0.5 * b * e
                   for n, b, e in zip(self.likelihood.n_points, beta, sse))

    def evaluate(self, model, beta, step_index=0, sse=None, model_prior=None):
        """Build a :class:`ChainState`, simulating unless ``sse`` is supplied.

        The stored log posterior is the full joint density (up to a
        constant): Gaussian likelihood including its precision normalizer,
        structure prior, rate priors and precision priors.
        """
        if sse is None:
            sse = self.likelihood.sse(model)
        if model_prior is None:
            model_prior = self.model_log_prior(model)
        lprior = model_prior + self.beta_log_prior(beta)
        return ChainState(model, np.asarray(beta, dtype=float), lprior + self._log_lik(sse, beta),
                          step_index, lprior, sse, model_prior)

    def _rate_logpdf(self, x):
        a, b = self._rate_gamma
        return gamma_logpdf_scalar(float(x), a, b)

    # -- structure bookkeeping --

    def _indices(self, model):
        idx = self.library.index
        return [idx(op) for op, _ in model.hamiltonian], [idx(op) for op, _ in model.lindblad]

    def _conj_sets(self, l_idx):
        """(A, P, Q): Lindblad indices whose adjoint is absent, adjoint pairs
        present, and library adjoint pairs entirely absent."""
        adj = self.library.adjoint_index
        present = set(l_idx)
        A = [i for i in l_idx if adj[i] is not None and adj[i] != i and adj[i] not in present]
        P, Q = [], []
        for i, j in self.library.conjugate_pairs:
            if i in present and j in present:
                P.append((i, j))
            elif i not in present and j not in present:
                Q.append((i, j))
        return A, P, Q

    def _applicable(self, h_idx, l_idx):
        nh, nl = len(h_idx), len(l_idx)
        uh, ul = self.n_hbar - nh, self.n_lbar - nl
        A, P, Q = self._conj_sets(l_idx)
        ok = np.array([
            True, uh > 0, nh > 0, nh > 0 and uh > 0,
            ul > 0, nl > 0, nl > 0 and ul > 0,
            len(A) > 0, len(P) > 0, len(P) > 0 and len(Q) > 0,
        ])
        return ok, (A, P, Q)

    def _log_selection(self, ok):
        """log of the redraw multiplier (1 - q^T)/(1 - q), q = P(inapplicable kind)."""
        q = float(self._pvec[~ok].sum())
        if q <= 0:
            return 0.0
        return math.log((1.0 - q ** MAX_MOVE_TRIES) / (1.0 - q))

    def choose_move(self, model, rng):
        """Draw an applicable move kind, or None after ``MAX_MOVE_TRIES`` failures."""
        h_idx, l_idx = self._indices(model)
        ok, _ = self._applicable(h_idx, l_idx)
        for _ in range(MAX_MOVE_TRIES):
            k = min(int(np.searchsorted(self._pcum, rng.random(), side="right")), len(MOVE_KINDS) - 1)
            if ok[k]:
                return MOVE_KINDS[k]
        return None

    # -- proposals --

    def propose(self, model, move, rng):
        """Return ``(candidate, log_q)``; ``candidate`` is None when the
        proposal leaves the support (a non-positive rate).

        ``log_q = log P(candidate -> model) - log P(model -> candidate)``
        including move-kind selection probabilities and the proposal
        density of any rate drawn from the prior.
        """
        lib = self.library
        h_idx, l_idx = self._indices(model)
        ok, (A, P, Q) = self._applicable(h_idx, l_idx)
        if not ok[MOVE_KINDS.index(move)]:
            raise ValueError(f"move {move} is not applicable")
        p = self.table.probs
        sel = self._log_selection(ok)
        H, L = list(model.hamiltonian), list(model.lindblad)
        b = model.background

        if move == RATE:
            rates = model.rates()
            i = rng.integers(rates.size)
            # equal-weight scale mixture of centred Gaussians: still symmetric
            sds = self.config.rate_step_sds
            rates[i] += rng.normal(0.0, sds[rng.integers(len(sds))])
            if rates[i] <= 0:
                return None, 0.0
            return model.with_rates(rates), 0.0

        if move in (BIRTH_H, BIRTH_L):
            is_h = move == BIRTH_H
            used = set(h_idx if is_h else l_idx)
            pool = [i for i in (self.h_pool if is_h else range(len(lib))) if i not in used]
            new = pool[rng.integers(len(pool))]
            rate = float(sample_rate(rng, self.prior))
            (H if is_h else L).append((lib[new], rate))
            cand = Model(model.dim, tuple(H), tuple(L), b)
            n_after = len(used) + 1
            reverse = DEATH_H if is_h else DEATH_L
            log_q = (math.log(p[reverse]) + self._log_sel_of(cand) - math.log(n_after)
                     - math.log(p[move]) - sel + math.log(len(pool)) - self._rate_logpdf(rate))
            return cand, log_q

        if move in (DEATH_H, DEATH_L):
            is_h = move == DEATH_H
            procs = H if is_h else L
            j = rng.integers(len(procs))
            _, rate = procs.pop(j)
            cand = Model(model.dim, tuple(H), tuple(L), b)
            pool_after = (self.n_hbar if is_h else self.n_lbar) - len(procs)
            reverse = BIRTH_H if is_h else BIRTH_L
            log_q = (math.log(p[reverse]) + self._log_sel_of(cand) - math.log(pool_after)
                     + self._rate_logpdf(rate) - math.log(p[move]) - sel + math.log(len(procs) + 1))
            return cand, log_q

        if move in (SWAP_H, SWAP_L):
            is_h = move == SWAP_H
            procs = H if is_h else L
            used = set(h_idx if is_h else l_idx)
            pool = [i for i in (self.h_pool if is_h else range(len(lib))) if i not in used]
            j = rng.integers(len(procs))
            new = pool[rng.integers(len(pool))]
            procs[j] = (lib[new], procs[j][1])
            cand = Model(model.dim, tuple(H), tuple(L), b)
            return cand, self._log_sel_of(cand) - sel

        if move == BIRTH_LC:
            src = A[rng.integers(len(A))]
            rate = float(sample_rate(rng, self.prior))
            L.append((lib[lib.adjoint_index[src]], rate))
            cand = Model(model.dim, tuple(H), tuple(L), b)
            n_pairs_after = len(P) + 1
            log_q = (math.log(p[DEATH_LC]) + self._log_sel_of(cand) - math.log(2 * n_pairs_after)
                     - math.log(p[BIRTH_LC]) - sel + math.log(len(A)) - self._rate_logpdf(rate))
            return cand, log_q

        if move == DEATH_LC:
            pair = P[rng.integers(len(P))]
            victim = pair[rng.integers(2)]
            j = l_idx.index(victim)
            _, rate = L.pop(j)
            cand = Model(model.dim, tuple(H), tuple(L), b)
            _, l_after = self._indices(cand)
            a_after, _, _ = self._conj_sets(l_after)
            log_q = (math.log(p[BIRTH_LC]) + self._log_sel_of(cand) - math.log(len(a_after))
                     + self._rate_logpdf(rate)
                     - math.log(p[DEATH_LC]) - sel + math.log(2 * len(P)))
            return cand, log_q

        if move == SWAP_LC:
            old = P[rng.integers(len(P))]
            new = Q[rng.integers(len(Q))]
            pos = {i: n for n, i in enumerate(l_idx)}
            for o, nw in zip(old, new):
                L[pos[o]] = (lib[nw], L[pos[o]][1])
            cand = Model(model.dim, tuple(H), tuple(L), b)
            return cand, self._log_sel_of(cand) - sel

        raise ValueError(f"unknown move {move!r}")

    def _log_sel_of(self, model):
        h_idx, l_idx = self._indices(model)
        ok, _ = self._applicable(h_idx, l_idx)
        return self._log_selection(ok)

    # -- acceptance --

    def accept_reject(self, current, candidate, log_q, rng):
        """Metropolis-Hastings-Green acceptance; returns the next state.

        From a state with finite posterior, a candidate with ``-inf``
        posterior is always rejected.  While the current state itself has
        ``-inf`` posterior (the model cannot produce the observables), every
        candidate inside the prior support is accepted: that region carries
        no posterior mass and is never re-entered, so the free walk only
        speeds up the escape and leaves the stationary distribution intact.
        """
        if current.log_posterior == -math.inf:
            return (candidate, True) if candidate.log_prior > -math.inf else (current, False)
        if candidate.log_posterior == -math.inf:
            return current, False
        log_rho = candidate.log_posterior - current.log_posterior + log_q
        if self._power != 1.0:
            # tempered target: prior + power * likelihood
            log_rho -= (1.0 - self._power) * (
                (candidate.log_posterior - candidate.log_prior)
                - (current.log_posterior - current.log_prior))
        if log_rho >= 0 or rng.random() < math.exp(log_rho):
            return candidate, True
        return current, False

    def gibbs_beta(self, state, rng):
        """Resample every precision from its conjugate posterior."""
        if state.sse is None or len(self.beta_priors) == 0:
            return state
        beta = np.empty(len(self.beta_priors))
        for k, (a_k, b_k) in enumerate(self.beta_priors):
            n = int(self.likelihood.n_points[k])
            t = self._power
            beta[k] = rng.gamma(a_k + 0.5 * t * n, 1.0 / (b_k + 0.5 * t * state.sse[k]))
        return self.evaluate(state.model, beta, state.step_index, state.sse, state.model_prior)

    # -- chains --

    def init_model(self, n_start, rng, dim=None):
        """Empty model plus ``n_start`` random births (rates from the prior)."""
        dim = self.library.dim if dim is None else dim
        model = Model(dim, (), (), float(sample_rate(rng, self.prior)))
        births = [MOVE_KINDS.index(k) for k in BIRTH_KINDS]
        for _ in range(n_start):
            ok, _ = self._applicable(*self._indices(model))
            avail = [k for k in births if ok[k] and self._pvec[k] > 0]
            if not avail:
                break
            w = self._pvec[avail] / self._pvec[avail].sum()
            move = MOVE_KINDS[avail[rng.choice(len(avail), p=w)]]
            model, _ = self.propose(model, move, rng)
        return model

    def initial_state(self, rng, model=None):
        if model is None:
            model = self.init_model(self.config.n_start, rng)
        beta = np.array([rng.gamma(a, 1.0 / b) for a, b in self.beta_priors])
        return self.evaluate(model, beta)

    def run(self, seed=None, initial_model=None):
        """Run one chain and return its :class:`ChainRecord`."""
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        record = ChainRecord(self.library.dim, seed, cfg.snapshot(),
                             proposed={k: 0 for k in MOVE_KINDS},
                             accepted={k: 0 for k in MOVE_KINDS},
                             kinds=tuple(self.likelihood.kinds))
        state = self.initial_state(rng, initial_model)
        if cfg.steps == 0:
            record.samples.append(_sample_dict(state))
            return record
        # states after steps start+thin, start+2*thin, ... are kept
        start = math.ceil(cfg.burn_in * cfg.steps)
        for step in range(1, cfg.steps + 1):
            self._power = cfg.temperature(step)
            state = self.step(state, rng, record)
            if step > start and (step - start) % cfg.thinning == 0:
                record.samples.append(_sample_dict(state))
        self._power = 1.0
        return record

    def step(self, state, rng, record=None):
        move = self.choose_move(state.model, rng)
        if move is None:
            if record is not None:
                record.aborted += 1
            nxt = state
        else:
            cand_model, log_q = self.propose(state.model, move, rng)
            accepted = False
            nxt = state
            if cand_model is not None:
                cand = self.evaluate(cand_model, state.beta)
                nxt, accepted = self.accept_reject(state, cand, log_q, rng)
            if record is not None:
                record.proposed[move] += 1
                record.accepted[move] += int(accepted)
        nxt = self.gibbs_beta(nxt, rng)
        return replace(nxt, step_index=state.step_index + 1)


def run_chain(config, likelihood, library, prior=PriorConfig(), initial_model=None):
    return Sampler(library, likelihood, prior, config).run(initial_model=initial_model)


def _run_one(args):
    config, likelihood, library, prior, seed = args
    return Sampler(library, likelihood, prior, config).run(seed=seed)


def run_parallel(config, n_chains, likelihood, library, prior=PriorConfig(), threads=1):
    """Independent chains seeded ``config.seed + i``, returned in chain order."""
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    jobs = [(config, likelihood, library, prior, config.seed + i) for i in range(n_chains)]
    if threads <= 1 or n_chains == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_one, jobs))


@dataclass
class RateSamples:
    labels: list
    values: np.ndarray  # (n_samples, n_rates)
    beta: np.ndarray  # (n_samples, n_experiments)
    log_posterior: np.ndarray
    acceptance: float

    def mean(self):
        return self.values.mean(axis=0)

    def std(self):
        return self.values.std(axis=0, ddof=1)


def fit_rates(model, config, likelihood, library, prior=PriorConfig()):
    """Rate-only chain on a fixed structure, started from ``model``'s rates.

    The burn-in is not annealed: the chain refines the given rates locally.
    """
    cfg = replace(config, moves=MoveTable.rate_only(), anneal_start=1.0)
    rec = Sampler(library, likelihood, prior, cfg).run(initial_model=model)
    vals = np.array([[r for _, r in s["H"]] + [r for _, r in s["L"]] + [s["background"]]
                     for s in rec.samples])
    return RateSamples(model.rate_labels(), vals,
                       np.array([s["beta"] for s in rec.samples]),
                       np.array([s["log_posterior"] for s in rec.samples]),
                       rec.accepted[RATE] / max(rec.proposed[RATE], 1))
