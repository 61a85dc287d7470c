"""Master-equation models, their priors, presets and text serialization."""

import math
from dataclasses import dataclass, field

import numpy as np

from .library import BasisTerm, ProcessOperator, operator_from_label

RATE_FLOOR = 1e-12  # GHz; Gamma densities with shape < 1 are evaluated here at 0


@dataclass(frozen=True)
class Model:
    """A master equation: Hamiltonian terms with energies, jump operators
    with rates, and a background level (fraction of normalized amplitude).

    ``hamiltonian`` and ``lindblad`` are tuples of ``(ProcessOperator, rate)``.
    """

    dim: int
    hamiltonian: tuple = ()
    lindblad: tuple = ()
    background: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hamiltonian", tuple((op, float(r)) for op, r in self.hamiltonian))
        object.__setattr__(self, "lindblad", tuple((op, float(r)) for op, r in self.lindblad))
        object.__setattr__(self, "background", float(self.background))
        for kind, procs in (("Hamiltonian", self.hamiltonian), ("Lindblad", self.lindblad)):
            ops = [op for op, _ in procs]
            if len(set(ops)) != len(ops):
                raise ValueError(f"duplicate {kind} process")
            for op, rate in procs:
                if op.dim != self.dim:
                    raise ValueError(f"{kind} process {op.label} has dim {op.dim}, model has {self.dim}")
                if not rate >= 0:
                    raise ValueError(f"{kind} rate for {op.label} must be >= 0, got {rate}")
        for op, _ in self.hamiltonian:
            if not op.hermitian:
                raise ValueError(f"Hamiltonian process {op.label} is not Hermitian")
        if not self.background >= 0:
            raise ValueError(f"background must be >= 0, got {self.background}")

    @property
    def n_h(self):
        return len(self.hamiltonian)

    @property
    def n_l(self):
        return len(self.lindblad)

    @property
    def n_c(self):
        """Total number of basis terms across the Lindblad processes."""
        return sum(op.n_terms for op, _ in self.lindblad)

    def rates(self):
        """All generalized rates: energies, then Lindblad rates, then background."""
        return np.array([r for _, r in self.hamiltonian] + [r for _, r in self.lindblad]
                        + [self.background])

    def rate_labels(self):
        return ([f"{op.label}^H" for op, _ in self.hamiltonian]
                + [f"{op.label}^L" for op, _ in self.lindblad] + ["background"])

    def with_rates(self, rates):
        """Copy with rates replaced, in :meth:`rates` order."""
        rates = list(rates)
        nh, nl = self.n_h, self.n_l
        if len(rates) != nh + nl + 1:
            raise ValueError(f"expected {nh + nl + 1} rates, got {len(rates)}")
        return Model(self.dim,
                     tuple((op, r) for (op, _), r in zip(self.hamiltonian, rates[:nh])),
                     tuple((op, r) for (op, _), r in zip(self.lindblad, rates[nh:nh + nl])),
                     rates[-1])

    @property
    def signature(self):
        return canonical_signature(self)


def canonical_signature(model):
    """Rate-independent, order-independent key for a model's structure."""
    h = ", ".join(sorted(op.label for op, _ in model.hamiltonian))
    ll = ", ".join(sorted(op.label for op, _ in model.lindblad))
    return f"H[{h}] L[{ll}]"


def parse_signature(signature, d):
    """Inverse of :func:`canonical_signature`: ``(H operators, L operators)``."""
    try:
        h_part, l_part = signature.split("] L[")
        h_body = h_part[h_part.index("H[") + 2:]
        l_body = l_part.rstrip("]")
    except ValueError as err:
        raise ValueError(f"malformed signature {signature!r}") from err
    h = [operator_from_label(s, d) for s in h_body.split(", ") if s]
    ll = [operator_from_label(s, d) for s in l_body.split(", ") if s]
    return h, ll


# --- priors -----------------------------------------------------------------

def gamma_from_moments(mean, var):
    """Shape and rate of the Gamma distribution with given mean and variance."""
    if mean <= 0 or var <= 0:
        raise ValueError("Gamma mean and variance must be positive")
    return mean * mean / var, mean / var


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the structure, rate and noise-precision priors.

    ``beta_priors`` maps an experiment kind (``"LT"``, ``"G2"``) to the
    ``(shape, rate)`` of its Gamma prior; kinds missing from the mapping get
    a default derived from the data (see
    :func:`lindblearn.forward.default_beta_prior`).
    """

    eta_h: float = 2.0
    eta_l: float = 5.0
    eta_c: float = 1.0
    rate_mean: float = 0.6
    rate_sd: float = 12.0
    beta_priors: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("eta_h", "eta_l", "eta_c", "rate_mean", "rate_sd"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for kind, (a, b) in self.beta_priors.items():
            if not (a > 0 and b > 0):
                raise ValueError(f"beta prior for {kind} must have positive parameters")

    @property
    def rate_gamma(self):
        return gamma_from_moments(self.rate_mean, self.rate_sd ** 2)


def _log_binom(n, k):
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def model_prior_log(n_h, n_l, n_c, n_hbar, n_lbar, prior=PriorConfig()):
    """Log structure prior.

    ``-log C(n_hbar, n_h) - log C(n_lbar, n_l) - n_h/eta_h - n_l/eta_l - n_c/eta_c``
    where ``n_hbar``/``n_lbar`` are the sizes of the admissible Hamiltonian
    and Lindblad operator sets.
    """
    if n_h > n_hbar or n_l > n_lbar or min(n_h, n_l, n_c) < 0:
        return -math.inf
    return (-_log_binom(n_hbar, n_h) - _log_binom(n_lbar, n_l)
            - n_h / prior.eta_h - n_l / prior.eta_l - n_c / prior.eta_c)


def model_structure_log_prior(model, library, prior=PriorConfig()):
    return model_prior_log(model.n_h, model.n_l, model.n_c,
                           len(library.hamiltonian_indices), len(library), prior)


def gamma_logpdf(x, shape, rate):
    """Gamma log-density, evaluated at ``RATE_FLOOR`` for ``0 <= x < RATE_FLOOR``."""
    x = np.asarray(x, dtype=float)
    out = ((shape - 1.0) * np.log(np.maximum(x, RATE_FLOOR)) - rate * x
           + shape * math.log(rate) - math.lgamma(shape))
    return np.where(x < 0, -np.inf, out)


def gamma_logpdf_scalar(x, shape, rate):
    """Scalar :func:`gamma_logpdf` (the sampler's hot path)."""
    if not x >= 0:
        return -math.inf
    return ((shape - 1.0) * math.log(max(x, RATE_FLOOR)) - rate * x
            + shape * math.log(rate) - math.lgamma(shape))


def rate_prior_log(rates, prior=PriorConfig()):
    """Sum of independent Gamma log-densities over all rates (incl. background)."""
    a, b = prior.rate_gamma
    total = 0.0
    for x in rates:
        x = float(x)
        if not math.isfinite(x) or x < 0:
            return -math.inf
        total += gamma_logpdf_scalar(x, a, b)
    return total


def sample_rate(rng, prior=PriorConfig(), size=None):
    """Draw from the rate prior; draws below ``RATE_FLOOR`` are clamped to it."""
    a, b = prior.rate_gamma
    return np.maximum(rng.gamma(a, 1.0 / b, size=size), RATE_FLOOR)


# --- presets ----------------------------------------------------------------

# product states of two emitters (first factor = emitter 1) in (g, α, β, e) order
_SITE = {("g", "g"): 0, ("e", "g"): 1, ("g", "e"): 2, ("e", "e"): 3}


def _site_operator(emitter, single):
    """Embed a single-emitter matrix unit |to><from| on one emitter of the pair.

    ``single`` is ``(to, from)`` with levels ``"e"``/``"g"``; the other
    emitter is acted on by the identity.
    """
    to, frm = single
    terms = []
    for other in ("e", "g"):
        if emitter == 1:
            i, j = _SITE[(to, other)], _SITE[(frm, other)]
        else:
            i, j = _SITE[(other, to)], _SITE[(other, frm)]
        terms.append(BasisTerm(4, i, j))
    return ProcessOperator(4, tuple(terms))


def site_lowering(emitter):
    return _site_operator(emitter, ("g", "e"))


def site_raising(emitter):
    return _site_operator(emitter, ("e", "g"))


def site_number(emitter):
    return _site_operator(emitter, ("e", "e"))


def preset_single_emitter(omega=0.5, gamma=1.0, background=0.0):
    """Resonantly driven two-level emitter: σx drive plus σ- decay."""
    sx = operator_from_label("σx", 2)
    sm = operator_from_label("σ-", 2)
    h = ((sx, omega),) if omega > 0 else ()
    return Model(2, h, ((sm, gamma),), background)


def preset_symmetric_two_emitter(gamma, gamma_p, gamma_d, background=0.0):
    """Two identical emitters with decay, incoherent pumping and pure dephasing.

    Jump operators act on the site (product) basis; processes with a zero
    rate are omitted.
    """
    procs = []
    for ops, rate in ((map(site_lowering, (1, 2)), gamma),
                      (map(site_raising, (1, 2)), gamma_p),
                      (map(site_number, (1, 2)), gamma_d)):
        if rate < 0:
            raise ValueError("rates must be >= 0")
        if rate > 0:
            procs.extend((op, rate) for op in ops)
    return Model(4, (), tuple(procs), background)


def preset_independent_emitters(gamma, gamma_p, background=0.0):
    """Two uncoupled, incoherently pumped emitters of equal brightness."""
    return preset_symmetric_two_emitter(gamma, gamma_p, 0.0, background)


# --- serialization ----------------------------------------------------------

def model_to_text(model):
    """Tab-separated record; floats use ``repr`` so the round trip is exact."""
    lines = [f"dim\t{model.dim}", f"background\t{model.background!r}"]
    lines += [f"H\t{op.label}\t{rate!r}" for op, rate in model.hamiltonian]
    lines += [f"L\t{op.label}\t{rate!r}" for op, rate in model.lindblad]
    return "\n".join(lines) + "\n"


def model_from_text(text):
    dim = None
    background = 0.0
    h, ll = [], []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        try:
            if parts[0] == "dim":
                dim = int(parts[1])
            elif parts[0] == "background":
                background = float(parts[1])
            elif parts[0] in ("H", "L"):
                if dim is None:
                    raise ValueError("'dim' must precede processes")
                entry = (operator_from_label(parts[1], dim), float(parts[2]))
                (h if parts[0] == "H" else ll).append(entry)
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except (IndexError, ValueError) as err:
            raise ValueError(f"line {n}: {err}") from err
    if dim is None:
        raise ValueError("model text has no 'dim' record")
    return Model(dim, tuple(h), tuple(ll), background)
