"""Restricted operator library: equally weighted sums of matrix units.

Level orderings are fixed: ``(e, g)`` for a single two-level emitter and
``(g, α, β, e)`` for the two-emitter "diamond" system.  A basis term
``|to><from|`` is labelled ``σ_{to from}`` for d=4; the d=2 terms carry the
usual names σ+, σ-, σe, σg.
"""

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

from .engine import commutator_superop, dissipator_superop

EMISSION = "monitored_emission"
EXCITATION = "excitation"
DARK = "dark"

LEVELS = {2: ("e", "g"), 4: ("g", "α", "β", "e")}

# dipole-allowed lowering transitions as (to, from) index pairs
_LOWERING = {
    2: frozenset({(1, 0)}),
    4: frozenset({(1, 3), (2, 3), (0, 1), (0, 2)}),
}

_D2_NAMES = {(0, 1): "σ+", (1, 0): "σ-", (0, 0): "σe", (1, 1): "σg"}
_D2_ALIASES = {((0, 1), (1, 0)): "σx", ((0, 0), (1, 1)): "I"}
TERM_SEP = " + "


def _check_dim(d):
    if d not in LEVELS:
        raise ValueError(f"unsupported system dimension {d}; expected 2 or 4")


@dataclass(frozen=True)
class BasisTerm:
    """A matrix unit ``|to><from|``."""

    dim: int
    to_level: int
    from_level: int

    @property
    def label(self):
        if self.dim == 2:
            return _D2_NAMES[(self.to_level, self.from_level)]
        names = LEVELS[self.dim]
        return f"σ_{names[self.to_level]}{names[self.from_level]}"

    @property
    def matrix(self):
        m = np.zeros((self.dim, self.dim), dtype=complex)
        m[self.to_level, self.from_level] = 1.0
        return m

    @property
    def key(self):
        return (self.to_level, self.from_level)


def enumerate_basis(d):
    """All ``d**2`` matrix units, row-major in (to, from)."""
    _check_dim(d)
    return [BasisTerm(d, i, j) for i in range(d) for j in range(d)]


@dataclass(frozen=True, eq=False)
class ProcessOperator:
    """Unit-coefficient sum of distinct basis terms.

    Equality and hashing use the set of terms, so two operators built
    independently from the same terms compare equal.
    """

    dim: int
    terms: tuple
    key: tuple = field(init=False, repr=False)

    def __post_init__(self):
        terms = tuple(sorted(self.terms, key=lambda t: t.key))
        if not terms:
            raise ValueError("a process needs at least one basis term")
        if len({t.key for t in terms}) != len(terms):
            raise ValueError("repeated basis term")
        if any(t.dim != self.dim for t in terms):
            raise ValueError("basis term dimension mismatch")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "key", tuple(t.key for t in terms))

    def __eq__(self, other):
        if not isinstance(other, ProcessOperator):
            return NotImplemented
        return self.dim == other.dim and self.key == other.key

    def __hash__(self):
        return hash((self.dim, self.key))

    def __repr__(self):
        return f"ProcessOperator({self.label!r})"

    @cached_property
    def matrix(self):
        m = np.zeros((self.dim, self.dim), dtype=complex)
        for i, j in self.key:
            m[i, j] = 1.0
        m.setflags(write=False)
        return m

    @property
    def n_terms(self):
        return len(self.terms)

    @cached_property
    def label(self):
        if self.dim == 2 and self.key in _D2_ALIASES:
            return _D2_ALIASES[self.key]
        return TERM_SEP.join(t.label for t in self.terms)

    @cached_property
    def hermitian(self):
        return set(self.key) == {(j, i) for i, j in self.key}

    @cached_property
    def optical_class(self):
        return classify_optical(self)

    @cached_property
    def adjoint_key(self):
        return tuple(sorted((j, i) for i, j in self.key))

    def adjoint(self):
        return ProcessOperator(self.dim, tuple(BasisTerm(self.dim, j, i) for i, j in self.key))

    @cached_property
    def commutator(self):
        m = commutator_superop(self.matrix)
        m.setflags(write=False)
        return m

    @cached_property
    def dissipator(self):
        m = dissipator_superop(self.matrix)
        m.setflags(write=False)
        return m


def classify_optical(op, d=None):
    """Optical role of a process.

    A process is a monitored emission only if every one of its terms is a
    dipole-allowed lowering transition, and an excitation only if every term
    is the reverse of one.  Anything else (diagonal terms, mixtures, the
    two-photon g<->e jump, lateral α<->β terms) is dark.
    """
    d = op.dim if d is None else d
    lowering = _LOWERING[d]
    if all(k in lowering for k in op.key):
        return EMISSION
    if all((j, i) in lowering for i, j in op.key):
        return EXCITATION
    return DARK


def operator_from_label(label, d):
    """Rebuild a :class:`ProcessOperator` from its label."""
    _check_dim(d)
    if d == 2:
        for key, alias in _D2_ALIASES.items():
            if label == alias:
                return ProcessOperator(2, tuple(BasisTerm(2, *k) for k in key))
    by_label = {t.label: t for t in enumerate_basis(d)}
    try:
        terms = tuple(by_label[part.strip()] for part in label.split(TERM_SEP))
    except KeyError as err:
        raise ValueError(f"unknown operator label {label!r} for d={d}") from err
    return ProcessOperator(d, terms)


def _scale_key(matrix):
    m = matrix / np.abs(matrix).max()
    return np.round(m, 12).tobytes()


class OperatorLibrary:
    """Immutable, label-ordered collection of candidate processes.

    Behaves as a sequence of :class:`ProcessOperator`.  ``n_candidates`` is
    the number of term combinations before duplicate removal and
    ``dedup_log`` lists ``(removed, kept)`` label pairs.
    """

    def __init__(self, dim, complexity, operators, n_candidates=None, dedup_log=()):
        self.dim = dim
        self.complexity = complexity
        self.operators = tuple(operators)
        self.n_candidates = len(self.operators) if n_candidates is None else n_candidates
        self.dedup_log = tuple(dedup_log)
        self._index = {op: i for i, op in enumerate(self.operators)}
        self._by_label = {op.label: op for op in self.operators}
        by_key = {op.key: i for i, op in enumerate(self.operators)}
        self.adjoint_index = tuple(by_key.get(op.adjoint_key) for op in self.operators)
        self.hamiltonian_indices = tuple(i for i, op in enumerate(self.operators) if op.hermitian)
        # unordered adjoint pairs (i < j), both members present
        self.conjugate_pairs = tuple(
            (i, j) for i, j in enumerate(self.adjoint_index) if j is not None and i < j
        )

    def __len__(self):
        return len(self.operators)

    def __iter__(self):
        return iter(self.operators)

    def __getitem__(self, i):
        return self.operators[i]

    def __contains__(self, op):
        return op in self._index

    def __repr__(self):
        return f"OperatorLibrary(d={self.dim}, C={self.complexity}, n={len(self)})"

    def index(self, op):
        return self._index[op]

    def by_label(self, label):
        try:
            return self._by_label[label]
        except KeyError:
            raise KeyError(f"operator {label!r} not in library") from None

    def hamiltonian(self):
        return [self.operators[i] for i in self.hamiltonian_indices]

    def subset(self, labels):
        """A reduced library keeping only the given labels."""
        ops = sorted((self.by_label(lb) for lb in labels), key=lambda op: op.label)
        return OperatorLibrary(self.dim, self.complexity, ops)


def build_library(d, C=2):
    """All unit-weight combinations of 1..C basis terms, duplicates removed.

    Two candidates are duplicates when their matrices agree up to a positive
    scalar; the first in enumeration order is kept.
    """
    if C < 1:
        raise ValueError("complexity C must be >= 1")
    basis = enumerate_basis(d)
    seen = {}
    kept = []
    log = []
    n = 0
    for c in range(1, C + 1):
        for combo in combinations(basis, c):
            n += 1
            op = ProcessOperator(d, combo)
            key = _scale_key(op.matrix)
            if key in seen:
                log.append((op.label, seen[key].label))
                continue
            seen[key] = op
            kept.append(op)
    kept.sort(key=lambda op: op.label)
    return OperatorLibrary(d, C, kept, n_candidates=n, dedup_log=log)


def hamiltonian_sublibrary(library):
    return library.hamiltonian()


def library_records(library):
    """Plain-dict records (one per operator) for serialization."""
    out = []
    for op in library:
        m = op.matrix
        out.append({
            "label": op.label,
            "terms": [t.label for t in op.terms],
            "hermitian": bool(op.hermitian),
            "optical_class": op.optical_class,
            "matrix_real": m.real.astype(int).tolist(),
            "matrix_imag": m.imag.astype(int).tolist(),
        })
    return out
