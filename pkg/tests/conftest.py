import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lindblearn.library import build_library  # noqa: E402
from lindblearn.model import Model, preset_symmetric_two_emitter  # noqa: E402


@pytest.fixture(scope="session")
def lib2():
    return build_library(2, 2)


@pytest.fixture(scope="session")
def lib4():
    return build_library(4, 2)


def random_model(rng, library, n_h=(0, 3), n_l=(1, 5), rate_max=2.0):
    """Arbitrary model drawn from a library (no physical constraints)."""
    herm = library.hamiltonian()
    h_idx = rng.choice(len(herm), size=rng.integers(*n_h, endpoint=True), replace=False)
    l_idx = rng.choice(len(library), size=rng.integers(*n_l, endpoint=True), replace=False)
    return Model(library.dim,
                 tuple((herm[i], rng.uniform(0, rate_max)) for i in h_idx),
                 tuple((library[i], rng.uniform(0, rate_max)) for i in l_idx),
                 rng.uniform(0, 0.1))


def random_emitting_model(rng, library):
    """Model with a unique steady state and non-zero emission.

    The d=4 models extend the symmetric two-emitter preset with random
    extra processes; d=2 models combine decay, pumping or drive with extras.
    """
    d = library.dim
    if d == 4:
        base = preset_symmetric_two_emitter(rng.uniform(0.3, 2), rng.uniform(0.1, 1),
                                            rng.uniform(0, 0.5))
    else:
        sm = library.by_label("σ-")
        exc = library.by_label("σx" if rng.random() < 0.5 else "σ+")
        h = ((exc, rng.uniform(0.2, 1.5)),) if exc.hermitian else ()
        ll = ((sm, rng.uniform(0.3, 2)),) + (((exc, rng.uniform(0.1, 1)),) if not exc.hermitian else ())
        base = Model(2, h, ll)
    extra = random_model(rng, library, n_h=(0, 2), n_l=(0, 2), rate_max=0.8)
    used = {op for op, _ in base.lindblad}
    lind = base.lindblad + tuple((op, r) for op, r in extra.lindblad if op not in used)
    return Model(d, extra.hamiltonian, lind, 0.0)
