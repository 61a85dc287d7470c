"""Dense Liouville-space machinery for Lindblad master equations.

Density matrices are vectorized by column stacking, so that
``vec(A X B) = (B.T kron A) vec(X)``.  Times are in ns and rates/energies in
GHz with hbar = 1.
"""

import warnings

import numpy as np
from scipy.linalg import expm

NULL_TOL = 1e-6  # |lambda| below this (GHz) counts as a steady-state eigenvalue


class SteadyStateError(ValueError):
    """Raised when a generator has no (numerically) zero eigenvalue."""


class DegenerateSteadyStateWarning(UserWarning):
    """Emitted when the Liouvillian null space is more than one-dimensional."""


def vectorize(rho):
    """Column-stack a d x d matrix into a length d**2 vector."""
    rho = np.asarray(rho)
    return rho.reshape(-1, order="F")


def unvectorize(vec, dim=None):
    vec = np.asarray(vec)
    if dim is None:
        dim = int(round(np.sqrt(vec.size)))
    if dim * dim != vec.size:
        raise ValueError(f"vector of length {vec.size} is not a vectorized square matrix")
    return vec.reshape((dim, dim), order="F")


def commutator_superop(H):
    """Superoperator of ``rho -> -i[H, rho]``."""
    H = np.asarray(H, dtype=complex)
    eye = np.eye(H.shape[0])
    return -1j * (np.kron(eye, H) - np.kron(H.T, eye))


def dissipator_superop(L):
    """Superoperator of ``rho -> L rho L^+ - {L^+ L, rho}/2``."""
    L = np.asarray(L, dtype=complex)
    eye = np.eye(L.shape[0])
    LdL = L.conj().T @ L
    return np.kron(L.conj(), L) - 0.5 * (np.kron(eye, LdL) + np.kron(LdL.T, eye))


def liouvillian(hamiltonian=None, jumps=(), dim=None):
    """Assemble a Liouvillian from raw matrices.

    Parameters
    ----------
    hamiltonian : (d, d) array or None
    jumps : iterable of (L, rate)
        Jump operators with their (non-negative) rates.
    dim : int, optional
        Needed only when there is neither a Hamiltonian nor a jump operator.
    """
    jumps = list(jumps)
    mats = ([hamiltonian] if hamiltonian is not None else []) + [L for L, _ in jumps]
    dims = {np.shape(m) for m in mats}
    if len(dims) > 1:
        raise ValueError(f"operators of mismatched shapes: {sorted(dims)}")
    if mats:
        d = np.shape(mats[0])[0]
        if dim is not None and dim != d:
            raise ValueError(f"operators are {d}x{d} but dim={dim}")
    elif dim is None:
        raise ValueError("dim is required for an empty generator")
    else:
        d = dim
    lv = np.zeros((d * d, d * d), dtype=complex)
    if hamiltonian is not None:
        lv += commutator_superop(hamiltonian)
    for L, rate in jumps:
        if rate < 0:
            raise ValueError(f"negative rate {rate}")
        lv += rate * dissipator_superop(L)
    return lv


def build_liouvillian(model):
    """Liouvillian of a :class:`~lindblearn.model.Model`.

    Per-operator superoperators are cached on the process operators, so this
    is a weighted sum of precomputed matrices.
    """
    d = model.dim
    lv = np.zeros((d * d, d * d), dtype=complex)
    for op, omega in model.hamiltonian:
        if op.dim != d:
            raise ValueError(f"Hamiltonian process {op.label} has dim {op.dim}, model has {d}")
        lv += omega * op.commutator
    for op, gamma in model.lindblad:
        if op.dim != d:
            raise ValueError(f"Lindblad process {op.label} has dim {op.dim}, model has {d}")
        if gamma < 0:
            raise ValueError(f"negative rate {gamma} for {op.label}")
        lv += gamma * op.dissipator
    return lv


def matrix_exp(M):
    """Matrix exponential (scaling and squaring with a Pade approximant)."""
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix_exp requires finite entries")
    return expm(M)


def propagate(lv, rho0, t):
    """Evolve ``rho0`` for a time ``t`` (ns) under the generator ``lv``."""
    if t < 0:
        raise ValueError(f"cannot propagate backwards in time (t={t})")
    rho0 = np.asarray(rho0, dtype=complex)
    if t == 0:
        return rho0.copy()
    return unvectorize(matrix_exp(lv * t) @ vectorize(rho0), rho0.shape[0])


def eigen_decompose(lv, rtol=1e-10):
    """Return ``(eigvals, V, V_inv)`` or None if ``lv`` is numerically defective."""
    lam, V = np.linalg.eig(lv)
    try:
        Vinv = np.linalg.inv(V)
    except np.linalg.LinAlgError:
        return None
    scale = max(1.0, np.abs(lv).max())
    if np.abs((V * lam) @ Vinv - lv).max() > rtol * scale:
        return None
    return lam, V, Vinv


def _null_basis(A, tol):
    lam, vecs = np.linalg.eig(A)
    sel = vecs[:, np.abs(lam) < tol]
    if sel.shape[1] == 0:
        return sel
    # orthonormal basis of the span; repeated eigenvectors may be nearly parallel
    u, s, _ = np.linalg.svd(sel, full_matrices=False)
    return u[:, s > 1e-10 * s[0]]


def _normalize_state(rho):
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def steady_state(lv, tol=NULL_TOL):
    """Steady state of a Liouvillian.

    The maximally mixed state is projected onto the null space along the
    complementary invariant subspace, i.e. the long-time limit reached from
    ``I/d``.  This is the unique steady state when the null space is
    one-dimensional; otherwise a :class:`DegenerateSteadyStateWarning` is
    emitted and the returned state is one valid member of the family.
    """
    d = int(round(np.sqrt(lv.shape[0])))
    right = _null_basis(lv, tol)
    if right.shape[1] == 0:
        raise SteadyStateError("Liouvillian has no eigenvalue within "
                               f"{tol:g} of zero; generator is malformed")
    left = _null_basis(lv.conj().T, tol)
    if left.shape[1] != right.shape[1]:
        raise SteadyStateError("left and right null spaces differ in dimension")
    if right.shape[1] > 1:
        warnings.warn(f"steady state is {right.shape[1]}-fold degenerate",
                      DegenerateSteadyStateWarning, stacklevel=2)
    x0 = vectorize(np.eye(d) / d)
    coef = np.linalg.solve(left.conj().T @ right, left.conj().T @ x0)
    return _normalize_state(unvectorize(right @ coef, d))


def null_space_dimension(lv, tol=NULL_TOL):
    return int(np.sum(np.abs(np.linalg.eigvals(lv)) < tol))


def steady_state_from_eigen(decomp, d, tol=NULL_TOL):
    """Steady state from a precomputed :func:`eigen_decompose` result."""
    lam, V, Vinv = decomp
    null = np.abs(lam) < tol
    if not null.any():
        raise SteadyStateError("Liouvillian has no eigenvalue near zero")
    x0 = vectorize(np.eye(d) / d)
    rho = unvectorize(V[:, null] @ (Vinv[null] @ x0), d)
    return _normalize_state(rho)


def expectation_trace(lv, x0, observable, taus, decomp=None):
    """``Tr[O exp(lv tau) X0]`` for each ``tau`` (complex array).

    ``x0`` need not be a density matrix (quantum-regression seeds are not).
    Uses the eigendecomposition of ``lv`` when it is well conditioned and
    falls back to one matrix exponential per time point otherwise.
    """
    taus = np.asarray(taus, dtype=float)
    xv = vectorize(np.asarray(x0, dtype=complex))
    # Tr(O X) = sum_ij O_ij X_ji = vec(O^T) . vec(X)
    ov = vectorize(np.asarray(observable, dtype=complex).T)
    if decomp is None:
        decomp = eigen_decompose(lv)
    if decomp is not None:
        lam, V, Vinv = decomp
        coef = (ov @ V) * (Vinv @ xv)
        return np.exp(np.multiply.outer(taus, lam)) @ coef
    return _stepped_trace(lv, xv, ov, taus)


def _stepped_trace(lv, xv, ov, taus):
    """Propagate through the sorted distinct delays, reusing ``exp(lv*gap)``
    for repeated gaps (one exponential per distinct spacing)."""
    if np.any(taus < 0):
        raise ValueError("delays must be >= 0")
    uniq, inverse = np.unique(taus, return_inverse=True)
    vals = np.empty(uniq.size, dtype=complex)
    gaps = np.diff(uniq, prepend=0.0)
    keys = np.round(gaps, 12).tolist()
    cache = {}
    x = xv
    for k, (gap, key) in enumerate(zip(gaps, keys)):
        if gap > 0:
            if key not in cache:
                cache[key] = matrix_exp(lv * gap)
            x = cache[key] @ x
        vals[k] = ov @ x
    return vals[inverse].reshape(taus.shape)


def is_density_matrix(rho, atol=1e-10, eig_floor=-1e-8):
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if np.abs(rho - rho.conj().T).max() > atol:
        return False
    if abs(np.trace(rho) - 1) > atol:
        return False
    return np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() >= eig_floor
