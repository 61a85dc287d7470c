"""Post-processing of chain records.

Sampled models are embedded as rate-weighted Liouvillians, reduced by PCA
and clustered with k-means; the clusters ("model classes") are ranked by
how many samples they hold.  Within a class, master-equation structures
are ranked by frequency.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .engine import build_liouvillian
from .forward import UnphysicalModelError, simulate
from .forward import SimulationSettings
from .sampler import sample_to_model


@dataclass
class Embedding:
    """Rows of real Liouvillian coordinates with their provenance."""

    matrix: np.ndarray
    chain: np.ndarray
    sample: np.ndarray
    signatures: list


def liouvillian_features(model):
    """Real/imaginary parts of the vectorized Liouvillian (length ``2 d**4``)."""
    v = build_liouvillian(model).reshape(-1, order="F")
    return np.concatenate([v.real, v.imag])


def embed_liouvillians(records, fraction=0.1, seed=0, library=None):
    """Embed a seeded uniform subsample of all recorded samples.

    ``ceil(fraction * n)`` of the ``n`` pooled samples are drawn without
    replacement and kept in (chain, sample) order.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    pool = [(c, s) for c, rec in enumerate(records) for s in range(len(rec.samples))]
    if not pool:
        return Embedding(np.zeros((0, 0)), np.zeros(0, int), np.zeros(0, int), [])
    n = len(pool)
    take = min(n, math.ceil(fraction * n))
    idx = np.sort(np.random.default_rng(seed).choice(n, size=take, replace=False))
    return embed_samples(records, [pool[i] for i in idx], library)


def embed_samples(records, pairs, library=None):
    rows, sigs = [], []
    for c, s in pairs:
        smp = records[c].samples[s]
        rows.append(liouvillian_features(sample_to_model(smp, records[c].dim, library)))
        sigs.append(smp["signature"])
    chain = np.array([c for c, _ in pairs], dtype=int)
    sample = np.array([s for _, s in pairs], dtype=int)
    return Embedding(np.array(rows), chain, sample, sigs)


@dataclass
class PCAResult:
    projected: np.ndarray
    components: np.ndarray  # (n_components, n_features)
    mean: np.ndarray
    explained: np.ndarray  # variance fraction per retained component
    degenerate: bool = False

    @property
    def n_components(self):
        return self.components.shape[0]

    def transform(self, X):
        return (np.asarray(X) - self.mean) @ self.components.T


def pca_project(X, variance_target=0.95):
    """Project onto the fewest principal axes explaining ``variance_target``.

    Zero-variance input yields a single zero column with ``degenerate`` set.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("PCA needs a 2-D array with at least two rows")
    if not 0 < variance_target <= 1:
        raise ValueError("variance_target must lie in (0, 1]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s * s
    total = var.sum()
    if total <= 1e-24 * max(1.0, np.abs(X).max() ** 2):
        comp = np.zeros((1, X.shape[1]))
        return PCAResult(np.zeros((X.shape[0], 1)), comp, mean, np.zeros(1), True)
    frac = var / total
    k = int(np.searchsorted(np.cumsum(frac), variance_target - 1e-12) + 1)
    k = min(k, len(s))
    comp = vt[:k]
    return PCAResult(Xc @ comp.T, comp, mean, frac[:k])


def elbow_k(sse, min_gain=0.5):
    """Elbow of a within-cluster SSE curve (``sse[0]`` is k = 1).

    Picks the k maximizing ``SSE(k-1) - 2 SSE(k) + SSE(k+1)``.  k = 1 is
    returned when the data are degenerate or when a second cluster removes
    less than ``min_gain`` of the one-cluster SSE (no cluster structure).
    """
    sse = np.asarray(sse, dtype=float)
    if sse.size < 2 or sse[0] <= 1e-12 * max(1.0, abs(sse[0])) or sse[0] == 0:
        return 1
    if (sse[0] - sse[1]) / sse[0] < min_gain:
        return 1
    if sse.size == 2:
        return 2
    d2 = sse[:-2] - 2 * sse[1:-1] + sse[2:]
    return int(np.argmax(d2)) + 2


@dataclass
class Clustering:
    labels: np.ndarray
    k: int
    sse: np.ndarray
    model: object = None  # fitted KMeans for the chosen k (None if k == 1)

    def predict(self, Y):
        if self.model is None:
            return np.zeros(len(Y), dtype=int)
        return self.model.predict(np.asarray(Y, dtype=float))


def kmeans_elbow(Y, k_max=10, seed=0, min_gain=0.5):
    """k-means (k-means++ seeding, 10 restarts) for k = 1..k_max plus elbow choice."""
    Y = np.asarray(Y, dtype=float)
    n_unique = len(np.unique(np.round(Y, 12), axis=0))
    k_max = max(1, min(k_max, len(Y), n_unique))
    sse, fits = [], []
    for k in range(1, k_max + 1):
        km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed).fit(Y)
        sse.append(float(km.inertia_))
        fits.append(km)
    k = elbow_k(sse, min_gain)
    if k == 1:
        return Clustering(np.zeros(len(Y), dtype=int), 1, np.array(sse))
    km = fits[k - 1]
    return Clustering(km.labels_.astype(int), k, np.array(sse), km)


@dataclass
class ModelClass:
    """A cluster of sampled models, ranked by popularity."""

    id: int
    count: int
    popularity: float
    signatures: list  # [(signature, count)], most frequent first
    members: list = field(default_factory=list)  # (chain, sample) pairs
    mse: dict = field(default_factory=dict)

    @property
    def top_signature(self):
        return self.signatures[0][0]


def rank_classes(labels, signatures, members=None):
    """Group samples by cluster label and rank by popularity.

    Ties in popularity are broken by the top signature so the ordering
    does not depend on the arbitrary cluster ids.
    """
    labels = np.asarray(labels)
    if len(labels) != len(signatures):
        raise ValueError("labels and signatures differ in length")
    total = len(labels)
    members = members if members is not None else list(range(total))
    groups = {}
    for lab, sig, mem in zip(labels.tolist(), signatures, members):
        groups.setdefault(lab, ([], []))
        groups[lab][0].append(sig)
        groups[lab][1].append(mem)
    classes = []
    for sigs, mems in groups.values():
        ranked = sorted(Counter(sigs).items(), key=lambda kv: (-kv[1], kv[0]))
        classes.append(ModelClass(-1, len(sigs), len(sigs) / total, ranked, mems))
    classes.sort(key=lambda c: (-c.count, c.top_signature))
    for i, c in enumerate(classes):
        c.id = i
    return classes


def cluster_records(records, fraction=0.1, seed=0, k_max=10, variance_target=0.95,
                    library=None):
    """Full clustering pipeline over pooled chain records.

    PCA and k-means are fitted on a ``fraction`` subsample; every recorded
    sample is then assigned to its nearest centroid so that popularities
    count all post-burn-in samples.
    """
    sub = embed_liouvillians(records, fraction, seed, library)
    if len(sub.signatures) == 0:
        raise ValueError("records hold no samples")
    pairs = [(c, s) for c, rec in enumerate(records) for s in range(len(rec.samples))]
    if len(sub.signatures) < 2:
        return rank_classes(np.zeros(len(pairs), int),
                            [records[c].samples[s]["signature"] for c, s in pairs], pairs)
    pca = pca_project(sub.matrix, variance_target)
    clus = kmeans_elbow(pca.projected, k_max, seed)
    full = embed_samples(records, pairs, library)
    labels = clus.predict(pca.transform(full.matrix)) if not pca.degenerate else np.zeros(len(pairs), int)
    return rank_classes(labels, full.signatures, pairs)


# --- fit quality ----------------------------------------------------------------

@dataclass
class FitSummary:
    """Per-experiment MSE and the mean +- 1 sd envelope of simulated traces."""

    kind: str
    tau: np.ndarray
    data: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    mse: float
    mse_sd: float


def compute_mse(models, data, n_samples=100, seed=0, settings=SimulationSettings()):
    """MSE of posterior-draw simulations against each data trace.

    ``models`` are posterior draws (all of one structure); up to
    ``n_samples`` are chosen uniformly without replacement.  The MSE of a
    draw is the mean squared residual over the grid; the reported value is
    its average over draws.  Draws that cannot be simulated are skipped.
    """
    models = list(models)
    if not models:
        raise ValueError("no posterior draws given")
    rng = np.random.default_rng(seed)
    take = min(n_samples, len(models))
    idx = np.sort(rng.choice(len(models), size=take, replace=False))
    out = {}
    for tr in data:
        sims = []
        for i in idx:
            try:
                sims.append(simulate(models[i], tr.kind, tr.tau, settings).values)
            except UnphysicalModelError:
                continue
        if not sims:
            out[tr.kind] = FitSummary(tr.kind, tr.tau, tr.values, np.full_like(tr.values, np.nan),
                                      np.full_like(tr.values, np.nan), math.inf, math.nan)
            continue
        sims = np.array(sims)
        per = np.mean((sims - tr.values) ** 2, axis=1)
        sd = sims.std(axis=0, ddof=1) if len(sims) > 1 else np.zeros(tr.tau.size)
        out[tr.kind] = FitSummary(tr.kind, tr.tau, tr.values, sims.mean(axis=0), sd,
                                  float(per.mean()), float(per.std(ddof=1)) if len(per) > 1 else 0.0)
    return out


def class_draws(model_class, records, signature=None, library=None):
    """Posterior draws of one structure (default: the class's top one)."""
    signature = model_class.top_signature if signature is None else signature
    return [sample_to_model(records[c].samples[s], records[c].dim, library)
            for c, s in model_class.members
            if records[c].samples[s]["signature"] == signature]


# --- chain mixing -----------------------------------------------------------------

def mixing_mu(a, b):
    """Set overlap ``|A u B| / (|A| + |B|)``: 0.5 identical, 1 disjoint."""
    a, b = set(a), set(b)
    if not a and not b:
        raise ValueError("mixing is undefined for two empty chains")
    return len(a | b) / (len(a) + len(b))


def mixing_matrix(records):
    """Pairwise ``mixing_mu`` of chain signature sets; NaN where undefined."""
    sets = [set(r.signatures()) for r in records]
    n = len(sets)
    mu = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i, n):
            if sets[i] or sets[j]:
                mu[i, j] = mu[j, i] = 0.5 if i == j else mixing_mu(sets[i], sets[j])
    return mu
