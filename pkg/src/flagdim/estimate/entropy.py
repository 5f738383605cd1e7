"""Entropy estimates: k-NN (conditional) mutual information and kernel cylinder masses.

Furstenberg entropy is estimated as I(g_{-1}; flag) and fiber entropy as
I(g_{-1}; E_T | E_T'). The discrete step index is handled as in Ross's
mixed estimator; conditioning follows the Frenzel-Pompe counting scheme with
max-norm neighborhoods.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist
from scipy.special import digamma

from ..errors import DegeneracyError, ValidationError
from ..randwalk import MatrixMeasure, rng_for
from ..topology import AdmissibleTopology, LeftFiltration, filtered_topology, members, refines
from .ensemble import PREFIX_DEPTH, FlagEnsemble

__all__ = [
    "EntropyEstimate",
    "knn_cmi",
    "entropy_cap",
    "furstenberg_entropy",
    "fiber_entropy",
    "cylinder_entropy",
    "RWEntropy",
    "rw_entropy",
    "MIN_ENSEMBLE",
]

MIN_ENSEMBLE = 100
CONST_TOL = 1e-12
N_GROUPS = 10


@dataclass
class EntropyEstimate:
    value: float
    stderr: float
    method: str
    params: dict = field(default_factory=dict)
    raw: float = 0.0
    group_values: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "stderr": float(self.stderr),
            "method": self.method,
            "params": {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in self.params.items()},
        }


def _is_constant(x: np.ndarray) -> bool:
    return x.shape[1] == 0 or float(np.max(np.abs(x - x[0]))) <= CONST_TOL


def _jitter(x: np.ndarray, seed: int) -> np.ndarray:
    # break exact ties (atoms in the ensemble) without moving distinct points noticeably
    if x.shape[1] == 0:
        return x
    scale = 1e-10 * max(float(np.max(np.std(x, axis=0))), 1.0)
    return x + scale * rng_for(seed, 0x7E1).standard_normal(x.shape)


def knn_cmi(labels, y, z=None, k: int = 4, jitter_seed: int = 0) -> float:
    """I(X; Y | Z) for discrete X and continuous Y, Z; plain I(X; Y) when z is None.

    Returns 0 exactly when X has a single value or Y is constant (given the
    sample), since then the information is zero.
    """
    labels = np.asarray(labels)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = labels.size
    if y.shape[0] != n:
        y = y.T
    if z is None:
        z = np.zeros((n, 0))
    z = np.asarray(z, dtype=float).reshape(n, -1)
    classes, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if classes.size < 2 or _is_constant(y):
        return 0.0
    if np.any(counts <= k):
        raise ValidationError(f"every step label needs more than k={k} samples")
    y = _jitter(y, jitter_seed)
    z = _jitter(z, jitter_seed + 1)
    yz = np.hstack([y, z])
    eps = np.empty(n)
    n_xz = np.empty(n)
    for c in range(classes.size):
        idx = np.flatnonzero(inv == c)
        tree = cKDTree(yz[idx])
        dist, _ = tree.query(yz[idx], k=k + 1, p=np.inf)
        eps[idx] = dist[:, -1]
        r = np.nextafter(dist[:, -1], 0)
        if z.shape[1]:
            n_xz[idx] = cKDTree(z[idx]).query_ball_point(z[idx], r, p=np.inf, return_length=True)
        else:
            n_xz[idx] = idx.size
    r = np.nextafter(eps, 0)
    n_yz = cKDTree(yz).query_ball_point(yz, r, p=np.inf, return_length=True)
    if z.shape[1]:
        n_z = cKDTree(z).query_ball_point(z, r, p=np.inf, return_length=True)
    else:
        n_z = np.full(n, n)
    return float(digamma(k) - np.mean(digamma(n_xz) + digamma(n_yz) - digamma(n_z)))


def entropy_cap(spectrum, t: AdmissibleTopology, u: AdmissibleTopology | None = None) -> float:
    """sum of d_i d_j (chi_i - chi_j) over j in u(i) minus t(i); u defaults to T_0."""
    chis, dims = spectrum.chis, spectrum.mults
    total = 0.0
    for i in range(t.N):
        coarse = u.atoms[i] if u is not None else ((1 << t.N) - 1) & ~((1 << i) - 1)
        for j in members(coarse & ~t.atoms[i]):
            total += dims[i] * dims[j] * (chis[i] - chis[j])
    return float(total)


def _batch(fn, ens: FlagEnsemble, n_groups: int = N_GROUPS):
    vals = np.array([fn(g) for g in ens.groups(n_groups)])
    return vals, float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0


def _check_size(ens: FlagEnsemble):
    if len(ens) < MIN_ENSEMBLE:
        raise ValidationError(f"ensemble of {len(ens)} samples is too small (need {MIN_ENSEMBLE})")


def _finish(raw, vals, se, method, params, cap=None) -> EntropyEstimate:
    params = dict(params)
    if cap is not None:
        params["cap"] = cap
        if raw > cap + 3 * se + 1e-12:
            warnings.warn(f"{method} estimate {raw:.4g} exceeds the entropy cap {cap:.4g} by more than 3 stderr")
    return EntropyEstimate(max(raw, 0.0), se, method, params, raw, vals)


def furstenberg_entropy(m: MatrixMeasure, L: LeftFiltration, ens: FlagEnsemble, k: int = 4) -> EntropyEstimate:
    """I(g_{-1}; unstable flag of type L), clipped at 0, with batch-means stderr."""
    _check_size(ens)
    y = ens.flag_features(L)
    x = ens.steps
    raw = knn_cmi(x, y, k=k)
    vals, se = _batch(lambda g: knn_cmi(x[g], y[g], k=k), ens)
    cap = entropy_cap(ens.spectrum, filtered_topology(L))
    return _finish(raw, vals, se, "knn-mi", {"k": k, "filtration": L.render()}, cap)


def _fiber_features(ens: FlagEnsemble, t: AdmissibleTopology, u: AdmissibleTopology):
    # spaces of t already determined by u carry no extra information
    skip = tuple(a for a in t.atoms if u.is_open(a))
    return ens.atom_features(t, skip=skip), ens.atom_features(u)


def fiber_entropy(m: MatrixMeasure, t: AdmissibleTopology, u: AdmissibleTopology, ens: FlagEnsemble,
                  k: int = 4) -> EntropyEstimate:
    """I(g_{-1}; E_T | E_T') for t finer than u."""
    _check_size(ens)
    if not refines(t, u):
        raise ValidationError("fiber entropy needs t finer than u")
    params = {"k": k, "t": t.render(), "u": u.render()}
    if t == u:
        return EntropyEstimate(0.0, 0.0, "knn-cmi", params, 0.0, np.zeros(N_GROUPS))
    y, z = _fiber_features(ens, t, u)
    x = ens.steps
    raw = knn_cmi(x, y, z, k=k)
    vals, se = _batch(lambda g: knn_cmi(x[g], y[g], z[g], k=k), ens)
    return _finish(raw, vals, se, "knn-cmi", params, entropy_cap(ens.spectrum, t, u))


def _bandwidth(x: np.ndarray, seed: int) -> float:
    # constant features (up to roundoff) carry no conditioning information
    if _is_constant(x):
        return 0.0
    rng = rng_for(seed, 0xBA4D)
    sub = x if len(x) <= 2000 else x[rng.choice(len(x), 2000, replace=False)]
    return float(np.median(pdist(sub))) / 4.0


def _log_conditional_mass(x: np.ndarray, cyl: np.ndarray, h: float, chunk: int = 512):
    """log of the kernel-weighted share of the own cylinder, leave-one-out, per sample.

    The kernel is Epanechnikov with support radius ``h``. Each share carries
    one unit of pseudo-weight at the marginal cylinder frequency, and its log
    gets the usual first-order bias correction. Also returns the
    smallest total neighbor weight, which is 0 when some neighborhood is empty.
    """
    n = len(cyl)
    out = np.empty(n)
    min_w = np.inf
    if h <= 0 or x.shape[1] == 0:
        ids, counts = np.unique(cyl, return_counts=True)
        own = counts[np.searchsorted(ids, cyl)] - 1
        with np.errstate(divide="ignore"):
            return np.log(own / (n - 1)), float(n - 1)
    ids, counts = np.unique(cyl, return_counts=True)
    marginal = counts[np.searchsorted(ids, cyl)] / n
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        w = np.clip(1.0 - cdist(x[lo:hi], x, "sqeuclidean") / (h * h), 0.0, None)
        w[np.arange(hi - lo), np.arange(lo, hi)] = 0.0
        same = cyl[lo:hi, None] == cyl[None, :]
        tot = w.sum(axis=1)
        own = np.where(same, w, 0.0).sum(axis=1)
        min_w = min(min_w, float(tot.min()))
        # one unit of pseudo-weight at the marginal cylinder frequency keeps the share positive
        share = (own + marginal[lo:hi]) / (tot + 1.0)
        # first-order bias of log(share) for a weighted proportion with Kish size n_eff
        n_eff = (tot + 1.0) ** 2 / ((w * w).sum(axis=1) + 1.0)
        out[lo:hi] = np.log(share) + (1.0 - share) / (2.0 * share * n_eff)
    return out, min_w


def _cylinder_terms(x_t, x_u, cyl, seed):
    flags = []
    terms = []
    for x in (x_t, x_u):
        h = _bandwidth(x, seed)
        widened = 0
        while True:
            lm, wmin = _log_conditional_mass(x, cyl, h)
            if h <= 0 or wmin > 0 or widened >= 6:
                break
            h *= 2.0
            widened += 1
        flags.append({"bandwidth": h, "widened": widened})
        terms.append(lm)
    return terms[0] - terms[1], flags


def cylinder_entropy(m: MatrixMeasure, t: AdmissibleTopology, u: AdmissibleTopology, ens: FlagEnsemble,
                     depth: int = 1, seed: int = 0) -> EntropyEstimate:
    """(1/n) E log [m_T(cylinder | E_T) / m_T'(cylinder | E_T')] with kernel-weighted conditioning.

    Conditioning uses Epanechnikov weights in configuration features with
    support radius equal to a quarter of the median pairwise distance; the
    radius doubles (and is flagged) while some neighborhood is empty.
    """
    _check_size(ens)
    if not refines(t, u):
        raise ValidationError("cylinder entropy needs t finer than u")
    if not 1 <= depth <= PREFIX_DEPTH:
        raise ValidationError(f"cylinder depth must lie in 1..{PREFIX_DEPTH}")
    _, cyl = np.unique(ens.prefix[:, :depth], axis=0, return_inverse=True)
    cyl = cyl.reshape(-1)
    params = {"depth": depth, "t": t.render(), "u": u.render()}
    if t == u:
        return EntropyEstimate(0.0, 0.0, "cylinder", params, 0.0, np.zeros(N_GROUPS))
    x_t = ens.atom_features(t)
    x_u = ens.atom_features(u)
    terms, flags = _cylinder_terms(x_t, x_u, cyl, seed)
    if not np.all(np.isfinite(terms)):
        raise DegeneracyError("a cylinder has no kernel mass; increase the ensemble")
    terms = terms / depth
    raw = float(np.mean(terms))
    vals = np.array([terms[g].mean() for g in ens.groups(N_GROUPS)])
    se = float(np.std(vals, ddof=1) / np.sqrt(vals.size))
    params["bandwidth_t"] = flags[0]["bandwidth"]
    params["bandwidth_u"] = flags[1]["bandwidth"]
    params["widened"] = flags[0]["widened"] + flags[1]["widened"]
    return _finish(raw, vals, se, "cylinder", params, entropy_cap(ens.spectrum, t, u))


@dataclass
class RWEntropy:
    value: float
    ratios: np.ndarray
    support_sizes: np.ndarray
    achieved_n: int
    truncated: bool

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "achieved_n": int(self.achieved_n),
            "truncated": bool(self.truncated),
            "ratios": [float(v) for v in self.ratios],
            "running_min": [float(v) for v in np.minimum.accumulate(self.ratios)],
            "support_sizes": [int(v) for v in self.support_sizes],
        }

    def csv_rows(self):
        """(n, H(mu^n)/n) rows."""
        return [(n + 1, float(v)) for n, v in enumerate(self.ratios)]


def _key(mat: np.ndarray, tol: float) -> bytes:
    return (np.round(mat / tol) + 0.0).tobytes()


def rw_entropy(m: MatrixMeasure, max_n: int = 12, tol: float = 1e-9, max_support: int = 10**6) -> RWEntropy:
    """min over n <= max_n of H(mu^{*n}) / n, merging products that agree to ``tol``.

    Stops early (``truncated``) once the support would exceed ``max_support``.
    """
    if max_n < 1:
        raise ValidationError("max_n must be at least 1")
    # merge equal atoms first
    dist: dict = {}
    for p, a in m.atoms():
        key = _key(a, tol)
        if key in dist:
            dist[key][0] += p
        else:
            dist[key] = [p, a]
    base = list(dist.values())
    cur = dict(dist)
    ratios, sizes = [], []
    truncated = False
    for n in range(1, max_n + 1):
        if n > 1:
            if len(cur) * len(base) > max_support * 4 and len(cur) >= max_support:
                truncated = True
                break
            nxt: dict = {}
            for p, mat in cur.values():
                for q, a in base:
                    prod = a @ mat
                    key = _key(prod, tol)
                    if key in nxt:
                        nxt[key][0] += p * q
                    else:
                        nxt[key] = [p * q, prod]
                if len(nxt) > max_support:
                    break
            if len(nxt) > max_support:
                truncated = True
                break
            cur = nxt
        probs = np.array([v[0] for v in cur.values()])
        h = max(float(-np.sum(probs * np.log(probs))), 0.0)
        ratios.append(h / n)
        sizes.append(len(cur))
    ratios = np.array(ratios)
    return RWEntropy(float(ratios.min()), ratios, np.array(sizes), len(ratios), truncated)
