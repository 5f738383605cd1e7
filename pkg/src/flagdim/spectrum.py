"""Lyapunov spectrum, Oseledets flags and splittings along random orbits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GeneralPositionError, ValidationError
from .linalg import (
    Splitting,
    Subspace,
    full_space,
    min_principal_angle,
    subspace_intersection,
)
from .randwalk import (
    MatrixMeasure,
    Word,
    _positive_qr,
    batch_factorize,
    factorize_product,
    generic_frame,
    rng_for,
    sample_word,
)

__all__ = [
    "LyapunovSpectrum",
    "FlagSample",
    "Orbit",
    "AngleDiagnostic",
    "cluster_exponents",
    "lyapunov_spectrum",
    "spectrum_from_exponents",
    "unstable_flag",
    "stable_flag",
    "sample_flags",
    "oseledets_splitting",
    "orbit",
    "angle_sublinearity",
]

MIN_CLUSTER_TOL = 1e-6


@dataclass
class LyapunovSpectrum:
    d: int
    raw: np.ndarray
    raw_stderr: np.ndarray
    chis: np.ndarray
    mults: tuple
    cluster_tol: float
    horizon: int = 0
    replicas: int = 0
    per_replica: np.ndarray = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return len(self.mults)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.mults)]).astype(int)

    @property
    def chi_stderr(self) -> np.ndarray:
        off = self.offsets
        return np.array([
            np.sqrt(np.mean(self.raw_stderr[off[i] : off[i + 1]] ** 2)) for i in range(self.N)
        ])

    @property
    def single_cluster(self) -> bool:
        return self.N == 1

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "horizon": self.horizon,
            "replicas": self.replicas,
            "raw": [float(x) for x in self.raw],
            "raw_stderr": [float(x) for x in self.raw_stderr],
            "chis": [float(x) for x in self.chis],
            "chi_stderr": [float(x) for x in self.chi_stderr],
            "mults": list(self.mults),
            "cluster_tol": float(self.cluster_tol),
        }

    def csv_rows(self):
        """(replica, k, raw_k) rows."""
        if self.per_replica is None:
            return []
        return [(r, k + 1, float(v)) for r, row in enumerate(self.per_replica) for k, v in enumerate(row)]


def cluster_exponents(raw, tol: float):
    """Single-linkage clustering of descending exponents at gap threshold ``tol``."""
    raw = np.sort(np.asarray(raw, dtype=float))[::-1]
    groups = [[raw[0]]]
    for a, b in zip(raw[:-1], raw[1:]):
        if a - b > tol:
            groups.append([b])
        else:
            groups[-1].append(b)
    chis = np.array([np.mean(g) for g in groups])
    mults = tuple(len(g) for g in groups)
    return chis, mults


def spectrum_from_exponents(raw, mults=None, cluster_tol: float = MIN_CLUSTER_TOL) -> LyapunovSpectrum:
    """Spectrum with known exponents (no sampling error); handy for tests and topology work."""
    raw = np.sort(np.asarray(raw, dtype=float))[::-1]
    if mults is None:
        chis, mults = cluster_exponents(raw, cluster_tol)
    else:
        off = np.concatenate([[0], np.cumsum(mults)]).astype(int)
        chis = np.array([raw[off[i]:off[i + 1]].mean() for i in range(len(mults))])
    return LyapunovSpectrum(raw.size, raw, np.zeros(raw.size), chis, tuple(mults), cluster_tol)


def _replica_orders(m: MatrixMeasure, n: int, seed: int, replicas: int, first: int = 0) -> np.ndarray:
    return np.stack([
        sample_word(m, n, rng_for(seed, r)).indices for r in range(first, first + replicas)
    ]) if replicas else np.zeros((0, n), dtype=np.int64)


def lyapunov_spectrum(m: MatrixMeasure, horizon: int = 1000, replicas: int = 16,
                      cluster_tol: float | None = None, seed: int = 0,
                      burn_in: int | None = None) -> LyapunovSpectrum:
    """Exponents from QR-renormalized products, averaged over independent replicas.

    Each replica first runs ``burn_in`` steps (default 50 d) whose log
    diagonals are discarded: the transient from the start frame would
    otherwise bias the estimate by O(1/horizon).

    The default clustering tolerance is five times the pooled standard error
    (never below 1e-6, so exact isometries are not split by rounding noise).
    """
    if horizon < 10:
        raise ValidationError("horizon must be at least 10")
    if replicas < 1:
        raise ValidationError("need at least one replica")
    burn_in = 50 * m.d if burn_in is None else int(burn_in)
    if burn_in < 0:
        raise ValidationError("burn_in must be non-negative")
    orders = _replica_orders(m, burn_in + horizon, seed, replicas)
    q0, _ = batch_factorize(m.matrices, orders[:, :burn_in])
    _, ell = batch_factorize(m.matrices, orders[:, burn_in:], q0)
    per = ell / horizon
    order = np.argsort(-per.mean(axis=0), kind="stable")
    per = per[:, order]
    raw = per.mean(axis=0)
    if replicas > 1:
        stderr = per.std(axis=0, ddof=1) / np.sqrt(replicas)
    else:
        stderr = np.zeros(m.d)
    if cluster_tol is None:
        pooled = float(np.sqrt(np.mean(stderr ** 2)))
        cluster_tol = max(5.0 * pooled, MIN_CLUSTER_TOL)
    chis, mults = cluster_exponents(raw, cluster_tol)
    if len(mults) == 1 and m.d > 1 and raw[0] - raw[-1] > MIN_CLUSTER_TOL:
        warnings.warn("cluster tolerance exceeds the exponent spread; reporting a single cluster")
    return LyapunovSpectrum(m.d, raw, stderr, chis, mults, float(cluster_tol), horizon, replicas, per)


def _dims_cum(spec: LyapunovSpectrum) -> np.ndarray:
    return spec.offsets


@dataclass
class FlagSample:
    word_id: tuple
    unstable: list
    stable: list


def _check_len(w: Word, d: int, min_length):
    need = 50 * d if min_length is None else min_length
    if len(w) < need:
        raise ValidationError(f"word of length {len(w)} is shorter than the warmup {need}")


def unstable_flag(m: MatrixMeasure, backward_word: Word, spec: LyapunovSpectrum, min_length=None) -> list:
    """E_1 + ... + E_i for i = 1..N, from the product g_{-1} ... g_{-n}.

    The leading columns of the accumulated orthogonal factor span the top
    left singular directions, so the chain is nested by construction.
    """
    if backward_word.direction != "backward":
        raise ValidationError("unstable flags need a backward word")
    _check_len(backward_word, m.d, min_length)
    q = factorize_product((m.matrices[k] for k in backward_word.application_order()), d=m.d,
                          q0=generic_frame(m.d)).q
    off = spec.offsets
    return [Subspace(q[:, : off[i + 1]]) for i in range(spec.N)]


def stable_flag(m: MatrixMeasure, forward_word: Word, spec: LyapunovSpectrum, min_length=None) -> list:
    """E_k + ... + E_N for k = 1..N, from the bottom right singular directions of g_{n-1} ... g_0."""
    if forward_word.direction != "forward":
        raise ValidationError("stable flags need a forward word")
    _check_len(forward_word, m.d, min_length)
    # right singular directions of P are left singular directions of P^T = g_0^T ... g_{n-1}^T
    mats = (m.matrices[k].T for k in forward_word.indices[::-1])
    q = factorize_product(mats, d=m.d, q0=generic_frame(m.d)).q
    off = spec.offsets
    out = []
    for k in range(spec.N):
        top = off[k]
        out.append(Subspace(q[:, top:]) if top else full_space(m.d))
    return out


def sample_flags(m: MatrixMeasure, spec: LyapunovSpectrum, horizon: int, seed: int, replica: int = 0) -> FlagSample:
    rng = rng_for(seed, replica)
    back = sample_word(m, horizon, rng, "backward")
    fwd = sample_word(m, horizon, rng, "forward")
    return FlagSample((seed, replica), unstable_flag(m, back, spec), stable_flag(m, fwd, spec))


def _intersect_flags(unstable, stable, dims, d, witness=None) -> Splitting:
    parts = []
    for i, (u, s) in enumerate(zip(unstable, stable)):
        e = subspace_intersection(u, s)
        if e.rank != dims[i]:
            raise GeneralPositionError(
                f"E_{i + 1} has dimension {e.rank}, expected {dims[i]}; try a longer horizon",
                witness=witness if witness is not None else i,
            )
        parts.append(e)
    return Splitting(tuple(parts))


def oseledets_splitting(fs: FlagSample, spec: LyapunovSpectrum) -> Splitting:
    """E_i = (E_1 + ... + E_i) intersected with (E_i + ... + E_N)."""
    return _intersect_flags(fs.unstable, fs.stable, spec.mults, spec.d, witness=fs.word_id)


@dataclass
class Orbit:
    """Oseledets data along a two-sided orbit segment.

    ``indices[k - first_time]`` is the atom index of g_k for k in
    [first_time, last_time + warmup); splittings are stored for
    times start..stop inclusive.
    """

    measure: MatrixMeasure
    spec: LyapunovSpectrum
    start: int
    stop: int
    first_time: int
    indices: np.ndarray
    unstable_q: np.ndarray
    stable_q: np.ndarray
    _splits: dict = field(default_factory=dict, repr=False)

    def atom(self, k: int) -> int:
        return int(self.indices[k - self.first_time])

    def step(self, k: int) -> np.ndarray:
        """The matrix g_k."""
        return self.measure.matrices[self.atom(k)]

    def unstable(self, k: int) -> list:
        q = self.unstable_q[k - self.start]
        off = self.spec.offsets
        return [Subspace(q[:, : off[i + 1]]) for i in range(self.spec.N)]

    def stable(self, k: int) -> list:
        q = self.stable_q[k - self.start]
        off, d = self.spec.offsets, self.spec.d
        return [Subspace(q[:, : d - off[i]]) for i in range(self.spec.N)]

    def splitting(self, k: int) -> Splitting:
        if k not in self._splits:
            self._splits[k] = _intersect_flags(self.unstable(k), self.stable(k), self.spec.mults,
                                               self.spec.d, witness=k)
        return self._splits[k]

    def product(self, a: int, b: int) -> np.ndarray:
        """g_{b-1} ... g_a (identity when a == b)."""
        p = np.eye(self.spec.d)
        for k in range(a, b):
            p = self.step(k) @ p
        return p


def orbit(m: MatrixMeasure, spec: LyapunovSpectrum, start: int, stop: int, seed: int,
          warmup: int | None = None, replica: int = 0) -> Orbit:
    """Sample g_k for k in [start - warmup, stop + warmup) and propagate both flags."""
    if stop < start:
        raise ValidationError("stop must not precede start")
    d = m.d
    warmup = 50 * d if warmup is None else int(warmup)
    first = start - warmup
    total = stop + warmup - first
    idx = sample_word(m, total, rng_for(seed, replica)).indices
    mats, inv = m.matrices, m.inverses
    n_keep = stop - start + 1
    uq = np.empty((n_keep, d, d))
    q = generic_frame(d)
    # q holds the unstable basis at time k (before applying g_k)
    for k in range(first, stop + 1):
        if k >= start:
            uq[k - start] = q
        if k < stop:
            q, _ = _positive_qr(mats[idx[k - first]] @ q)
    sq = np.empty((n_keep, d, d))
    q = generic_frame(d)
    for k in range(stop + warmup, start - 1, -1):
        if k <= stop:
            sq[k - start] = q
        if k > start:
            q, _ = _positive_qr(inv[idx[k - 1 - first]] @ q)
    return Orbit(m, spec, start, stop, first, idx, uq, sq)


@dataclass
class AngleDiagnostic:
    slope: float
    intercept: float
    times: np.ndarray
    log_sin: np.ndarray
    low_confidence: bool

    def csv_rows(self):
        return [(int(n), float(v)) for n, v in zip(self.times, self.log_sin)]


def angle_sublinearity(m: MatrixMeasure, spec: LyapunovSpectrum, trajectory_len: int, seed: int,
                       I=(0,), J=None, warmup: int | None = None) -> AngleDiagnostic:
    """Least-squares slope of n -> log sin angle(E_I(sigma^n w), E_J(sigma^n w))."""
    if spec.N < 2:
        raise ValidationError("angle diagnostic needs at least two distinct exponents")
    I = tuple(sorted(set(I)))
    J = tuple(sorted(set(range(spec.N)) - set(I))) if J is None else tuple(sorted(set(J)))
    if not I or not J or set(I) & set(J):
        raise ValidationError("index sets must be non-empty and disjoint")
    if max(I + J) >= spec.N or min(I + J) < 0:
        raise ValidationError("index out of range")
    orb = orbit(m, spec, 0, trajectory_len - 1, seed, warmup)
    vals = np.empty(trajectory_len)
    for n in range(trajectory_len):
        sp = orb.splitting(n)
        vals[n] = np.log(np.sin(min_principal_angle(sp.sum_of(I), sp.sum_of(J))))
    times = np.arange(trajectory_len)
    if trajectory_len >= 2:
        slope, intercept = np.polyfit(times, vals, 1)
    else:
        slope, intercept = 0.0, float(vals[0])
    if np.ptp(vals) == 0:
        slope = 0.0
    return AngleDiagnostic(float(slope), float(intercept), times, vals, trajectory_len < 100)
