"""Independent samples of Oseledets flags and configurations at time 0.

Each sample draws a backward word (for the unstable flag) and a forward word
(for the stable flag) from its own seeded stream ``rng_for(seed, replica)``.
The splitting E_1, ..., E_N is the intersection of the two flags.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..bundle import Configuration
from ..errors import GeneralPositionError, ValidationError
from ..linalg import Subspace
from ..randwalk import MatrixMeasure, _positive_qr, batch_factorize, generic_frame, rng_for
from ..topology import AdmissibleTopology, LeftFiltration, members

__all__ = [
    "FlagEnsemble",
    "sample_flag_ensemble",
    "projector_features",
    "stationarity_pvalue",
    "GP_TOL",
    "PREFIX_DEPTH",
]

GP_TOL = 1e-8
PREFIX_DEPTH = 12
_MAX_RESAMPLE_ROUNDS = 20


def projector_features(q: np.ndarray) -> np.ndarray:
    """Embed stacked orthonormal bases (S x d x r) as projector entries.

    Off-diagonal entries carry a sqrt(2) factor, so Euclidean distance between
    feature vectors equals the Frobenius distance between projectors.
    """
    q = np.asarray(q, dtype=float)
    s, d, _ = q.shape
    p = q @ np.swapaxes(q, 1, 2)
    iu = np.triu_indices(d)
    w = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return p[:, iu[0], iu[1]] * w


def _span_features(parts, idx) -> np.ndarray:
    b = np.concatenate([parts[i] for i in idx], axis=2)
    q, _ = np.linalg.qr(b)
    return projector_features(q)


@dataclass
class FlagEnsemble:
    """Samples of (g_{-1}, unstable flag, stable flag, splitting) at time 0.

    ``steps`` holds the atom index of g_{-1}; ``prefix`` the first
    ``PREFIX_DEPTH`` letters of each backward word (for cylinder estimates).
    """

    spectrum: object
    horizon: int
    seed: int
    replicas: np.ndarray
    steps: np.ndarray
    prefix: np.ndarray
    unstable_q: np.ndarray
    stable_q: np.ndarray
    parts: list
    dropouts: int = 0
    tag: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.steps) < 2:
            raise ValidationError("an ensemble needs at least two samples")

    def __len__(self):
        return len(self.steps)

    @property
    def d(self) -> int:
        return self.unstable_q.shape[1]

    @property
    def dims(self) -> tuple:
        return tuple(self.spectrum.mults)

    def flag_features(self, L: LeftFiltration) -> np.ndarray:
        """Features of the partial flag E_1 + ... + E_p, p over the inner prefixes of L."""
        key = ("flag", L.prefix_lengths)
        if key not in self._cache:
            off = self.spectrum.offsets
            cols = [projector_features(self.unstable_q[:, :, : off[p]]) for p in L.inner]
            self._cache[key] = np.hstack(cols) if cols else np.zeros((len(self), 0))
        return self._cache[key]

    def atom_features(self, t: AdmissibleTopology, skip=()) -> np.ndarray:
        """Features of x_T(i) for every atom except the full space and masks in ``skip``."""
        key = ("atoms", t.atoms, tuple(skip))
        if key not in self._cache:
            full = (1 << t.N) - 1
            cols = [
                _span_features(self.parts, members(a))
                for a in t.atoms
                if a != full and a not in skip
            ]
            self._cache[key] = np.hstack(cols) if cols else np.zeros((len(self), 0))
        return self._cache[key]

    def configuration(self, k: int, t: AdmissibleTopology) -> Configuration:
        spaces = tuple(
            Subspace(np.concatenate([self.parts[i][k] for i in members(a)], axis=1)) for a in t.atoms
        )
        return Configuration(t, self.dims, spaces)

    def subset(self, idx) -> "FlagEnsemble":
        idx = np.asarray(idx)
        return FlagEnsemble(
            self.spectrum, self.horizon, self.seed, self.replicas[idx], self.steps[idx],
            self.prefix[idx], self.unstable_q[idx], self.stable_q[idx],
            [p[idx] for p in self.parts], 0, self.tag,
        )

    def groups(self, n_groups: int = 10) -> list:
        """Index arrays of contiguous replica blocks for batch-means error bars."""
        return [g for g in np.array_split(np.arange(len(self)), n_groups) if g.size]


def _draw_words(m: MatrixMeasure, replicas, horizon: int, seed: int):
    back = np.empty((len(replicas), horizon), dtype=np.int64)
    fwd = np.empty_like(back)
    for row, r in enumerate(replicas):
        rng = rng_for(seed, int(r))
        back[row] = rng.choice(m.size, size=horizon, p=m.probs)
        fwd[row] = rng.choice(m.size, size=horizon, p=m.probs)
    return back, fwd


def _splitting_from_flags(qu, qs, off):
    """E_i = (first off[i+1] columns of qu) meet (orthogonal complement of the first off[i] columns of qs).

    Returns the per-block bases and a mask of samples in general position.
    """
    s, d, _ = qu.shape
    ok = np.ones(s, dtype=bool)
    parts = []
    for i in range(len(off) - 1):
        lo, hi = off[i], off[i + 1]
        ui = qu[:, :, :hi]
        if lo == 0:
            parts.append(ui.copy())
            continue
        c = np.swapaxes(qs[:, :, :lo], 1, 2) @ ui  # S x lo x hi
        _, sv, vt = np.linalg.svd(c)
        # c must have full row rank for the intersection to have the expected dimension
        ok &= sv[:, -1] > GP_TOL
        null = np.swapaxes(vt[:, lo:, :], 1, 2)  # S x hi x (hi-lo)
        parts.append(_positive_qr(ui @ null)[0])
    return parts, ok


def sample_flag_ensemble(m: MatrixMeasure, spectrum, count: int, horizon: int = 400, seed: int = 0,
                         tag: str = "") -> FlagEnsemble:
    """``count`` independent samples of the Oseledets data at time 0.

    Samples whose flags are not in general position (tolerance ``GP_TOL``)
    are dropped and replaced by fresh replicas; the number dropped is kept.
    """
    if count < 2:
        raise ValidationError("ensemble count must be at least 2")
    if horizon < PREFIX_DEPTH:
        raise ValidationError(f"horizon must be at least {PREFIX_DEPTH}")
    if spectrum.d != m.d:
        raise ValidationError("spectrum and measure disagree on the dimension")
    off = spectrum.offsets
    q0 = generic_frame(m.d)
    mats_t = np.swapaxes(m.matrices, 1, 2)
    keep = []
    dropped = 0
    next_replica = 0
    need = count
    for _ in range(_MAX_RESAMPLE_ROUNDS):
        reps = np.arange(next_replica, next_replica + need)
        next_replica += need
        back, fwd = _draw_words(m, reps, horizon, seed)
        qu, _ = batch_factorize(m.matrices, back[:, ::-1], np.broadcast_to(q0, (need, m.d, m.d)))
        qs, _ = batch_factorize(mats_t, fwd[:, ::-1], np.broadcast_to(q0, (need, m.d, m.d)))
        parts, ok = _splitting_from_flags(qu, qs, off)
        dropped += int((~ok).sum())
        keep.append((reps[ok], back[ok, 0], back[ok, :PREFIX_DEPTH], qu[ok], qs[ok], [p[ok] for p in parts]))
        need -= int(ok.sum())
        if need <= 0:
            break
    else:
        raise GeneralPositionError(
            f"could not collect {count} samples in general position ({dropped} dropped)"
        )
    cat = lambda k: np.concatenate([item[k] for item in keep])[:count]
    parts = [np.concatenate([item[5][i] for item in keep])[:count] for i in range(len(off) - 1)]
    return FlagEnsemble(spectrum, horizon, seed, cat(0), cat(1), cat(2), cat(3), cat(4), parts,
                        dropped, tag or m.name)


def stationarity_pvalue(m: MatrixMeasure, ens: FlagEnsemble, L: LeftFiltration, seed: int = 0) -> float:
    """Two-sample KS p-value: pair distances before vs after one independent random step.

    Disjoint pairs (2k, 2k+1) keep the distances independent. A stationary
    ensemble should give p well above 0.01.
    """
    off = ens.spectrum.offsets
    if not L.inner:
        return 1.0
    rng = rng_for(seed, 0x57A7)
    g = m.matrices[rng.choice(m.size, size=len(ens), p=m.probs)]
    pushed = _positive_qr(g @ ens.unstable_q)[0]
    f0 = ens.flag_features(L)
    f1 = np.hstack([projector_features(pushed[:, :, : off[p]]) for p in L.inner])
    half = len(ens) // 2
    a = np.linalg.norm(f0[0 : 2 * half : 2] - f0[1 : 2 * half : 2], axis=1)
    # use a different pairing after the push so the two samples share no pair
    perm = rng.permutation(len(ens))[: 2 * half]
    b = np.linalg.norm(f1[perm[0::2]] - f1[perm[1::2]], axis=1)
    if np.ptp(np.concatenate([a, b])) <= 1e-12:
        return 1.0
    return float(stats.ks_2samp(a, b).pvalue)
