"""Dimension estimates: ball counting, entropy/exponent ratios, and the Lyapunov dimension profile."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from ..errors import DegeneracyError, ValidationError
from ..randwalk import MatrixMeasure, rng_for
from ..topology import (
    AdmissibleTopology,
    LeftFiltration,
    RefinementStep,
    chi_step,
    filtered_topology,
)
from .ensemble import FlagEnsemble
from .entropy import EntropyEstimate, fiber_entropy

__all__ = [
    "DimensionEstimate",
    "LyapunovDimensionProfile",
    "local_dimension",
    "scaling_window",
    "fiber_local_dimension",
    "one_step_dimension",
    "path_dimension",
    "product_dimension",
    "lyapunov_dimension",
    "MIN_WINDOW",
    "MIN_R2",
]

MIN_WINDOW = 4
MIN_R2 = 0.98
MIN_CHI = 1e-6
TRIM = 0.1
N_GROUPS = 10
SATURATION = 0.5


@dataclass
class DimensionEstimate:
    value: float
    stderr: float
    radii: np.ndarray = field(default=None, repr=False)
    window: tuple = None
    spread: float = 0.0
    method: str = "ball-count"
    components: list = field(default_factory=list)
    log_mass: np.ndarray = field(default=None, repr=False)
    defined: bool = True

    def to_dict(self) -> dict:
        out = {
            "value": float(self.value),
            "stderr": float(self.stderr),
            "method": self.method,
            "spread": float(self.spread),
            "defined": self.defined,
        }
        if self.window is not None:
            out["window"] = [float(self.window[0]), float(self.window[1])]
        if self.components:
            out["components"] = self.components
        return out

    def csv_rows(self):
        """(r, mean ball mass) rows."""
        if self.radii is None or self.log_mass is None:
            return []
        return [(float(r), float(np.exp(lm))) for r, lm in zip(self.radii, self.log_mass)]


def _r2(x, y) -> float:
    vy = np.var(y)
    if vy <= 1e-24:
        return 1.0
    return float(np.corrcoef(x, y)[0, 1] ** 2)


def scaling_window(log_r, log_mass, min_points: int = MIN_WINDOW, min_r2: float = MIN_R2):
    """Longest contiguous run (>= min_points) with linear fit R^2 >= min_r2; ties go to higher R^2.

    Returns (start, stop) indices (stop exclusive) or None.
    """
    n = len(log_r)
    best = None
    for a in range(n):
        for b in range(a + min_points, n + 1):
            x, y = log_r[a:b], log_mass[a:b]
            if not np.all(np.isfinite(y)):
                break
            r2 = _r2(x, y)
            if r2 < min_r2:
                continue
            key = (b - a, r2)
            if best is None or key > best[0]:
                best = (key, (a, b))
    return None if best is None else best[1]


def _dyadic_ladder(dists: np.ndarray, n_points: int, min_count: float = 10.0, max_levels: int = 40):
    """Radii r0 2^-k from the median probe distance down to where the median ball holds ~min_count points."""
    pos = dists[dists > 0]
    if pos.size == 0:
        return np.array([])
    r0 = float(np.median(pos))
    radii = []
    for k in range(max_levels):
        r = r0 * 2.0 ** (-k)
        counts = (dists <= r).sum(axis=1) - 1
        radii.append(r)
        if np.median(counts) < min_count:
            break
    return np.array(radii)


def local_dimension(points, radii=None, probes: int = 500, seed: int = 0, trim: float = TRIM) -> DimensionEstimate:
    """Ball-counting local dimension of a point cloud (rows are points).

    Probe slopes of log ball mass against log r are fitted over a common
    scaling window detected on the averaged curve; the value is their trimmed
    mean and the error bar is from batch means over 10 probe groups.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < 2:
        raise ValidationError("local dimension needs at least two points")
    if x.shape[1] == 0 or float(np.max(np.abs(x - x[0]))) <= 1e-12:
        return DimensionEstimate(0.0, 0.0, method="ball-count", spread=0.0)
    rng = rng_for(seed, 0xD1)
    pidx = np.sort(rng.choice(n, size=min(probes, n), replace=False))
    dists = cdist(x[pidx], x)
    if radii is None:
        radii = _dyadic_ladder(dists, n)
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    if radii.size < MIN_WINDOW:
        return DimensionEstimate(float("nan"), float("nan"), radii, defined=False)
    srt = np.sort(dists, axis=1)
    counts = np.stack([np.searchsorted(row, radii, side="right") for row in srt]) - 1
    mass = counts / (n - 1)
    log_r = np.log(radii)
    mean_mass = mass.mean(axis=0)
    with np.errstate(divide="ignore"):
        curve = np.log(mean_mass)
    # drop the saturated top of the ladder, where balls hold most of the cloud
    usable = np.flatnonzero(mean_mass <= SATURATION)
    if usable.size < MIN_WINDOW:
        return DimensionEstimate(float("nan"), float("nan"), radii, log_mass=curve, defined=False)
    first = usable[0]
    win = scaling_window(log_r[first:], curve[first:])
    if win is None:
        return DimensionEstimate(float("nan"), float("nan"), radii, log_mass=curve, defined=False)
    a, b = first + win[0], first + win[1]
    slopes = np.full(len(pidx), np.nan)
    lr = log_r[a:b]
    for p in range(len(pidx)):
        mp = mass[p, a:b]
        ok = mp > 0
        if ok.sum() >= 2:
            slopes[p] = np.polyfit(lr[ok], np.log(mp[ok]), 1)[0]
    good = slopes[np.isfinite(slopes)]
    if good.size == 0:
        return DimensionEstimate(float("nan"), float("nan"), radii, log_mass=curve, defined=False)
    value = float(stats.trim_mean(good, trim))
    groups = [g for g in np.array_split(good, N_GROUPS) if g.size]
    gvals = np.array([stats.trim_mean(g, trim) for g in groups])
    se = float(np.std(gvals, ddof=1) / np.sqrt(gvals.size)) if gvals.size > 1 else 0.0
    return DimensionEstimate(value, se, radii, (float(radii[a]), float(radii[b - 1])),
                             float(np.std(good)), "ball-count", log_mass=curve)


def fiber_local_dimension(ens: FlagEnsemble, t: AdmissibleTopology, u: AdmissibleTopology,
                          probes: int = 300, seed: int = 0, base_fraction: float = 0.25) -> DimensionEstimate:
    """Ball counting inside fibers: neighbors of a probe must share its base point.

    Base points are matched within a quarter of the median base distance;
    masses are measured in the coordinates that t adds over u.
    """
    skip = tuple(a for a in t.atoms if u.is_open(a))
    y = ens.atom_features(t, skip=skip)
    z = ens.atom_features(u)
    if y.shape[1] == 0 or float(np.max(np.abs(y - y[0]))) <= 1e-12:
        return DimensionEstimate(0.0, 0.0, method="fiber-ball-count")
    if z.shape[1] == 0 or float(np.max(np.abs(z - z[0]))) <= 1e-12:
        est = local_dimension(y, probes=probes, seed=seed)
        est.method = "fiber-ball-count"
        return est
    rng = rng_for(seed, 0xF1)
    pidx = rng.choice(len(y), size=min(probes, len(y)), replace=False)
    sub = z[rng.choice(len(z), size=min(2000, len(z)), replace=False)]
    hb = base_fraction * float(np.median(cdist(sub[:200], sub)))
    slopes = []
    radii_all = None
    for p in pidx:
        near = np.flatnonzero(np.linalg.norm(z - z[p], axis=1) <= hb)
        near = near[near != p]
        if near.size < 50:
            continue
        d = np.linalg.norm(y[near] - y[p], axis=1)
        if radii_all is None:
            radii_all = _dyadic_ladder(cdist(y[pidx[:100]], y), len(y))
        m = np.array([(d <= r).mean() for r in radii_all])
        ok = (m > 0) & (m <= SATURATION)
        if ok.sum() >= MIN_WINDOW:
            slopes.append(np.polyfit(np.log(radii_all[ok]), np.log(m[ok]), 1)[0])
    if not slopes:
        return DimensionEstimate(float("nan"), float("nan"), method="fiber-ball-count", defined=False)
    slopes = np.array(slopes)
    gvals = np.array([stats.trim_mean(g, TRIM) for g in np.array_split(slopes, N_GROUPS) if g.size])
    se = float(np.std(gvals, ddof=1) / np.sqrt(gvals.size)) if gvals.size > 1 else 0.0
    return DimensionEstimate(float(stats.trim_mean(slopes, TRIM)), se, radii_all,
                             spread=float(np.std(slopes)), method="fiber-ball-count")


def one_step_dimension(m: MatrixMeasure, step: RefinementStep, ens: FlagEnsemble, k: int = 4,
                       kappa: EntropyEstimate | None = None) -> DimensionEstimate:
    """kappa_{T,T'} / chi_{T,T'} for a one-step refinement, with propagated error bar."""
    chi = chi_step(step, ens.spectrum)
    if chi < MIN_CHI:
        raise DegeneracyError(f"exponent gap {chi:.3g} is below {MIN_CHI}; the ratio is undefined")
    if kappa is None:
        kappa = fiber_entropy(m, step.finer, step.coarser, ens, k=k)
    i, j = step.pair
    se_chi = float(np.hypot(*ens.spectrum.chi_stderr[[i, j]]))
    value = kappa.value / chi
    se = float(np.hypot(kappa.stderr / chi, value * se_chi / chi))
    cap = ens.spectrum.mults[i] * ens.spectrum.mults[j]
    if value > cap + 2 * se + 1e-12:
        warnings.warn(f"one-step dimension {value:.4g} exceeds the fiber dimension {cap}")
    comp = {
        "step": step.render(),
        "kappa": float(kappa.value),
        "kappa_stderr": float(kappa.stderr),
        "chi": float(chi),
        "dimension": float(value),
        "fiber_dimension": int(cap),
    }
    return DimensionEstimate(value, se, method="entropy-ratio", components=[comp])


def path_dimension(m: MatrixMeasure, path, ens: FlagEnsemble, k: int = 4) -> DimensionEstimate:
    """Sum of one-step dimensions along a monotone path."""
    if not path:
        return DimensionEstimate(0.0, 0.0, method="path-sum")
    parts = [one_step_dimension(m, s, ens, k) for s in path]
    value = float(sum(p.value for p in parts))
    se = float(np.sqrt(sum(p.stderr ** 2 for p in parts)))
    return DimensionEstimate(value, se, method="path-sum", components=[c for p in parts for c in p.components])


def product_dimension(a: DimensionEstimate, b: DimensionEstimate, paired_points=None,
                      seed: int = 0) -> DimensionEstimate:
    """delta + delta' with pooled error; optionally a direct estimate on paired samples."""
    if not (np.isfinite(a.value) and np.isfinite(b.value)):
        raise ValidationError("product dimension needs finite inputs")
    out = DimensionEstimate(a.value + b.value, float(np.hypot(a.stderr, b.stderr)), method="sum")
    if paired_points is not None:
        direct = local_dimension(paired_points, seed=seed)
        out.components = [{"direct": float(direct.value), "direct_stderr": float(direct.stderr)}]
    return out


@dataclass
class LyapunovDimensionProfile:
    """D(t) = kappa minus the integral of the ascending exponent gaps, capacity by capacity."""

    lambdas: np.ndarray
    capacities: np.ndarray
    pairs: list
    kappa: float
    kappa_stderr: float = 0.0

    @property
    def total_dimension(self) -> int:
        return int(self.capacities.sum())

    @property
    def breakpoints(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.capacities)])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        bp = self.breakpoints
        used = np.clip(t[..., None] - bp[:-1], 0.0, self.capacities)
        return self.kappa - (used * self.lambdas).sum(axis=-1)

    @property
    def dim_ly(self) -> float:
        """Root of D, or the full dimension when D stays positive."""
        if self.kappa <= 0:
            return 0.0
        rest = self.kappa
        pos = 0.0
        for lam, cap in zip(self.lambdas, self.capacities):
            if lam * cap >= rest:
                return float(pos + rest / lam)
            rest -= lam * cap
            pos += cap
        return float(pos)

    def to_dict(self) -> dict:
        return {
            "lambdas": [float(v) for v in self.lambdas],
            "capacities": [int(c) for c in self.capacities],
            "pairs": [[i + 1, j + 1] for i, j in self.pairs],
            "kappa": float(self.kappa),
            "kappa_stderr": float(self.kappa_stderr),
            "dim_ly": self.dim_ly,
            "total_dimension": self.total_dimension,
            "D_at_total": float(self(self.total_dimension)),
        }


def lyapunov_dimension(spectrum, L: LeftFiltration, kappa) -> LyapunovDimensionProfile:
    """Profile over pairs i < j with j outside L(i); ``kappa`` is a float or EntropyEstimate."""
    if isinstance(kappa, EntropyEstimate):
        k_val, k_se = kappa.value, kappa.stderr
    else:
        k_val, k_se = float(kappa), 0.0
    if k_val < 0:
        raise ValidationError("entropy must be nonnegative")
    if L.N != spectrum.N:
        raise ValidationError(f"filtration has N={L.N}, spectrum has N={spectrum.N}")
    t = filtered_topology(L)
    chis, dims = spectrum.chis, spectrum.mults
    pairs = []
    for i in range(L.N):
        for j in range(i + 1, L.N):
            if not (t.atoms[i] >> j) & 1:
                pairs.append((i, j))
    lam = np.array([chis[i] - chis[j] for i, j in pairs], dtype=float)
    if lam.size and lam.min() < MIN_CHI:
        raise DegeneracyError(f"exponent gap {lam.min():.3g} is below {MIN_CHI}; the profile is undefined")
    cap = np.array([dims[i] * dims[j] for i, j in pairs], dtype=int)
    order = np.argsort(lam, kind="stable")
    prof = LyapunovDimensionProfile(lam[order], cap[order], [pairs[o] for o in order], k_val, k_se)
    bound = float((prof.lambdas * prof.capacities).sum())
    if k_val > bound + 3 * k_se + 1e-12:
        warnings.warn(f"entropy {k_val:.4g} exceeds the cap {bound:.4g}; estimators look inconsistent")
    return prof
