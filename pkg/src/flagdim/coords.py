"""Change of fiber coordinates between compatible splittings.

Given T finer than T' and two splittings V, W compatible with the same point
of the coarser configuration space, ``psi_W(phi_V(f))`` is an integer
noncommutative polynomial in f and the projections of V and W.  Write
a_k, b_k for the projections onto V_k, W_k and r(x) = sum_{m<N} (-x)^m.
With p_{j,i} = b_j g b_i and q_{j,i} = a_j g b_i one has, for j = 1..N:

* p_{1,i} = q_{1,i} = 0;
* j in T(i): p_{j,i} = 0 and q_{j,i} = sum_{k<=j} a_j p_{k,i};
* otherwise q_{j,i} = -a_j r(x) b_i + sum_{l in T'(i)-T(i)} sum_{l<=k<j} a_j r(x) x a_k p_{l,i}
  and p_{j,i} = sum_{k<=j} b_j q_{k,i};

and g = sum_{i,j} p_{j,i}.  :func:`eval_change` runs this recursion on
matrices; :func:`build_change_poly` runs it on words.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .bundle import (
    NilMap,
    configuration_from_splitting,
    nil_basis,
    perpendicular_splitting,
    phi,
    psi,
)
from .errors import (
    DimensionMismatchError,
    TopologyError,
    ValidationError,
)
from .linalg import Splitting, Subspace
from .randwalk import MatrixMeasure, factorize_product
from .topology import AdmissibleTopology, is_filtered, members, one_step, refines

__all__ = [
    "NoncommPoly",
    "AffineFiberMap",
    "OneStepAffine",
    "FilteredAffine",
    "build_change_poly",
    "eval_change",
    "eval_poly",
    "brute_change",
    "one_step_affine",
    "filtered_affine",
    "conjugate_action",
    "fiber_cocycle",
    "cocycle_log_singular_values",
    "approximation_rate",
    "RateEstimate",
    "OracleRow",
    "four_index_fixture",
    "three_index_fixture",
    "nonlinearity_witness",
    "oracle_equivalence",
]

MAX_TERMS = 2_000_000


class NoncommPoly:
    """Integer combination of words in x, a_1..a_N, b_1..b_N.

    Letters are encoded as ``("x", 0)``, ``("a", k)``, ``("b", k)`` with 0-based k.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {}
        if terms:
            for w, c in (terms.items() if isinstance(terms, dict) else terms):
                if c:
                    self.terms[tuple(w)] = self.terms.get(tuple(w), 0) + int(c)
            self.terms = {w: c for w, c in self.terms.items() if c}

    @classmethod
    def letter(cls, name: str, k: int = 0):
        return cls({((name, k),): 1})

    @classmethod
    def one(cls):
        return cls({(): 1})

    @classmethod
    def zero(cls):
        return cls()

    def __add__(self, other):
        out = dict(self.terms)
        for w, c in other.terms.items():
            v = out.get(w, 0) + c
            if v:
                out[w] = v
            else:
                out.pop(w, None)
        p = NoncommPoly()
        p.terms = out
        return p

    def __neg__(self):
        p = NoncommPoly()
        p.terms = {w: -c for w, c in self.terms.items()}
        return p

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, int):
            p = NoncommPoly()
            p.terms = {w: c * other for w, c in self.terms.items()} if other else {}
            return p
        if len(self.terms) * len(other.terms) > MAX_TERMS:
            raise ValidationError("polynomial too large to expand symbolically")
        out = defaultdict(int)
        for w1, c1 in self.terms.items():
            for w2, c2 in other.terms.items():
                out[w1 + w2] += c1 * c2
        p = NoncommPoly()
        p.terms = {w: c for w, c in out.items() if c}
        return p

    __rmul__ = __mul__

    def __len__(self):
        return len(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def degree_in_x(self) -> int:
        return max((sum(1 for s in w if s[0] == "x") for w in self.terms), default=-1)

    def split_by_x_degree(self) -> dict:
        out = defaultdict(NoncommPoly)
        for w, c in self.terms.items():
            k = sum(1 for s in w if s[0] == "x")
            out[k] = out[k] + NoncommPoly({w: c})
        return dict(out)

    def render(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for w in sorted(self.terms, key=lambda w: (len(w), w)):
            c = self.terms[w]
            word = " ".join("x" if s[0] == "x" else f"{s[0]}{s[1] + 1}" for s in w) or "1"
            sign = "-" if c < 0 else "+"
            mag = "" if abs(c) == 1 else f"{abs(c)} "
            parts.append(f"{sign} {mag}{word}")
        text = " ".join(parts)
        return text[2:] if text.startswith("+ ") else text

    def __repr__(self):
        return f"NoncommPoly({len(self.terms)} terms)"


def _r_poly(N: int) -> NoncommPoly:
    x = NoncommPoly.letter("x")
    out, power = NoncommPoly.one(), NoncommPoly.one()
    for m in range(1, N):
        power = power * x
        out = out + power * ((-1) ** m)
    return out


def _allowed(t: AdmissibleTopology, u: AdmissibleTopology, i: int) -> tuple:
    return members(u.atoms[i] & ~t.atoms[i])


def build_change_poly(t: AdmissibleTopology, u: AdmissibleTopology) -> NoncommPoly:
    """p_{T,T'} as a sum of integer-weighted words (no simplification beyond merging)."""
    if not refines(t, u):
        raise TopologyError("build_change_poly needs t finer than u")
    N = t.N
    if t == u:
        return NoncommPoly.zero()
    x = NoncommPoly.letter("x")
    a = [NoncommPoly.letter("a", k) for k in range(N)]
    b = [NoncommPoly.letter("b", k) for k in range(N)]
    r = _r_poly(N)
    ar = [a[j] * r for j in range(N)]
    arx = [ar[j] * x for j in range(N)]
    total = NoncommPoly.zero()
    for i in range(N):
        allowed = _allowed(t, u, i)
        p = [NoncommPoly.zero() for _ in range(N)]
        q = [NoncommPoly.zero() for _ in range(N)]
        for j in range(1, N):
            if (t.atoms[i] >> j) & 1:
                acc = NoncommPoly.zero()
                for k in range(j):
                    acc = acc + a[j] * p[k]
                q[j] = acc
            else:
                acc = -(ar[j] * b[i])
                for l in allowed:
                    for k in range(l, j):
                        acc = acc + arx[j] * a[k] * p[l]
                q[j] = acc
                pj = NoncommPoly.zero()
                for k in range(j + 1):
                    pj = pj + b[j] * q[k]
                p[j] = pj
        for j in range(N):
            total = total + p[j]
    return total


def eval_poly(poly: NoncommPoly, f, V: Splitting, W: Splitting) -> np.ndarray:
    """Substitute x = f, a_k = projection onto V_k, b_k = projection onto W_k."""
    f = f.matrix if isinstance(f, NilMap) else np.asarray(f, dtype=float)
    d = f.shape[0]
    letters = {("x", 0): f}
    for k in range(len(V)):
        letters[("a", k)] = V.projections[k]
        letters[("b", k)] = W.projections[k]
    out = np.zeros((d, d))
    cache = {(): np.eye(d)}

    def word_value(w):
        if w in cache:
            return cache[w]
        v = word_value(w[:-1]) @ letters[w[-1]]
        cache[w] = v
        return v

    for w, c in poly.terms.items():
        out += c * word_value(w)
    return out


def _check_compatible(V: Splitting, W: Splitting, u: AdmissibleTopology, tol: float = 1e-7):
    if len(V) != u.N or len(W) != u.N or V.dims != W.dims:
        raise DimensionMismatchError("splittings do not match the topology")
    for a in u.atoms:
        sv, sw = V.sum_of(members(a)), W.sum_of(members(a))
        if not sv.equals(sw, tol=tol):
            raise ValidationError("splittings are not compatible with a common coarse configuration")


def _change_matrix(t, u, PV, PW, f: np.ndarray) -> np.ndarray:
    N = t.N
    d = f.shape[0]
    eye = np.eye(d)
    # r(f) = (id + f)^{-1} since f is nilpotent
    r = eye.copy()
    power = eye
    for m in range(1, N):
        power = power @ (-f)
        r = r + power
    ar = [PV[j] @ r for j in range(N)]
    arx = [ar[j] @ f for j in range(N)]
    g = np.zeros((d, d))
    zero = np.zeros((d, d))
    for i in range(N):
        allowed = _allowed(t, u, i)
        if not allowed:
            continue
        p = [zero] * N
        q = [zero] * N
        for j in range(1, N):
            if (t.atoms[i] >> j) & 1:
                acc = zero
                for k in range(j):
                    acc = acc + PV[j] @ p[k]
                q[j] = acc
            else:
                acc = -ar[j] @ PW[i]
                for l in allowed:
                    for k in range(l, j):
                        acc = acc + arx[j] @ PV[k] @ p[l]
                q[j] = acc
                pj = zero
                for k in range(j + 1):
                    pj = pj + PW[j] @ q[k]
                p[j] = pj
        for j in range(N):
            g = g + p[j]
    return g


def eval_change(t: AdmissibleTopology, u: AdmissibleTopology, V: Splitting, W: Splitting, f,
                check: bool = True) -> NilMap:
    """psi_W(phi_V(f)) via the polynomial recursion, evaluated on matrices."""
    if not refines(t, u):
        raise TopologyError("eval_change needs t finer than u")
    if check:
        _check_compatible(V, W, u)
    fm = f.matrix if isinstance(f, NilMap) else np.asarray(f, dtype=float)
    if isinstance(f, NilMap) and (f.source != t or f.target != u):
        raise TopologyError("f belongs to a different pair of topologies")
    g = _change_matrix(t, u, V.projections, W.projections, fm)
    return NilMap(t, u, W, g, check=check)


def brute_change(V: Splitting, W: Splitting, f: NilMap) -> NilMap:
    """Independent oracle: psi_W applied to the configuration phi_V(f)."""
    return psi(W, phi(V, f), f.target)


def _zero_nil(t, u, V) -> NilMap:
    return NilMap(t, u, V, np.zeros((V.ambient_dim, V.ambient_dim)), check=False)


@dataclass
class OneStepAffine:
    """eval_change(f) = A(f) + offset with A(f) = pi_{W_j} f pi_{W_i}."""

    pair: tuple
    source: AdmissibleTopology
    target: AdmissibleTopology
    V: Splitting
    W: Splitting
    offset: NilMap

    def linear(self, f) -> np.ndarray:
        fm = f.matrix if isinstance(f, NilMap) else np.asarray(f, dtype=float)
        i, j = self.pair
        return self.W.projections[j] @ fm @ self.W.projections[i]

    def apply(self, f) -> NilMap:
        return NilMap(self.source, self.target, self.W, self.linear(f) + self.offset.matrix, check=False)

    def matrix(self) -> np.ndarray:
        """A in block coordinates: columns are images of the V-basis of the fiber."""
        cols = []
        for e in nil_basis(self.source, self.target, self.V):
            img = NilMap(self.source, self.target, self.W, self.linear(e), check=False)
            cols.append(img.coordinates())
        return np.column_stack(cols) if cols else np.zeros((0, 0))


def one_step_affine(t: AdmissibleTopology, u: AdmissibleTopology, V: Splitting, W: Splitting) -> OneStepAffine:
    pair = one_step(t, u)
    if pair is None:
        raise TopologyError("one_step_affine needs a one-step refinement")
    offset = eval_change(t, u, V, W, _zero_nil(t, u, V))
    return OneStepAffine(pair, t, u, V, W, offset)


@dataclass
class FilteredAffine:
    """g_0 = psi_W(phi_V(0)); the change is f -> g_0 + f (id + g_0)."""

    source: AdmissibleTopology
    target: AdmissibleTopology
    W: Splitting
    g0: NilMap

    def apply(self, f) -> NilMap:
        fm = f.matrix if isinstance(f, NilMap) else np.asarray(f, dtype=float)
        g0 = self.g0.matrix
        g = g0 + fm @ (np.eye(g0.shape[0]) + g0)
        return NilMap(self.source, self.target, self.W, g, check=False)


def filtered_affine(t: AdmissibleTopology, u: AdmissibleTopology, V: Splitting, W: Splitting) -> FilteredAffine:
    if is_filtered(t) is None:
        raise TopologyError(f"{t} is not generated by the coarsest topology and a left filtration")
    if not refines(t, u):
        raise TopologyError("filtered_affine needs t finer than u")
    g0 = eval_change(t, u, V, W, _zero_nil(t, u, V))
    return FilteredAffine(t, u, W, g0)


def conjugate_action(g, V: Splitting, f: NilMap) -> NilMap:
    """Coordinates of g . phi_V(f) in the splitting gV: the map g f g^{-1}."""
    g = np.asarray(g, dtype=float)
    if f.splitting is not V and not np.allclose(f.splitting.matrix, V.matrix):
        raise ValidationError("f is not expressed in the splitting V")
    gV = V.transform(g)
    return NilMap(f.source, f.target, gV, g @ f.matrix @ np.linalg.inv(g), check=False)


@dataclass
class AffineFiberMap:
    """C -> left @ C @ right + offset on d_j x d_i fiber coordinates."""

    left: np.ndarray
    right: np.ndarray
    offset: np.ndarray
    time: int = 0

    @property
    def linear(self) -> np.ndarray:
        # column-major vectorization: vec(L C R) = (R^T kron L) vec(C)
        return np.kron(self.right.T, self.left)

    def __call__(self, c):
        return self.left @ np.asarray(c) @ self.right + self.offset

    def then(self, other: "AffineFiberMap") -> "AffineFiberMap":
        """other after self."""
        return AffineFiberMap(other.left @ self.left, self.right @ other.right,
                              other.left @ self.offset @ other.right + other.offset, self.time)


def _one_step_data(t, u):
    pair = one_step(t, u)
    if pair is None:
        raise TopologyError("the fiber cocycle is defined for one-step refinements")
    return pair


def fiber_cocycle(m: MatrixMeasure, orb, t: AdmissibleTopology, u: AdmissibleTopology,
                  start: int = 0, steps: int | None = None, with_offset: bool = True) -> list:
    """Per-step affine maps on one-step fiber coordinates along an orbit.

    ``orb`` is a :class:`flagdim.spectrum.Orbit`; base points are the Oseledets
    configurations over ``u`` and fibers carry the perpendicular splittings.
    Coordinates of f are C = B_j^T f B_i with orthonormal bases B of V_i, V_j.
    """
    i, j = _one_step_data(t, u)
    if orb.spec.N != t.N:
        raise DimensionMismatchError("spectrum and topology disagree on N")
    steps = orb.stop - start if steps is None else steps
    if start < orb.start or start + steps > orb.stop:
        raise ValidationError("requested window exceeds the computed orbit")
    V = [perpendicular_splitting(configuration_from_splitting(u, orb.splitting(k)))
         for k in range(start, start + steps + 1)]
    maps = []
    for n in range(steps):
        k = start + n
        g = orb.step(k)
        ginv = m.inverses[orb.atom(k)]
        v0, v1 = V[n], V[n + 1]
        off0, off1 = v0.offsets, v1.offsets
        left = v1.inverse[off1[j] : off1[j + 1]] @ g @ v0[j].basis
        right = v0.inverse[off0[i] : off0[i + 1]] @ ginv @ v1[i].basis
        if with_offset:
            gv = v0.transform(g)
            b = eval_change(t, u, gv, v1, _zero_nil(t, u, gv), check=False).matrix
            offset = v1[j].basis.T @ b @ v1[i].basis
        else:
            offset = np.zeros((left.shape[0], right.shape[1]))
        maps.append(AffineFiberMap(left, right, offset, k))
    return maps


def cocycle_log_singular_values(maps: list) -> np.ndarray:
    """Log singular values (descending) of the linear part of the composed cocycle."""
    if not maps:
        raise ValidationError("empty cocycle")
    ls = factorize_product(mp.left for mp in maps).log_singular_values()
    # R_0 R_1 ... R_{n-1} = (R_{n-1}^T ... R_0^T)^T
    rs = factorize_product(mp.right.T for mp in maps).log_singular_values()
    return np.sort(np.add.outer(ls, rs).ravel())[::-1]


@dataclass
class RateEstimate:
    rate: float
    ladder: np.ndarray
    log_distance: np.ndarray
    low_confidence: bool


def approximation_rate(m: MatrixMeasure, spec, t: AdmissibleTopology, u: AdmissibleTopology,
                       ladder, seed: int, warmup: int | None = None, floor: float = 1e-13) -> RateEstimate:
    """Slope of n -> log dist(g_{-n}^0 phi_{V(sigma^{-n} w)}(0), E_T(w)).

    Transporting subspaces by a product with condition number c costs about
    ``eps * c`` in accuracy, so points below ``max(floor, 10 eps c)`` are
    rounding noise and are dropped from the fit.
    """
    from .bundle import configuration_distance
    from .spectrum import orbit

    if spec.N < 2:
        raise ValidationError("approximation rate needs at least two exponents")
    if not refines(t, u):
        raise TopologyError("t must refine u")
    ladder = np.asarray(sorted(set(int(n) for n in ladder)))
    if ladder.size == 0 or ladder[0] < 0:
        raise ValidationError("ladder must be non-empty and non-negative")
    nmax = int(ladder[-1])
    orb = orbit(m, spec, -nmax, 0, seed, warmup)
    target = configuration_from_splitting(t, orb.splitting(0))
    dists, noise = [], []
    for n in ladder:
        xp = configuration_from_splitting(u, orb.splitting(-n))
        Vn = perpendicular_splitting(xp)
        g = orb.product(-n, 0)
        approx = configuration_from_splitting(t, Vn).transform(g)
        dists.append(configuration_distance(approx, target))
        noise.append(max(floor, 10 * np.finfo(float).eps * np.linalg.cond(g)))
    dists = np.array(dists)
    keep = dists > np.array(noise)
    logd = np.log(np.where(keep, dists, np.nan))
    if keep.sum() >= 2:
        rate = float(np.polyfit(ladder[keep], logd[keep], 1)[0])
    elif not keep.any():
        rate = float("-inf")
    else:
        rate = float("nan")
    return RateEstimate(rate, ladder, logd, int(keep.sum()) < 4)


def _unit_splitting(basis: np.ndarray) -> Splitting:
    return Splitting.from_bases([basis[:, [k]] for k in range(basis.shape[1])])


def four_index_fixture(a: float, b: float, c: float, d: float):
    """Worked N=4 change of coordinates with one-dimensional blocks.

    T has atoms {1,3},{2,3},{3},{4} and T' is T_0; V is the standard basis and
    W has w_k = e_k + ... + e_4. Returns (X, g) where X is the matrix of
    g = psi_W(phi_V(f)) in the basis w and f has entries a, b, c, d at
    (2,1), (4,1), (4,2), (4,3).
    """
    from .topology import parse_topology

    t = parse_topology("1:{1,3} 2:{2,3} 3:{3} 4:{4}")
    u = parse_topology("1:{1,2,3,4} 2:{2,3,4} 3:{3,4} 4:{4}")
    V = _unit_splitting(np.eye(4))
    B = np.tril(np.ones((4, 4)))
    W = _unit_splitting(B)
    F = np.zeros((4, 4))
    F[1, 0], F[3, 0], F[3, 1], F[3, 2] = a, b, c, d
    g = eval_change(t, u, V, W, NilMap(t, u, V, F))
    return np.linalg.solve(B, g.matrix @ B), g


def three_index_fixture(a: float, b: float, alpha: float, beta: float, gamma: float):
    """Worked N=3 filtered change of coordinates; returns the (2,1) and (3,2) entries in the basis w.

    T has atoms {1,3},{2},{3} over T_0, V is the standard basis and W has
    w_1 = e_1 + alpha e_2 + beta e_3, w_2 = e_2 + gamma e_3, w_3 = e_3.
    """
    from .topology import parse_topology

    t = parse_topology("1:{1,3} 2:{2} 3:{3}")
    u = parse_topology("1:{1,2,3} 2:{2,3} 3:{3}")
    B = np.array([[1.0, 0, 0], [alpha, 1, 0], [beta, gamma, 1]])
    V = _unit_splitting(np.eye(3))
    W = _unit_splitting(B)
    F = np.zeros((3, 3))
    F[1, 0], F[2, 1] = a, b
    g = eval_change(t, u, V, W, NilMap(t, u, V, F))
    X = np.linalg.solve(B, g.matrix @ B)
    return float(X[1, 0]), float(X[2, 1])


def nonlinearity_witness(t: AdmissibleTopology, u: AdmissibleTopology, V: Splitting, W: Splitting,
                         f: NilMap, h: NilMap) -> float:
    """Second difference c(f+h) - c(f) - c(h) + c(0) of the change map; zero when it is affine."""
    z = _zero_nil(t, u, V)
    c = lambda x: eval_change(t, u, V, W, x).matrix
    return float(np.abs(c(f + h) - c(f) - c(h) + c(z)).max())


@dataclass
class OracleRow:
    t: AdmissibleTopology
    u: AdmissibleTopology
    dims: tuple
    trials: int
    max_error: float
    max_condition: float

    def passed(self, tol: float = 1e-8) -> bool:
        return self.max_error <= tol


def oracle_equivalence(max_n: int, trials: int, seed: int, dim_choices=(1, 2)) -> list:
    """Compare eval_change with psi_W(phi_V(f)) on random instances for every pair t finer than u.

    Each pair gets its own stream; block sizes are drawn once per pair from
    ``dim_choices``. Errors are entrywise maxima relative to max(1, |oracle|).
    """
    from .bundle import random_compatible_splitting, random_nil, random_splitting
    from .randwalk import rng_for
    from .topology import enumerate_admissible

    rows = []
    pair_id = 0
    for N in range(1, max_n + 1):
        tops = enumerate_admissible(N)
        for t in tops:
            for u in tops:
                if not refines(t, u):
                    continue
                rng = rng_for(seed, N, pair_id)
                pair_id += 1
                dims = tuple(int(x) for x in rng.choice(dim_choices, size=N))
                worst = 0.0
                cond = 0.0
                for _ in range(trials):
                    V = random_splitting(dims, rng)
                    W = random_compatible_splitting(V, u, rng)
                    f = random_nil(t, u, V, rng)
                    # W is compatible by construction, so skip the subspace comparisons
                    g1 = eval_change(t, u, V, W, f, check=False).matrix
                    g2 = brute_change(V, W, f).matrix
                    worst = max(worst, float(np.abs(g1 - g2).max() / max(1.0, np.abs(g2).max())))
                    cond = max(cond, V.condition_number, W.condition_number)
                rows.append(OracleRow(t, u, dims, trials, worst, cond))
    return rows
