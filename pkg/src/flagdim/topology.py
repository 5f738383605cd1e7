"""Left filtrations, admissible topologies on {1..N} and their refinement order.

Indices are 0-based in the API; the text form is 1-based, e.g.
``"1:{1,3} 2:{2,3} 3:{3}"``.  A topology is stored by its atoms ``T(i)``,
each encoded as a bitmask over ``0..N-1``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Sequence

from .errors import InconsistencyError, TopologyError, ValidationError

__all__ = [
    "AdmissibleTopology",
    "LeftFiltration",
    "RefinementStep",
    "enumerate_admissible",
    "enumerate_left_filtrations",
    "extremes",
    "refines",
    "one_step",
    "chi_step",
    "monotone_path",
    "all_monotone_paths",
    "filtered_topology",
    "is_filtered",
    "parse_topology",
    "parse_filtration",
    "mask_of",
    "members",
]

MAX_N = 6


def mask_of(indices) -> int:
    m = 0
    for i in indices:
        m |= 1 << int(i)
    return m


def members(mask: int) -> tuple:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _fmt_set(mask: int) -> str:
    return "{" + ",".join(str(i + 1) for i in members(mask)) + "}"


@dataclass(frozen=True)
class AdmissibleTopology:
    """Topology on {0..N-1} given by its minimal open sets ``atoms[i] = T(i)``."""

    N: int
    atoms: tuple

    def __post_init__(self):
        atoms = tuple(int(a) for a in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if self.N < 1 or len(atoms) != self.N:
            raise TopologyError(f"need exactly N={self.N} atoms, got {len(atoms)}")
        full = (1 << self.N) - 1
        for i, a in enumerate(atoms):
            if not (a >> i) & 1:
                raise TopologyError(f"atom {i + 1} must contain {i + 1}")
            if a & ~full or a & ((1 << i) - 1):
                raise TopologyError(f"atom {i + 1} = {_fmt_set(a)} must lie in {{{i + 1}..{self.N}}}")
        for i, a in enumerate(atoms):
            for j in members(a):
                if atoms[j] & ~a:
                    raise TopologyError(
                        f"not closed: {j + 1} in T({i + 1}) but T({j + 1}) is not contained in T({i + 1})"
                    )

    @classmethod
    def from_sets(cls, atom_sets: Sequence, one_based: bool = False):
        shift = 1 if one_based else 0
        return cls(len(atom_sets), tuple(mask_of(i - shift for i in s) for s in atom_sets))

    def atom(self, i: int) -> tuple:
        return members(self.atoms[i])

    def atom_sets(self, one_based: bool = False) -> list:
        shift = 1 if one_based else 0
        return [tuple(i + shift for i in members(a)) for a in self.atoms]

    def closure(self, mask: int) -> int:
        """Smallest open set containing ``mask``."""
        out = 0
        for i in members(mask):
            out |= self.atoms[i]
        return out

    def is_open(self, mask: int) -> bool:
        return self.closure(mask) == mask

    @property
    def sizes(self) -> tuple:
        return tuple(bin(a).count("1") for a in self.atoms)

    def open_sets(self) -> list:
        """All open sets (bitmasks), including the empty set, in increasing order."""
        seen = {0}
        for a in self.atoms:
            seen |= {s | a for s in seen}
        return sorted(seen)

    def render(self) -> str:
        return " ".join(f"{i + 1}:{_fmt_set(a)}" for i, a in enumerate(self.atoms))

    def __str__(self):
        return self.render()


def parse_topology(text: str) -> AdmissibleTopology:
    """Parse the 1-based atom syntax ``"1:{1,3} 2:{2,3} 3:{3}"``."""
    items = re.findall(r"(\d+)\s*:\s*\{([^}]*)\}", text)
    if not items:
        raise TopologyError(f"cannot parse topology {text!r}")
    atoms = {}
    for key, body in items:
        idx = int(key)
        elems = [int(t) for t in re.split(r"[,\s]+", body.strip()) if t]
        atoms[idx] = elems
    n = len(atoms)
    if sorted(atoms) != list(range(1, n + 1)):
        raise TopologyError(f"atom labels must be 1..{n}")
    if any(e < 1 or e > n for s in atoms.values() for e in s):
        raise TopologyError("atom element out of range")
    return AdmissibleTopology.from_sets([atoms[i] for i in range(1, n + 1)], one_based=True)


def _check_n(N: int, cap: int = MAX_N):
    if not isinstance(N, int) or N < 1 or N > cap:
        raise ValidationError(f"N must be an integer in [1, {cap}], got {N!r}")


@lru_cache(maxsize=None)
def _admissible_atoms(N: int) -> tuple:
    # build T(N-1), ..., T(0); T(i) = {i} plus a set B of later indices that
    # is closed (j in B implies T(j) inside B)
    partial = [()]
    for i in range(N - 1, -1, -1):
        later = list(range(i + 1, N))
        nxt = []
        for tail in partial:
            # tail[k] is the atom of index i+1+k
            for r in range(len(later) + 1):
                for chosen in combinations(later, r):
                    b = mask_of(chosen)
                    if all(tail[j - i - 1] & ~b == 0 for j in chosen):
                        nxt.append(((1 << i) | b,) + tail)
        partial = nxt
    return tuple(sorted(partial, key=lambda t: (sum(bin(a).count("1") for a in t), t)))


def enumerate_admissible(N: int) -> list:
    """All admissible topologies on N points, finest first."""
    _check_n(N)
    return [AdmissibleTopology(N, atoms) for atoms in _admissible_atoms(N)]


def extremes(N: int) -> tuple:
    """(finest T_1, coarsest T_0)."""
    _check_n(N, cap=64)
    t1 = AdmissibleTopology(N, tuple(1 << i for i in range(N)))
    full = (1 << N) - 1
    t0 = AdmissibleTopology(N, tuple(full & ~((1 << i) - 1) for i in range(N)))
    return t1, t0


def _same_n(t: AdmissibleTopology, u: AdmissibleTopology):
    if t.N != u.N:
        raise TopologyError(f"topologies on different index sets: N={t.N} vs N={u.N}")


def refines(t: AdmissibleTopology, u: AdmissibleTopology) -> bool:
    """True iff ``t`` is finer than ``u`` (every atom of t sits inside the atom of u)."""
    _same_n(t, u)
    return all(a & ~b == 0 for a, b in zip(t.atoms, u.atoms))


@dataclass(frozen=True)
class RefinementStep:
    finer: AdmissibleTopology
    coarser: AdmissibleTopology
    pair: tuple

    def __post_init__(self):
        i, j = self.pair
        if one_step(self.finer, self.coarser) != (i, j):
            raise TopologyError("not a one-step refinement with the given pair")

    def render(self) -> str:
        i, j = self.pair
        return f"({i + 1},{j + 1})"


def one_step(t: AdmissibleTopology, u: AdmissibleTopology):
    """The pair (i, j) with u(i) = t(i) + {j} if u is one step coarser, else None."""
    if not refines(t, u):
        raise TopologyError("one_step needs comparable topologies (t finer than u)")
    diffs = [(i, b & ~a) for i, (a, b) in enumerate(zip(t.atoms, u.atoms)) if a != b]
    if len(diffs) != 1:
        return None
    i, extra = diffs[0]
    if bin(extra).count("1") != 1:
        return None
    return (i, extra.bit_length() - 1)


def _chis(spec) -> Sequence:
    return spec.chis if hasattr(spec, "chis") else spec


def chi_step(step: RefinementStep, spec) -> float:
    """Exponent gap chi_i - chi_j of a one-step refinement."""
    if not isinstance(step, RefinementStep):
        raise TopologyError("chi_step expects a RefinementStep")
    chis = _chis(spec)
    i, j = step.pair
    if len(chis) != step.finer.N:
        raise ValidationError(f"spectrum has {len(chis)} exponents, topology N={step.finer.N}")
    gap = float(chis[i] - chis[j])
    if not gap > 0:
        raise InconsistencyError(f"non-positive exponent gap {gap} for pair {step.render()}")
    return gap


def _can_add(atoms: tuple, i: int, j: int) -> bool:
    """Whether adding j to atom i keeps the family admissible."""
    a = atoms[i] | (1 << j)
    if atoms[j] & ~a:
        return False
    bit_i = 1 << i
    for m, b in enumerate(atoms):
        if m != i and b & bit_i and not (b >> j) & 1:
            return False
    return True


def _candidates(atoms: tuple, target: tuple, chis, bound: float):
    out = []
    for i, (a, b) in enumerate(zip(atoms, target)):
        extra = b & ~a
        while extra:
            low = extra & -extra
            j = low.bit_length() - 1
            extra ^= low
            gap = chis[i] - chis[j]
            if gap <= bound + 1e-12 and _can_add(atoms, i, j):
                out.append((-gap, i, j))
    out.sort()
    return out


def monotone_path(t: AdmissibleTopology, u: AdmissibleTopology, spec) -> list:
    """One-step coarsenings from t to u with non-increasing exponent gaps.

    Greedy on the largest gap (ties broken by lexicographic (i, j)), with
    exhaustive backtracking if the greedy choice dead-ends.
    """
    if not refines(t, u):
        raise TopologyError("monotone_path needs t finer than u")
    chis = list(_chis(spec))
    if len(chis) != t.N:
        raise ValidationError(f"spectrum has {len(chis)} exponents, topology N={t.N}")
    target = u.atoms
    pairs = _search(t.atoms, target, chis, float("inf"))
    if pairs is None:
        raise InconsistencyError(f"no monotone path from {t} to {u}")
    steps = []
    atoms = t.atoms
    for i, j in pairs:
        nxt = list(atoms)
        nxt[i] |= 1 << j
        nxt = tuple(nxt)
        steps.append(RefinementStep(AdmissibleTopology(t.N, atoms), AdmissibleTopology(t.N, nxt), (i, j)))
        atoms = nxt
    return steps


def _search(atoms, target, chis, bound):
    if atoms == target:
        return []
    for neg_gap, i, j in _candidates(atoms, target, chis, bound):
        nxt = list(atoms)
        nxt[i] |= 1 << j
        rest = _search(tuple(nxt), target, chis, -neg_gap)
        if rest is not None:
            return [(i, j)] + rest
    return None


def all_monotone_paths(t: AdmissibleTopology, u: AdmissibleTopology, spec) -> list:
    """Every monotone path (as lists of pairs); exhaustive, for small N only."""
    chis = list(_chis(spec))
    out = []

    def rec(atoms, bound, acc):
        if atoms == u.atoms:
            out.append(list(acc))
            return
        for neg_gap, i, j in _candidates(atoms, u.atoms, chis, bound):
            nxt = list(atoms)
            nxt[i] |= 1 << j
            acc.append((i, j))
            rec(tuple(nxt), -neg_gap, acc)
            acc.pop()

    if not refines(t, u):
        raise TopologyError("t must refine u")
    rec(t.atoms, float("inf"), [])
    return out


@dataclass(frozen=True)
class LeftFiltration:
    """Chain of prefixes {1..p} for p in ``prefix_lengths`` (always contains 0 and N)."""

    N: int
    prefix_lengths: tuple

    def __post_init__(self):
        p = tuple(sorted(set(int(x) for x in self.prefix_lengths)))
        if not p or p[0] != 0 or p[-1] != self.N or any(x < 0 or x > self.N for x in p):
            raise ValidationError(f"prefix lengths {p} must include 0 and N={self.N}")
        object.__setattr__(self, "prefix_lengths", p)

    @classmethod
    def from_inner(cls, N: int, inner: Sequence[int]):
        return cls(N, (0, *inner, N))

    @property
    def inner(self) -> tuple:
        return self.prefix_lengths[1:-1]

    def atom_end(self, i: int) -> int:
        """Length p of L(i), the smallest prefix containing index i (0-based)."""
        for p in self.prefix_lengths:
            if p > i:
                return p
        raise ValidationError(f"index {i} out of range")

    def render(self) -> str:
        return ",".join(str(p) for p in self.inner)


def parse_filtration(text: str, N: int) -> LeftFiltration:
    text = (text or "").strip()
    try:
        inner = [int(t) for t in text.split(",") if t.strip()] if text else []
    except ValueError:
        raise ValidationError(f"cannot parse filtration {text!r}") from None
    if any(p <= 0 or p >= N for p in inner):
        raise ValidationError(f"inner prefix lengths must lie in 1..{N - 1}")
    return LeftFiltration.from_inner(N, inner)


def enumerate_left_filtrations(N: int) -> list:
    _check_n(N, cap=12)
    inner = range(1, N)
    out = []
    for r in range(N):
        for chosen in combinations(inner, r):
            out.append(LeftFiltration.from_inner(N, chosen))
    return out


def filtered_topology(L: LeftFiltration) -> AdmissibleTopology:
    """T(i) = T_0(i) intersected with L(i) = {i, ..., end of the prefix containing i}."""
    atoms = []
    for i in range(L.N):
        end = L.atom_end(i)
        atoms.append(mask_of(range(i, end)))
    return AdmissibleTopology(L.N, tuple(atoms))


def is_filtered(t: AdmissibleTopology):
    """The left filtration generating t together with T_0, or None."""
    # a filtered topology has interval atoms {i..e_i} with e_i the next cut
    cuts = set()
    for i, a in enumerate(t.atoms):
        m = members(a)
        if m != tuple(range(i, m[-1] + 1)):
            return None
        cuts.add(m[-1] + 1)
    L = LeftFiltration(t.N, (0, *cuts, t.N))
    return L if filtered_topology(L) == t else None
