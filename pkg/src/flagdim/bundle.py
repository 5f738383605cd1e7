"""Configurations over admissible topologies and the nilpotent fiber coordinates.

A configuration over ``T`` assigns to every open set ``I`` a subspace ``x_I``
of dimension ``d(I) = sum(d_i for i in I)``, compatible with sums and
intersections.  Only the atom spaces ``x_{T(i)}`` are stored; other open
sets are sums of atoms and are computed on demand.

For ``T`` finer than ``T'`` and a splitting ``V`` compatible with the image
``x'`` of ``x`` in the coarser space, the fiber over ``x'`` is parametrized by
``Nil_{T,T'}(V)`` through ``phi_V(f)_I = (id + f)(sum of V_i, i in I)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    FiberMembershipError,
    GeneralPositionError,
    TopologyError,
    ValidationError,
)
from .linalg import (
    Splitting,
    Subspace,
    full_space,
    orthonormalize,
    subspace_distance,
    subspace_intersection,
    subspace_sum,
    zero_subspace,
)
from .topology import (
    AdmissibleTopology,
    LeftFiltration,
    extremes,
    filtered_topology,
    mask_of,
    members,
    refines,
)

__all__ = [
    "Configuration",
    "Flag",
    "NilMap",
    "FiberMetric",
    "configuration_from_splitting",
    "coordinate_configuration",
    "flag_from_basis",
    "perpendicular_splitting",
    "nil_basis",
    "nil_dimension",
    "nil_from_blocks",
    "random_nil",
    "phi",
    "psi",
    "assemble_filtered",
    "restrict_to_filtration",
    "fiber_distance",
    "configuration_distance",
    "random_splitting",
    "random_compatible_splitting",
]

AXIOM_TOL = 1e-7
NIL_TOL = 1e-9


def _weight(dims, mask: int) -> int:
    return sum(dims[i] for i in members(mask))


@dataclass(eq=False)
class Configuration:
    """Point of the configuration space over ``topology`` with block sizes ``dims``."""

    topology: AdmissibleTopology
    dims: tuple
    atom_spaces: tuple
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.dims = tuple(int(x) for x in self.dims)
        self.atom_spaces = tuple(self.atom_spaces)
        t = self.topology
        if len(self.dims) != t.N or len(self.atom_spaces) != t.N:
            raise DimensionMismatchError("need one block size and one atom space per index")
        d = sum(self.dims)
        for i, (a, s) in enumerate(zip(t.atoms, self.atom_spaces)):
            if s.ambient_dim != d:
                raise DimensionMismatchError(f"atom {i + 1} lives in R^{s.ambient_dim}, expected R^{d}")
            if s.rank != _weight(self.dims, a):
                raise DimensionMismatchError(
                    f"x_T({i + 1}) has dimension {s.rank}, expected {_weight(self.dims, a)}"
                )
        for i, a in enumerate(t.atoms):
            self._cache[a] = self.atom_spaces[i]
        self._cache[0] = zero_subspace(d)

    @property
    def ambient_dim(self) -> int:
        return sum(self.dims)

    def space(self, mask) -> Subspace:
        """x_I for an open set I (bitmask or iterable of 0-based indices)."""
        if not isinstance(mask, (int, np.integer)):
            mask = mask_of(mask)
        mask = int(mask)
        if mask in self._cache:
            return self._cache[mask]
        if not self.topology.is_open(mask):
            raise TopologyError(f"{members(mask)} is not open")
        out = zero_subspace(self.ambient_dim)
        for i in members(mask):
            out = subspace_sum(out, self.atom_spaces[i])
        if out.rank != _weight(self.dims, mask):
            raise GeneralPositionError(
                f"x_I has dimension {out.rank} for I={members(mask)}, expected {_weight(self.dims, mask)}",
                witness=members(mask),
            )
        self._cache[mask] = out
        return out

    def check_axioms(self, tol: float = AXIOM_TOL) -> None:
        """Verify dimensions and the sum/intersection rules on all pairs of open sets."""
        opens = self.topology.open_sets()
        for a in opens:
            self.space(a)
        for ia, a in enumerate(opens):
            for b in opens[ia + 1 :]:
                sa, sb = self.space(a), self.space(b)
                for m, got in ((a | b, subspace_sum(sa, sb)), (a & b, subspace_intersection(sa, sb))):
                    s = self.space(m)
                    if got.rank != s.rank or (s.rank and subspace_distance(got, s) > tol):
                        raise GeneralPositionError(
                            f"configuration axiom fails for I={members(a)}, J={members(b)}",
                            witness=(members(a), members(b)),
                        )

    def restrict(self, coarser: AdmissibleTopology) -> "Configuration":
        """Image under the projection to the coarser configuration space."""
        if not refines(self.topology, coarser):
            raise TopologyError("restriction needs a coarser topology")
        return Configuration(coarser, self.dims, tuple(self.space(a) for a in coarser.atoms))

    def transform(self, g) -> "Configuration":
        return Configuration(self.topology, self.dims, tuple(s.image(g) for s in self.atom_spaces))

    def to_dict(self) -> dict:
        return {
            "topology": self.topology.render(),
            "dims": list(self.dims),
            "atoms": [s.basis.tolist() for s in self.atom_spaces],
        }


def configuration_from_splitting(t: AdmissibleTopology, split: Splitting) -> Configuration:
    """x_I = sum of V_i over I."""
    if len(split) != t.N:
        raise DimensionMismatchError(f"splitting has {len(split)} parts, topology N={t.N}")
    return Configuration(t, split.dims, tuple(split.sum_of(members(a)) for a in t.atoms))


def coordinate_configuration(t: AdmissibleTopology, dims: Sequence[int]) -> Configuration:
    d = sum(dims)
    off = np.concatenate([[0], np.cumsum(dims)])
    split = Splitting(tuple(Subspace(np.eye(d)[:, off[i] : off[i + 1]]) for i in range(len(dims))))
    return configuration_from_splitting(t, split)


@dataclass(eq=False)
class Flag:
    """Partial flag indexed by a left filtration: ``spaces[k]`` is x_{1..p} for p = prefix_lengths[k+1]."""

    filtration: LeftFiltration
    dims: tuple
    spaces: tuple

    def __post_init__(self):
        self.dims = tuple(int(x) for x in self.dims)
        ps = self.filtration.prefix_lengths[1:]
        if len(self.spaces) != len(ps):
            raise DimensionMismatchError("one space per non-empty prefix is required")
        for p, s in zip(ps, self.spaces):
            if s.rank != sum(self.dims[:p]):
                raise DimensionMismatchError(f"prefix {p} space has rank {s.rank}")

    def space_for(self, p: int) -> Subspace:
        if p == 0:
            return zero_subspace(sum(self.dims))
        return self.spaces[self.filtration.prefix_lengths.index(p) - 1]


def flag_from_basis(L: LeftFiltration, dims: Sequence[int], basis) -> Flag:
    """Flag spanned by leading columns of an orthonormal (or any) basis."""
    basis = np.asarray(basis, dtype=float)
    spaces = []
    for p in L.prefix_lengths[1:]:
        k = sum(dims[:p])
        spaces.append(Subspace(np.linalg.qr(basis[:, :k])[0]) if k < basis.shape[0] else full_space(basis.shape[0]))
    return Flag(L, tuple(dims), tuple(spaces))


def perpendicular_splitting(xp: Configuration) -> Splitting:
    """V_i = x'_{T'(i)} intersected with the orthogonal complement of x'_{T'(i) minus i}."""
    t = xp.topology
    parts = []
    for i, a in enumerate(t.atoms):
        big = xp.space(a)
        rest = xp.space(a & ~(1 << i))
        if rest.rank == 0:
            v = big
        else:
            resid = big.basis - rest.basis @ (rest.basis.T @ big.basis)
            v = orthonormalize(resid, tol=1e-8)
        if v.rank != xp.dims[i]:
            raise GeneralPositionError(
                f"perpendicular part {i + 1} has rank {v.rank}, expected {xp.dims[i]}", witness=(i,)
            )
        parts.append(v)
    return Splitting(tuple(parts))


def _allowed(t: AdmissibleTopology, u: AdmissibleTopology, i: int) -> int:
    return u.atoms[i] & ~t.atoms[i]


@dataclass(eq=False)
class NilMap:
    """f in Nil_{T,T'}(V): f(V_i) inside the sum of V_j, j in T'(i) minus T(i)."""

    source: AdmissibleTopology
    target: AdmissibleTopology
    splitting: Splitting
    matrix: np.ndarray
    check: bool = True

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        d = self.splitting.ambient_dim
        if self.matrix.shape != (d, d):
            raise DimensionMismatchError(f"matrix must be {d}x{d}")
        if not refines(self.source, self.target):
            raise TopologyError("Nil maps need a finer source topology")
        if self.check:
            self.validate()

    def blocks(self) -> dict:
        """Coefficient blocks C_{ji} with f restricted to V_i = sum_j B_j C_{ji}."""
        sp = self.splitting
        off, binv = sp.offsets, sp.inverse
        out = {}
        for i in range(len(sp)):
            fi = self.matrix @ sp[i].basis
            for j in range(len(sp)):
                out[(j, i)] = binv[off[j] : off[j + 1]] @ fi
        return out

    def validate(self, tol: float = NIL_TOL) -> None:
        scale = max(1.0, float(np.abs(self.matrix).max()))
        for (j, i), c in self.blocks().items():
            if c.size and not (_allowed(self.source, self.target, i) >> j) & 1:
                if np.abs(c).max() > tol * scale:
                    raise ValidationError(
                        f"map sends V_{i + 1} outside the allowed blocks (component in V_{j + 1})"
                    )

    def coordinates(self) -> np.ndarray:
        """Flat vector of the allowed blocks, ordered by (i, j) then row-major."""
        b = self.blocks()
        vals = []
        for i in range(len(self.splitting)):
            for j in members(_allowed(self.source, self.target, i)):
                vals.append(b[(j, i)].ravel())
        return np.concatenate(vals) if vals else np.zeros(0)

    def __add__(self, other):
        return NilMap(self.source, self.target, self.splitting, self.matrix + other.matrix, check=False)


def nil_dimension(t: AdmissibleTopology, u: AdmissibleTopology, dims: Sequence[int]) -> int:
    """Fiber dimension: sum of d_i d_j over j in u(i) minus t(i)."""
    return sum(dims[i] * dims[j] for i in range(t.N) for j in members(_allowed(t, u, i)))


def _block_unit(sp: Splitting, j: int, a: int, i: int, b: int) -> np.ndarray:
    off = sp.offsets
    return np.outer(sp[j].basis[:, a], sp.inverse[off[i] + b])


def nil_basis(t: AdmissibleTopology, u: AdmissibleTopology, V: Splitting) -> list:
    """Blockwise basis of Nil_{t,u}(V): maps sending one basis vector of V_i to one of V_j."""
    if not refines(t, u):
        raise TopologyError("nil_basis needs t finer than u")
    if len(V) != t.N:
        raise DimensionMismatchError("splitting size does not match N")
    out = []
    for i in range(t.N):
        for j in members(_allowed(t, u, i)):
            for a in range(V.dims[j]):
                for b in range(V.dims[i]):
                    out.append(NilMap(t, u, V, _block_unit(V, j, a, i, b), check=False))
    return out


def nil_from_blocks(t, u, V: Splitting, blocks: dict, check: bool = True) -> NilMap:
    """Assemble f from blocks {(j, i): C_ji} (C_ji is d_j x d_i)."""
    off = V.offsets
    f = np.zeros((V.ambient_dim, V.ambient_dim))
    for (j, i), c in blocks.items():
        f += V[j].basis @ np.asarray(c, dtype=float) @ V.inverse[off[i] : off[i + 1]]
    return NilMap(t, u, V, f, check=check)


def random_nil(t, u, V: Splitting, rng: np.random.Generator, scale: float = 1.0) -> NilMap:
    blocks = {}
    for i in range(t.N):
        for j in members(_allowed(t, u, i)):
            blocks[(j, i)] = scale * rng.standard_normal((V.dims[j], V.dims[i]))
    # blocks are placed in allowed positions only, so validation is redundant
    return nil_from_blocks(t, u, V, blocks, check=False)


def phi(V: Splitting, f: NilMap) -> Configuration:
    """phi_V(f): the configuration over f.source with x_I = (id + f)(sum of V_i, i in I)."""
    t = f.source
    g = np.eye(V.ambient_dim) + f.matrix
    atoms = tuple(orthonormalize(g @ np.hstack([V[k].basis for k in members(a)])) for a in t.atoms)
    return Configuration(t, V.dims, atoms)


def psi(V: Splitting, x: Configuration, coarser: AdmissibleTopology, tol: float = 1e-8) -> NilMap:
    """Inverse of phi_V on the fiber containing ``x``.

    For each i and each basis vector v of V_i, the unique w in
    S = sum of V_j over j in T'(i) minus T(i) with v + w in x_{T(i)} gives g(v) = w.
    """
    t = x.topology
    if not refines(t, coarser):
        raise TopologyError("psi needs x over a topology finer than ``coarser``")
    d = V.ambient_dim
    off, binv = V.offsets, V.inverse
    f = np.zeros((d, d))
    for i in range(t.N - 1, -1, -1):
        allowed = members(_allowed(t, coarser, i))
        target = x.atom_spaces[i]
        vb = V[i].basis
        if not allowed:
            # fiber point must already contain V_i in x_{T(i)}
            resid = vb - target.basis @ (target.basis.T @ vb)
            if np.linalg.norm(resid) > tol * 10:
                raise FiberMembershipError(f"V_{i + 1} is not contained in x_T({i + 1})")
            continue
        s = np.hstack([V[j].basis for j in allowed])
        comp = target.complement.basis
        m = comp.T @ s
        rhs = -comp.T @ vb
        c, *_ = np.linalg.lstsq(m, rhs, rcond=None)
        if m.shape[1] and np.linalg.matrix_rank(m, tol=1e-10) < m.shape[1]:
            raise FiberMembershipError(f"singular system while solving for block {i + 1}")
        resid = m @ c - rhs
        if np.linalg.norm(resid) > tol * max(1.0, np.linalg.norm(c)):
            raise FiberMembershipError(f"x is not in the fiber over the given base point (index {i + 1})")
        f += (s @ c) @ binv[off[i] : off[i + 1]]
    return NilMap(t, coarser, V, f, check=False)


def assemble_filtered(flag: Flag, y: Configuration, tol: float = 1e-8) -> Configuration:
    """Configuration over the filtered topology with atoms x_{L(i)} intersected with y_{T_0(i)}."""
    L = flag.filtration
    N = L.N
    _, t0 = extremes(N)
    if y.topology != t0:
        raise TopologyError("second argument must be a configuration over the coarsest topology")
    if y.dims != flag.dims:
        raise DimensionMismatchError("flag and configuration have different block sizes")
    dims = flag.dims
    for p in L.prefix_lengths[1:]:
        xi = flag.space_for(p)
        for s in range(N):
            yj = y.space(t0.atoms[s])
            expect = sum(dims[s:p]) if s < p else 0
            got = subspace_intersection(xi, yj, tol=tol).rank
            if got != expect:
                raise GeneralPositionError(
                    f"dim(x_I & y_J) = {got}, expected {expect} for I={{1..{p}}}, J={{{s + 1}..{N}}}",
                    witness=(tuple(range(1, p + 1)), tuple(range(s + 1, N + 1))),
                )
    t = filtered_topology(L)
    atoms = []
    for i in range(N):
        p = L.atom_end(i)
        atoms.append(subspace_intersection(flag.space_for(p), y.space(t0.atoms[i]), tol=tol))
    return Configuration(t, dims, tuple(atoms))


def restrict_to_filtration(x: Configuration, L: LeftFiltration) -> Flag:
    t = filtered_topology(L)
    if x.topology != t:
        raise TopologyError("configuration is not over the filtered topology of L")
    spaces = tuple(x.space(mask_of(range(p))) for p in L.prefix_lengths[1:])
    return Flag(L, x.dims, spaces)


@dataclass(eq=False)
class FiberMetric:
    """Frobenius metric on a one-step fiber over ``base`` (a configuration over T')."""

    base: Configuration
    pair: tuple

    def __post_init__(self):
        i, _ = self.pair
        self._basis = self.base.space(self.base.topology.atoms[i]).basis


def fiber_distance(metric: FiberMetric, f: NilMap, g: NilMap) -> float:
    if f.splitting is not g.splitting and not np.allclose(f.splitting.matrix, g.splitting.matrix):
        raise ValidationError("maps are expressed in different splittings")
    if f.source != g.source or f.target != g.target:
        raise TopologyError("maps belong to different fibers")
    if f.target != metric.base.topology:
        raise TopologyError("metric base does not match the maps' coarser topology")
    return float(np.linalg.norm((f.matrix - g.matrix) @ metric._basis))


def configuration_distance(x1: Configuration, x2: Configuration) -> float:
    """Largest principal angle over all non-empty open sets."""
    if x1.topology != x2.topology or x1.dims != x2.dims:
        raise TopologyError("configurations over different topologies")
    best = 0.0
    for m in x1.topology.open_sets():
        if m == 0:
            continue
        a, b = x1.space(m), x2.space(m)
        if a.rank == x1.ambient_dim:
            continue
        best = max(best, subspace_distance(a, b))
    return best


def random_splitting(dims: Sequence[int], rng: np.random.Generator, spread: float = 0.3) -> Splitting:
    """Random splitting whose basis is a random rotation times (I + spread * Gaussian).

    Small ``spread`` keeps the splitting well conditioned, which matters for
    entrywise comparisons at 1e-8.
    """
    d = sum(dims)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    b = q @ (np.eye(d) + spread / np.sqrt(d) * rng.standard_normal((d, d)))
    off = np.concatenate([[0], np.cumsum(dims)])
    return Splitting(tuple(orthonormalize(b[:, off[i] : off[i + 1]]) for i in range(len(dims))))


def random_compatible_splitting(V: Splitting, u: AdmissibleTopology, rng: np.random.Generator,
                                scale: float = 0.5) -> Splitting:
    """Another splitting W with sum_{i in I} W_i = sum_{i in I} V_i for every I open in ``u``.

    W_i is the graph of a map V_i -> (sum of V_j, j in u(i) minus i).  This
    keeps every x'_{u(i)} fixed, and every open set is a union of atoms.
    """
    d = V.ambient_dim
    parts = []
    for i in range(len(V)):
        others = members(u.atoms[i] & ~(1 << i))
        b = V[i].basis
        if others:
            s = np.hstack([V[j].basis for j in others])
            b = b + scale * s @ rng.standard_normal((s.shape[1], b.shape[1]))
        parts.append(orthonormalize(b))
    return Splitting(tuple(parts))
