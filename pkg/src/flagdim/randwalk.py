"""Finitely supported step distributions on SL_d(R) and their random products.

Words follow the two-sided shift convention: a forward word lists
``g_0, g_1, ..., g_{n-1}`` and realizes ``g_{n-1} ... g_0``; a backward word
lists ``g_{-1}, g_{-2}, ..., g_{-n}`` and realizes ``g_{-1} g_{-2} ... g_{-n}``.
Products are accumulated with a QR re-orthonormalization after every step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import MeasureError, ValidationError

__all__ = [
    "MatrixMeasure",
    "Word",
    "ProductFactorization",
    "load_measure",
    "read_measure",
    "dump_measure",
    "sample_word",
    "accumulate",
    "factorize_product",
    "batch_factorize",
    "first_moment",
    "inverse_measure",
    "rng_for",
    "rotation",
    "generic_frame",
    "shipped_measures",
    "shipped_measure",
]

PROB_TOL = 1e-9
DET_TOL = 1e-9
RENORMALIZE_WINDOW = 1e-3
_EXP_CAP = 700.0


def rng_for(root_seed: int, *keys: int) -> np.random.Generator:
    """Generator for a (root seed, replica, ...) tuple.

    Every stream in the package is derived this way, so replicas are
    independent of each other and of how many replicas run.
    """
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), *map(int, keys)]))


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class MatrixMeasure:
    """Probability vector ``probs`` over the ``matrices`` (shape K x d x d)."""

    probs: np.ndarray
    matrices: np.ndarray
    mass_deficit: float = 0.0
    name: str = ""

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise MeasureError("matrices must be square and stacked as K x d x d")
        if mats.shape[0] != p.size or p.size == 0:
            raise MeasureError("need one probability per matrix and at least one atom")
        if np.any(p <= 0) or np.any(p > 1 + PROB_TOL):
            raise MeasureError("atom probabilities must lie in (0, 1]")
        total = p.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise MeasureError(f"probabilities sum to {total!r}, not 1")
        dets = np.linalg.det(mats)
        bad = np.flatnonzero(np.abs(dets - 1.0) > DET_TOL)
        if bad.size:
            raise MeasureError(
                f"atom {int(bad[0])} has determinant {dets[bad[0]]!r}; expected 1 (SL_d)"
            )
        object.__setattr__(self, "probs", p / total)
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def from_atoms(cls, atoms: Iterable, renormalize: bool = False, name: str = ""):
        """Build from ``(prob, matrix)`` pairs."""
        atoms = list(atoms)
        if not atoms:
            raise MeasureError("a measure needs at least one atom")
        probs = np.array([float(p) for p, _ in atoms])
        try:
            mats = np.array([np.asarray(m, dtype=float) for _, m in atoms])
        except ValueError as exc:
            raise MeasureError(f"inconsistent matrix shapes: {exc}") from None
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise MeasureError("every atom matrix must be square and of the same size")
        if renormalize:
            mats = _renormalize(mats)
        deficit = float(1.0 - probs.sum())
        return cls(probs, mats, mass_deficit=deficit, name=name)

    @property
    def d(self) -> int:
        return self.matrices.shape[1]

    @property
    def size(self) -> int:
        return self.probs.size

    @cached_property
    def inverses(self) -> np.ndarray:
        return np.linalg.inv(self.matrices)

    @cached_property
    def is_deterministic(self) -> bool:
        """True when every atom is the same matrix."""
        ref = self.matrices[0]
        return bool(np.all(np.abs(self.matrices - ref) <= 1e-12 * max(1.0, np.abs(ref).max())))

    @cached_property
    def is_isometric(self) -> bool:
        eye = np.eye(self.d)
        gram = np.einsum("kji,kjl->kil", self.matrices, self.matrices)
        return bool(np.all(np.abs(gram - eye) <= 1e-9))

    def atoms(self):
        return list(zip(self.probs, self.matrices))

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "renormalize": False,
            "atoms": [{"p": float(p), "m": m.tolist()} for p, m in self.atoms()],
        }


def _renormalize(mats: np.ndarray) -> np.ndarray:
    d = mats.shape[1]
    dets = np.linalg.det(mats)
    out = mats.copy()
    for k, det in enumerate(dets):
        if abs(det - 1.0) <= RENORMALIZE_WINDOW and det > 0:
            out[k] = mats[k] / det ** (1.0 / d)
    return out


def load_measure(spec_text: str, name: str = "") -> MatrixMeasure:
    """Parse the JSON measure format.

    ``{"d": int, "renormalize": bool, "atoms": [{"p": real, "m": [[...], ...]}, ...]}``
    """
    try:
        doc = json.loads(spec_text)
    except json.JSONDecodeError as exc:
        raise MeasureError(
            f"measure spec is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from None
    if not isinstance(doc, dict) or "atoms" not in doc:
        raise MeasureError("measure spec must be an object with an 'atoms' list")
    d = doc.get("d")
    atoms = []
    for k, atom in enumerate(doc["atoms"]):
        try:
            p, m = atom["p"], atom["m"]
        except (KeyError, TypeError):
            raise MeasureError(f"atom {k} needs keys 'p' and 'm'") from None
        arr = np.asarray(m, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise MeasureError(f"atom {k}: matrix is not square")
        if d is not None and arr.shape[0] != int(d):
            raise MeasureError(f"atom {k}: matrix is {arr.shape[0]}x{arr.shape[0]}, d={d}")
        atoms.append((p, arr))
    return MatrixMeasure.from_atoms(atoms, renormalize=bool(doc.get("renormalize", False)), name=name)


def shipped_measures() -> list:
    """Names of the example measures bundled with the package."""
    from importlib import resources

    root = resources.files("flagdim") / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def shipped_measure(name: str) -> MatrixMeasure:
    from importlib import resources

    path = resources.files("flagdim") / "data" / f"{name}.json"
    if not path.is_file():
        raise MeasureError(f"no shipped measure named {name!r}; have {shipped_measures()}")
    return load_measure(path.read_text(encoding="utf-8"), name=name)


def read_measure(path) -> MatrixMeasure:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MeasureError(f"cannot read measure spec {path}: {exc.strerror}") from None
    return load_measure(text, name=path.stem)


def dump_measure(m: MatrixMeasure) -> str:
    return json.dumps(m.to_dict(), indent=2)


def inverse_measure(m: MatrixMeasure) -> MatrixMeasure:
    """The measure g -> m(g^{-1})."""
    return MatrixMeasure(m.probs, m.inverses, mass_deficit=m.mass_deficit, name=f"{m.name}'")


def first_moment(m: MatrixMeasure) -> float:
    norms = np.linalg.norm(m.matrices, ord=2, axis=(1, 2))
    return float(np.dot(m.probs, np.log(norms)))


@dataclass(frozen=True)
class Word:
    indices: np.ndarray
    direction: str = "forward"

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValidationError(f"unknown word direction {self.direction!r}")
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64).reshape(-1))

    def __len__(self):
        return self.indices.size

    def application_order(self) -> np.ndarray:
        """Atom indices in the order they act (rightmost factor first)."""
        return self.indices if self.direction == "forward" else self.indices[::-1]

    def product(self, m: MatrixMeasure) -> np.ndarray:
        """Naive product, for short words and tests."""
        p = np.eye(m.d)
        for k in self.application_order():
            p = m.matrices[k] @ p
        return p


def sample_word(m: MatrixMeasure, n: int, seed, direction: str = "forward") -> Word:
    if n < 0:
        raise ValidationError("word length must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if m.size == 1:
        return Word(np.zeros(n, dtype=np.int64), direction)
    return Word(rng.choice(m.size, size=n, p=m.probs), direction)


def _positive_qr(y):
    q, r = np.linalg.qr(y)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    sign = np.where(diag < 0, -1.0, 1.0)
    q = q * sign[..., None, :]
    r = r * sign[..., :, None]
    return q, r


@dataclass
class ProductFactorization:
    """``P = q @ diag(exp(log_diag)) @ upper`` with ``upper`` unit upper triangular.

    ``log_diag`` accumulates the log moduli of the triangular diagonals of the
    per-step QR decompositions, so ``log_diag / n`` estimates the exponents.
    """

    q: np.ndarray
    log_diag: np.ndarray
    step_count: int = 0
    upper: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.upper is None:
            self.upper = np.eye(self.q.shape[0])

    def matrix(self) -> np.ndarray:
        """Dense product; overflows for long words."""
        return self.q @ (np.exp(self.log_diag)[:, None] * self.upper)

    def log_singular_values(self) -> np.ndarray:
        """Log singular values of the product, descending, without forming it."""
        return _graded_log_svd(self.log_diag, self.upper)[0]

    def left_singular_vectors(self) -> np.ndarray:
        """Orthogonal matrix of left singular vectors, sorted by singular value."""
        _, u = _graded_log_svd(self.log_diag, self.upper, want_left=True)
        return self.q @ u


def _graded_log_svd(ell, upper, want_left=False, iterations=3, gap=20.0):
    """SVD data of ``diag(exp(ell)) @ upper`` for an O(1) matrix ``upper``.

    Alternating transposed QR steps push the off-diagonal coupling between
    well separated scales below rounding; what remains is a block diagonal
    problem whose blocks have a modest dynamic range.
    """
    d = ell.size
    ell = np.asarray(ell, dtype=float).copy()
    a = np.asarray(upper, dtype=float).copy()
    # track A = L @ diag(exp(ell)) @ a @ R with L, R orthogonal
    left = np.eye(d)
    right = np.eye(d)
    transposed = False
    for _ in range(iterations):
        # A^T = R^T a^T diag(exp ell) L^T; sort the column scales descending
        perm = np.argsort(-ell, kind="stable")
        b = a.T[:, perm]
        ell_sorted = ell[perm]
        qb, rb = _positive_qr(b)
        r = np.diagonal(rb).copy()
        r[r == 0] = np.finfo(float).tiny
        diff = np.clip(ell_sorted[None, :] - ell_sorted[:, None], -745.0, _EXP_CAP)
        a_new = np.triu((rb / r[:, None]) * np.exp(diff))
        ell_new = ell_sorted + np.log(r)
        # A^T = (R^T qb) diag(exp ell_new) a_new (P^T L^T)
        left, right = right.T @ qb, left.T[perm, :]
        a, ell = a_new, ell_new
        transposed = not transposed
    order = np.argsort(-ell, kind="stable")
    clusters = []
    current = [order[0]]
    for prev, nxt in zip(order[:-1], order[1:]):
        if ell[prev] - ell[nxt] < gap:
            current.append(nxt)
        else:
            clusters.append(current)
            current = [nxt]
    clusters.append(current)
    log_s = np.empty(d)
    u_core = np.zeros((d, d))
    v_core = np.zeros((d, d))
    pos = 0
    for c in clusters:
        c = np.array(sorted(c))
        top = ell[c].max()
        block = np.exp(ell[c] - top)[:, None] * a[np.ix_(c, c)]
        ub, sb, vbt = np.linalg.svd(block)
        k = c.size
        log_s[pos : pos + k] = top + np.log(np.maximum(sb, np.finfo(float).tiny))
        u_core[c, pos : pos + k] = ub
        v_core[c, pos : pos + k] = vbt.T
        pos += k
    order = np.argsort(-log_s, kind="stable")
    log_s = log_s[order]
    if not want_left:
        return log_s, None
    # current A equals the original (transposed if odd iterations)
    # A_cur = left @ diag(exp ell) a @ right ~= left u_core S v_core^T right
    if transposed:
        # original = A_cur^T = right^T v_core S u_core^T left^T
        u = right.T @ v_core
    else:
        u = left @ u_core
    return log_s, u[:, order]


def generic_frame(d: int) -> np.ndarray:
    """A fixed orthogonal matrix in general position with respect to coordinate subspaces.

    Flags are read from products applied to this frame rather than to the
    identity, so that structured (diagonal, triangular) atoms do not leave the
    start stuck in an invariant subspace.
    """
    g = np.random.default_rng(np.random.SeedSequence([0x5EED, d])).standard_normal((d, d))
    return _positive_qr(g)[0]


def factorize_product(matrices: Iterable[np.ndarray], d: int | None = None,
                      q0: np.ndarray | None = None) -> ProductFactorization:
    """Stable factorization of ``M_n ... M_1 @ q0`` for matrices given in application order.

    ``q0`` defaults to the identity.
    """
    q = None
    ell = upper = None
    steps = 0
    for mat in matrices:
        mat = np.asarray(mat, dtype=float)
        if q is None:
            d = mat.shape[0]
            q, ell, upper = (np.eye(d) if q0 is None else np.asarray(q0, dtype=float)), np.zeros(d), np.eye(d)
        qn, r = _positive_qr(mat @ q)
        diag = np.diagonal(r).copy()
        unit = r / diag[:, None]
        diff = np.clip(ell[None, :] - ell[:, None], -745.0, _EXP_CAP)
        conj = np.where(unit != 0.0, unit * np.exp(diff), 0.0)
        upper = np.triu(conj) @ upper
        ell = ell + np.log(diag)
        q = qn
        steps += 1
    if q is None:
        if d is None:
            raise ValidationError("empty product needs an explicit dimension")
        q = np.eye(d) if q0 is None else np.asarray(q0, dtype=float)
        ell, upper = np.zeros(d), np.eye(d)
    return ProductFactorization(q=q, log_diag=ell, step_count=steps, upper=upper)


def accumulate(m: MatrixMeasure, w: Word) -> ProductFactorization:
    """Factorization of the product realized by ``w`` (see module docstring)."""
    if w.indices.size and (w.indices.min() < 0 or w.indices.max() >= m.size):
        raise ValidationError("word index out of range for this measure")
    return factorize_product((m.matrices[k] for k in w.application_order()), d=m.d)


def batch_factorize(mats: np.ndarray, orders: np.ndarray, q0: np.ndarray | None = None):
    """Vectorized QR accumulation over many words at once.

    ``orders`` is S x n (atom indices in application order); returns the
    orthogonal factors (S x d x d) and accumulated log diagonals (S x d).
    """
    orders = np.asarray(orders)
    s, n = orders.shape
    d = mats.shape[1]
    q = np.broadcast_to(np.eye(d), (s, d, d)).copy() if q0 is None else np.array(q0, dtype=float)
    ell = np.zeros((s, d))
    for t in range(n):
        q, r = _positive_qr(mats[orders[:, t]] @ q)
        ell += np.log(np.diagonal(r, axis1=1, axis2=2))
    return q, ell
