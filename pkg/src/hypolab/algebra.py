"""Exact finite-dimensional Lie algebra arithmetic.

Structure constants are held as :class:`fractions.Fraction` object arrays so
that antisymmetry, Jacobi and homomorphism checks are exact; a float copy is
exposed for the numerical modules.  Indices are 0-based throughout the Python
API (the JSON loader converts from 1-based).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

DEFAULT_DIM_CAP = 64


class AlgebraError(ValueError):
    pass


class DimensionError(AlgebraError):
    pass


class NotNilpotentError(AlgebraError):
    pass


class GradingError(AlgebraError):
    pass


class HomomorphismError(AlgebraError):
    pass


class NotHoermanderError(AlgebraError):
    pass


def _frac(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**12)
    return Fraction(x)


def _zeros_exact(*shape):
    out = np.empty(shape, dtype=object)
    out.fill(Fraction(0))
    return out


def unit(d, i, exact=True):
    """Basis vector E_i of length ``d``."""
    if exact:
        v = _zeros_exact(d)
        v[i] = Fraction(1)
        return v
    v = np.zeros(d)
    v[i] = 1.0
    return v


@dataclass(frozen=True, eq=False)
class HallBasis:
    """Hall basis of a free nilpotent Lie algebra.

    ``trees[n]`` is a generator index (int) or a pair of nested trees;
    ``children[n]`` is ``None`` for generators and ``(left, right)`` basis
    positions otherwise, so that ``element n = [element left, element right]``.
    """

    k: int
    step: int
    trees: tuple
    weights: tuple
    children: tuple

    @cached_property
    def index(self):
        return {t: n for n, t in enumerate(self.trees)}

    def per_weight(self):
        return tuple(self.weights.count(w) for w in range(1, self.step + 1))

    def label(self, n):
        def show(t):
            if isinstance(t, int):
                return f"e{t + 1}"
            return f"[{show(t[0])},{show(t[1])}]"

        return show(self.trees[n])


@dataclass(frozen=True, eq=False)
class LieAlgebraSpec:
    """Finite presentation of a Lie algebra over the basis E_0..E_{d-1}.

    ``structure[i, j, l]`` is the coefficient of E_l in [E_i, E_j].
    ``generators`` are basis positions of the Hoermander set and ``grading``
    (optional) gives a positive weight per basis position.
    """

    dim: int
    structure: np.ndarray
    generators: tuple
    grading: tuple | None = None
    name: str = ""
    hall: HallBasis | None = field(default=None, repr=False)

    def __post_init__(self):
        s = np.asarray(self.structure, dtype=object)
        if s.shape != (self.dim,) * 3:
            raise DimensionError(f"structure must have shape {(self.dim,) * 3}, got {s.shape}")
        s = np.vectorize(_frac, otypes=[object])(s) if s.size else s
        object.__setattr__(self, "structure", s)
        object.__setattr__(self, "generators", tuple(int(g) for g in self.generators))
        if self.grading is not None:
            object.__setattr__(self, "grading", tuple(int(w) for w in self.grading))
        for g in self.generators:
            if not 0 <= g < self.dim:
                raise DimensionError(f"generator index {g} outside 0..{self.dim - 1}")

    @property
    def k(self):
        return len(self.generators)

    @cached_property
    def c(self):
        """Float copy of the structure constants."""
        return self.structure.astype(float)

    @cached_property
    def sparse(self):
        """Exact nonzero structure constants as ``{(i, j): ((l, c), ...)}``."""
        out = {}
        nz = np.argwhere(np.vectorize(bool, otypes=[bool])(self.structure)) if self.dim else []
        for i, j, l in nz:
            out.setdefault((int(i), int(j)), []).append((int(l), self.structure[i, j, l]))
        return {key: tuple(v) for key, v in out.items()}

    @cached_property
    def step(self):
        """Nilpotency step, or ``None`` if not nilpotent."""
        return nilpotency_step(self)

    @cached_property
    def levels(self):
        return hoermander_levels(self)

    @cached_property
    def frame(self):
        return metric_frame(self)

    @cached_property
    def generator_matrix(self):
        """d x k float matrix whose columns are the generators X_i."""
        m = np.zeros((self.dim, self.k))
        for i, g in enumerate(self.generators):
            m[g, i] = 1.0
        return m

    def with_generators(self, generators, name=None):
        return LieAlgebraSpec(self.dim, self.structure, tuple(generators), self.grading,
                              name or self.name, self.hall)


# --------------------------------------------------------------------------
# constructors


def from_brackets(dim, brackets, generators, grading=None, name=""):
    """Build a spec from ``{(i, j): {l: coef}}`` with i < j (0-based)."""
    s = _zeros_exact(dim, dim, dim)
    for (i, j), coeffs in brackets.items():
        for l, v in coeffs.items():
            v = _frac(v)
            s[i, j, l] += v
            s[j, i, l] -= v
    return LieAlgebraSpec(dim, s, tuple(generators), grading, name)


def heisenberg3():
    return from_brackets(3, {(0, 1): {2: 1}}, (0, 1), (1, 1, 2), name="heisenberg3")


def abelian(d):
    return LieAlgebraSpec(d, _zeros_exact(d, d, d), tuple(range(d)), (1,) * d, name=f"abelian:{d}")


def direct_sum(a, b, name=None):
    """Direct sum a (+) b; generators are the union of both generator sets."""
    d = a.dim + b.dim
    s = _zeros_exact(d, d, d)
    s[: a.dim, : a.dim, : a.dim] = a.structure
    s[a.dim :, a.dim :, a.dim :] = b.structure
    gens = tuple(a.generators) + tuple(g + a.dim for g in b.generators)
    grading = None
    if a.grading is not None and b.grading is not None:
        grading = tuple(a.grading) + tuple(b.grading)
    return LieAlgebraSpec(d, s, gens, grading, name or f"{a.name}+{b.name}")


def named_spec(name):
    """Resolve ``heisenberg3``, ``abelian:<d>``, ``free:<k>:<m>`` and sums joined by ``+``."""
    name = name.strip()
    if "+" in name:
        parts = [named_spec(p) for p in name.split("+")]
        out = parts[0]
        for p in parts[1:]:
            out = direct_sum(out, p)
        return out
    if name == "heisenberg3":
        return heisenberg3()
    head, _, rest = name.partition(":")
    try:
        if head == "abelian":
            return abelian(int(rest))
        if head == "free":
            k, m = rest.split(":")
            return free_nilpotent(int(k), int(m))[0]
    except ValueError as exc:
        raise AlgebraError(f"cannot parse spec name {name!r}: {exc}") from None
    raise AlgebraError(f"unknown spec name {name!r}")


def spec_from_json(doc):
    """Load the JSON document form (1-based indices, rationals as strings)."""
    try:
        dim = int(doc["dim"])
        gens = [int(g) - 1 for g in doc["generators"]]
        grading = doc.get("grading")
        brackets = {}
        for entry in doc.get("brackets", []):
            i, j = int(entry["i"]) - 1, int(entry["j"]) - 1
            if i >= j:
                raise AlgebraError(f"bracket entries must have i < j, got ({i + 1}, {j + 1})")
            brackets[(i, j)] = {int(l) - 1: _frac(v) for l, v in entry["coeffs"].items()}
    except (KeyError, TypeError) as exc:
        raise AlgebraError(f"malformed algebra document: {exc}") from None
    return from_brackets(dim, brackets, gens, grading, name=doc.get("name", ""))


def spec_to_json(spec):
    brackets = []
    for i in range(spec.dim):
        for j in range(i + 1, spec.dim):
            coeffs = {str(l + 1): str(spec.structure[i, j, l])
                      for l in range(spec.dim) if spec.structure[i, j, l] != 0}
            if coeffs:
                brackets.append({"i": i + 1, "j": j + 1, "coeffs": coeffs})
    return {
        "dim": spec.dim,
        "generators": [g + 1 for g in spec.generators],
        "grading": list(spec.grading) if spec.grading is not None else None,
        "brackets": brackets,
        "name": spec.name,
    }


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def validate(spec):
    """Exact antisymmetry, Jacobi and grading checks.

    Violations are reported as tuples ``(kind, indices)`` with 0-based
    indices; an empty report means the spec is a (graded) Lie algebra.
    """
    c = spec.structure
    d = spec.dim
    out = []
    for i in range(d):
        for j in range(i, d):
            for l in range(d):
                if c[i, j, l] + c[j, i, l] != 0:
                    out.append(("antisymmetry", (i, j, l)))
    table = spec.sparse

    def br_e(i, v):
        # [E_i, v] for a sparse dict v
        acc = {}
        for j, cj in v.items():
            for l, cl in table.get((i, j), ()):
                acc[l] = acc.get(l, 0) + cj * cl
        return acc

    for i, j, m in itertools.combinations(range(d), 3):
        acc = {}
        for a, b, e in ((i, j, m), (j, m, i), (m, i, j)):
            # [[E_a, E_b], E_e] = -[E_e, [E_a, E_b]]
            for l, v in br_e(e, dict(table.get((a, b), ()))).items():
                acc[l] = acc.get(l, 0) - v
        if any(v != 0 for v in acc.values()):
            out.append(("jacobi", (i, j, m)))
    if spec.grading is not None:
        w = spec.grading
        if len(w) != d or any(x < 1 for x in w):
            out.append(("grading-shape", (len(w),)))
        else:
            for (i, j), terms in table.items():
                for l, _ in terms:
                    if i < j and w[l] != w[i] + w[j]:
                        out.append(("grading", (i, j, l)))
            for g in spec.generators:
                if w[g] != 1:
                    out.append(("generator-weight", (g,)))
    return ValidationReport(out)


# --------------------------------------------------------------------------
# brackets and adjoint maps


def _is_exact(*arrs):
    return any(np.asarray(a).dtype == object for a in arrs)


def _bracket_exact(spec, x, y):
    out = _zeros_exact(spec.dim)
    table = spec.sparse
    nx = [(i, v) for i, v in enumerate(x) if v != 0]
    ny = [(j, v) for j, v in enumerate(y) if v != 0]
    for i, a in nx:
        for j, b in ny:
            for l, cl in table.get((i, j), ()):
                out[l] += a * b * cl
    return out


def bracket(spec, x, y):
    """[x, y] for vectors (or stacks of vectors, last axis = basis)."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape[-1] != spec.dim or y.shape[-1] != spec.dim:
        raise DimensionError(f"vectors of length {x.shape[-1]}, {y.shape[-1]} for dim {spec.dim}")
    if _is_exact(x, y) and x.ndim == 1 and y.ndim == 1:
        return _bracket_exact(spec, x, y)
    c = spec.structure if _is_exact(x, y) else spec.c
    return np.einsum("...i,...j,ijl->...l", x, y, c)


def ad_matrix(spec, x):
    """Matrix of ad_x = [x, .] (batched over leading axes of ``x``)."""
    x = np.asarray(x)
    if x.shape[-1] != spec.dim:
        raise DimensionError(f"vector of length {x.shape[-1]} for dim {spec.dim}")
    c = spec.structure if _is_exact(x) else spec.c
    return np.einsum("...i,ijl->...lj", x, c)


def _require_step(spec):
    m = spec.step
    if m is None:
        raise NotNilpotentError(f"{spec.name or 'spec'} is not nilpotent")
    return m


def Ad_of_exp(spec, w):
    """Ad_{exp w} = sum_{j<m} ad_w^j / j!, exact for a step-m nilpotent algebra."""
    m = _require_step(spec)
    a = ad_matrix(spec, w)
    exact = a.dtype == object
    eye = np.eye(spec.dim, dtype=object) * Fraction(1) if exact else np.eye(spec.dim)
    out = np.broadcast_to(eye, a.shape).copy()
    term = out.copy()
    for j in range(1, m):
        term = term @ a
        out = out + term * (Fraction(1, math.factorial(j)) if exact else 1.0 / math.factorial(j))
    return out


# --------------------------------------------------------------------------
# exact linear algebra helpers


class _ExactSpan:
    """Incremental reduced row echelon form over the rationals."""

    def __init__(self):
        self.rows = []  # (pivot, row) with row[pivot] == 1

    def __len__(self):
        return len(self.rows)

    def reduce(self, v):
        v = [_frac(x) for x in v]
        for p, r in self.rows:
            if v[p] != 0:
                f = v[p]
                v = [a - f * b for a, b in zip(v, r)]
        return v

    def add(self, v):
        """Insert ``v``; return True iff it enlarged the span."""
        v = self.reduce(v)
        p = next((i for i, x in enumerate(v) if x != 0), None)
        if p is None:
            return False
        inv = 1 / v[p]
        v = [x * inv for x in v]
        self.rows = [(q, [a - r[p] * b for a, b in zip(r, v)]) if r[p] != 0 else (q, r)
                     for q, r in self.rows]
        self.rows.append((p, v))
        return True

    def contains(self, v):
        return all(x == 0 for x in self.reduce(v))


def exact_rank(vectors):
    span = _ExactSpan()
    for v in vectors:
        span.add(v)
    return len(span)


# --------------------------------------------------------------------------
# Hoermander levels, nilpotency


@dataclass(frozen=True, eq=False)
class HoermanderLevels:
    """Iterated bracket levels of the generating set.

    ``levels[r]`` is a list of ``(alpha, vector)`` with ``alpha`` a tuple of
    generator positions ``(a_0, ..., a_r)`` and ``vector = X_alpha =
    ad_{X_{a_r}} ... ad_{X_{a_1}} X_{a_0}`` (exact).  ``completion`` lists the
    ``(alpha, vector)`` pairs chosen greedily to complete the generators to a
    basis.
    """

    levels: list
    generating: bool
    depth: int | None
    completion: list


def hoermander_levels(spec, max_depth=12):
    if not spec.generators:
        raise AlgebraError("empty generating set")
    d = spec.dim
    gens = [unit(d, g) for g in spec.generators]
    levels = [[((i,), v) for i, v in enumerate(gens)]]
    span = _ExactSpan()
    for v in gens:
        span.add(v)
    completion = []
    if len(span) == d:
        return HoermanderLevels(levels, True, 0, completion)
    for r in range(1, max_depth + 1):
        new = []
        # generator loop outermost: Sigma_r = {[X_i, V] : V in Sigma_{r-1}}
        for i, xi in enumerate(gens):
            for alpha, v in levels[-1]:
                new.append((alpha + (i,), bracket(spec, xi, v)))
        levels.append(new)
        grew = False
        for alpha, v in new:
            if any(x != 0 for x in v) and span.add(v):
                completion.append((alpha, v))
                grew = True
        if len(span) == d:
            return HoermanderLevels(levels, True, r, completion)
        if not grew:
            break
    return HoermanderLevels(levels, False, None, completion)


def lower_central_series_ranks(spec, max_len=None):
    """Ranks of g = g^1, g^2 = [g, g], g^3 = [g, g^2], ..."""
    d = spec.dim
    basis = [unit(d, i) for i in range(d)]
    current = basis
    ranks = [d]
    max_len = max_len or d + 1
    while len(ranks) <= max_len:
        span = _ExactSpan()
        nxt = []
        for a in basis:
            for b in current:
                v = bracket(spec, a, b)
                if span.add(v):
                    nxt.append(v)
        ranks.append(len(nxt))
        if not nxt or ranks[-1] == ranks[-2]:
            return ranks
        current = nxt
    return ranks


def nilpotency_step(spec):
    """Smallest m with all (m+1)-fold brackets zero; ``None`` if not nilpotent."""
    ranks = lower_central_series_ranks(spec)
    if ranks[-1] != 0:
        return None
    # ranks[j] is the rank of g^{j+1}; g^{m+1} = 0 first at j = m
    return max(len(ranks) - 1, 1)


# --------------------------------------------------------------------------
# free nilpotent algebras


def _mobius(n):
    res, p, m = 1, 2, n
    while p * p <= m:
        if m % p == 0:
            m //= p
            if m % p == 0:
                return 0
            res = -res
        p += 1
    if m > 1:
        res = -res
    return res


def witt_dimension(k, n):
    """Dimension of the weight-n component of the free Lie algebra on k letters."""
    return sum(_mobius(dd) * k ** (n // dd) for dd in range(1, n + 1) if n % dd == 0) // n


def hall_basis(k, m):
    """Hall basis up to weight ``m``.

    Elements are ordered by weight, then by construction order; ``[u, v]``
    (positions u < v) is a Hall element iff ``v`` is a generator or
    ``v = [x, y]`` with ``x <= u``.
    """
    trees = [i for i in range(k)]
    weights = [1] * k
    children = [None] * k
    for n in range(2, m + 1):
        for v in range(len(trees)):
            for u in range(v):
                if weights[u] + weights[v] != n:
                    continue
                if children[v] is not None and children[v][0] > u:
                    continue
                trees.append((trees[u], trees[v]))
                weights.append(n)
                children.append((u, v))
    return HallBasis(k, m, tuple(trees), tuple(weights), tuple(children))


def _free_structure(hall):
    d = len(hall.trees)
    idx = {ch: n for n, ch in enumerate(hall.children) if ch is not None}
    memo = {}

    def add(acc, vec, coef):
        for key, val in vec.items():
            acc[key] = acc.get(key, 0) + coef * val

    def br_vec(x, y):
        out = {}
        for a, ca in x.items():
            for b, cb in y.items():
                add(out, br(a, b), ca * cb)
        return {key: v for key, v in out.items() if v}

    def br(a, b):
        key = (a, b)
        if key in memo:
            return memo[key]
        if a == b or hall.weights[a] + hall.weights[b] > hall.step:
            res = {}
        elif a > b:
            res = {n: -v for n, v in br(b, a).items()}
        elif hall.children[b] is None or hall.children[b][0] <= a:
            res = {idx[(a, b)]: Fraction(1)}
        else:
            x, y = hall.children[b]
            # [a, [x, y]] = [[a, x], y] + [x, [a, y]]
            res = {}
            add(res, br_vec(br(a, x), {y: Fraction(1)}), 1)
            add(res, br_vec({x: Fraction(1)}, br(a, y)), 1)
            res = {n: v for n, v in res.items() if v}
        memo[key] = res
        return res

    s = _zeros_exact(d, d, d)
    for a in range(d):
        for b in range(d):
            for l, v in br(a, b).items():
                s[a, b, l] = Fraction(v)
    return s


def free_nilpotent(k, m, dim_cap=DEFAULT_DIM_CAP):
    """Free nilpotent Lie algebra L(k, m) in its Hall basis."""
    if k < 2 or m < 1:
        raise AlgebraError("free_nilpotent needs k >= 2 and m >= 1")
    d = sum(witt_dimension(k, n) for n in range(1, m + 1))
    if d > dim_cap:
        raise DimensionError(f"L({k},{m}) has dimension {d} > cap {dim_cap}")
    hall = hall_basis(k, m)
    spec = LieAlgebraSpec(d, _free_structure(hall), tuple(range(k)), hall.weights,
                          name=f"free:{k}:{m}", hall=hall)
    return spec, hall


def lift_homomorphism(free, target, hall=None):
    """Exact matrix of the homomorphism L(k, m) -> g sending e_i to X_i."""
    hall = hall or free.hall
    if hall is None:
        raise AlgebraError("free spec carries no Hall basis")
    if target.k != hall.k:
        raise HomomorphismError(f"generator counts differ: {hall.k} vs {target.k}")
    tstep = target.step
    if tstep is None or tstep > hall.step:
        raise HomomorphismError(f"target step {tstep} exceeds free step {hall.step}")
    images = []
    for n, ch in enumerate(hall.children):
        if ch is None:
            images.append(unit(target.dim, target.generators[hall.trees[n]]))
        else:
            images.append(bracket(target, images[ch[0]], images[ch[1]]))
    pi = np.stack(images, axis=1)
    for a in range(free.dim):
        for b in range(free.dim):
            lhs = _zeros_exact(target.dim)
            for l, cl in free.sparse.get((a, b), ()):
                lhs = lhs + cl * pi[:, l]
            rhs = bracket(target, pi[:, a], pi[:, b])
            if any(x != 0 for x in lhs - rhs):
                raise HomomorphismError(f"Pi[e_{a},e_{b}] != [Pi e_{a}, Pi e_{b}]")
    return pi


# --------------------------------------------------------------------------
# word expansion, dilations, curvature


def bracket_word_expansion(alpha):
    """Expand X_alpha = ad_{X_{a_r}} ... ad_{X_{a_1}} X_{a_0} into words.

    Returns ``[(word, eps), ...]`` where ``word`` lists operator labels in
    left-to-right composition order: ``(2, 1)`` means X_2 X_1.  Equal words
    are merged, so coefficients may exceed 1 in absolute value.
    """
    alpha = tuple(alpha)
    if not alpha:
        raise AlgebraError("empty multi-index")
    poly = {(alpha[0],): 1}
    for a in alpha[1:]:
        nxt = {}
        for w, c in poly.items():
            nxt[(a,) + w] = nxt.get((a,) + w, 0) + c
            nxt[w + (a,)] = nxt.get(w + (a,), 0) - c
        poly = {w: c for w, c in nxt.items() if c}
    return sorted(poly.items(), key=lambda t: t[0], reverse=True)


def dilation_matrix(spec, r):
    """Diagonal Phi_r with entries r^weight; checked to be an automorphism."""
    if spec.grading is None:
        raise GradingError(f"{spec.name or 'spec'} has no grading")
    w = np.asarray(spec.grading, dtype=float)
    phi = np.diag(float(r) ** w)
    c = spec.c
    lhs = np.einsum("ijl,lm->ijm", c, phi)  # Phi [E_i, E_j]
    rhs = np.einsum("ai,bj,abm->ijm", phi, phi, c)
    if not np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(rhs).max(initial=0))):
        raise GradingError("grading does not define an automorphism")
    return phi


def ricci_lower_bound(spec, basis=None):
    """Smallest Ricci eigenvalue of the left-invariant metric with ``basis`` orthonormal.

    ``basis`` is a d x d matrix of column vectors; by default the generators,
    which must then span the algebra.  Nilpotent (hence unimodular) only.
    """
    _require_step(spec)
    if basis is None:
        if exact_rank([unit(spec.dim, g) for g in spec.generators]) < spec.dim:
            raise NotHoermanderError("generators do not span the algebra")
        basis = spec.generator_matrix
    b = np.asarray(basis, dtype=float)
    if b.shape != (spec.dim, spec.dim) or abs(np.linalg.det(b)) < 1e-12:
        raise DimensionError("basis must be an invertible d x d matrix")
    binv = np.linalg.inv(b)
    # structure constants in the orthonormal frame
    c = np.einsum("ai,bj,abl,ml->ijm", b, b, spec.c, binv)
    # Ric(x, y) = -1/2 sum_i <[x,e_i],[y,e_i]> + 1/4 sum_ij <[e_i,e_j],x><[e_i,e_j],y>
    ric = -0.5 * np.einsum("xim,yim->xy", c, c) + 0.25 * np.einsum("ijx,ijy->xy", c, c)
    return float(np.linalg.eigvalsh(0.5 * (ric + ric.T)).min())


# --------------------------------------------------------------------------
# metric frame


@dataclass(frozen=True, eq=False)
class MetricFrame:
    """Basis {X_i} u {Y_j} declared orthonormal.

    ``B`` has the frame vectors as columns (E coordinates); ``alphas[j]`` is
    the multi-index of Y_j as an iterated bracket of generator positions.
    """

    B: np.ndarray
    Binv: np.ndarray
    alphas: tuple

    @property
    def gram(self):
        """Metric in E coordinates."""
        return self.Binv.T @ self.Binv


def metric_frame(spec):
    lv = spec.levels
    if not lv.generating:
        raise NotHoermanderError(f"{spec.name or 'spec'}: generators do not satisfy the Hoermander condition")
    cols = [unit(spec.dim, g, exact=False) for g in spec.generators]
    cols += [np.asarray(v, dtype=float) for _, v in lv.completion]
    b = np.stack(cols, axis=1)
    return MetricFrame(b, np.linalg.inv(b), tuple(a for a, _ in lv.completion))
