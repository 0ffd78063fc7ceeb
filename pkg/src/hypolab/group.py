"""Nilpotent group arithmetic in exponential coordinates of the first kind.

All array-valued functions accept batches: the last axis holds the d
coordinates and any leading axes are broadcast.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from . import algebra
from ._bch_table import BCH_TERMS, DEPTH

JACOBIAN_TOL = 1e-10
FD_STEP = 1e-5


class GroupError(ValueError):
    pass


def _bernoulli_plus(n_max):
    """Bernoulli numbers B_0..B_{n_max} with the B_1 = +1/2 convention."""
    b = [Fraction(0)] * (n_max + 1)
    b[0] = Fraction(1)
    for m in range(1, n_max + 1):
        b[m] = -sum(Fraction(math.comb(m + 1, j)) * b[j] for j in range(m)) / (m + 1)
    if n_max >= 1:
        b[1] = Fraction(1, 2)
    return b


class Group:
    """Simply connected nilpotent group attached to a :class:`LieAlgebraSpec`."""

    def __init__(self, spec):
        step = spec.step
        if step is None:
            raise algebra.NotNilpotentError(f"{spec.name or 'spec'} is not nilpotent")
        if step > DEPTH:
            raise GroupError(f"step {step} exceeds BCH table depth {DEPTH}")
        self.spec = spec
        self.dim = spec.dim
        self.step = step
        d = spec.dim
        self._c2 = spec.c.reshape(d * d, d)
        self._terms = [(w, float(q)) for w, q in BCH_TERMS if len(w) <= step]

    def __repr__(self):
        return f"Group({self.spec.name or self.dim})"

    # -- algebra helpers -------------------------------------------------

    def br(self, x, y):
        """Float bracket, batched; uses one matrix product over the d*d pairs."""
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        d = self.dim
        outer = (x[..., :, None] * y[..., None, :]).reshape(x.shape[:-1] + (d * d,))
        return outer @ self._c2

    def ad(self, w):
        return algebra.ad_matrix(self.spec, np.asarray(w, float))

    # -- multiplication --------------------------------------------------

    def _eval_terms(self, a, b, terms):
        memo = {}

        def word(w):
            if w in memo:
                return memo[w]
            if len(w) == 1:
                v = a if w == "a" else b
            else:
                v = self.br(a if w[0] == "a" else b, word(w[1:]))
            memo[w] = v
            return v

        out = 0.0
        for w, q in terms:
            out = out + q * word(w)
        return out

    def bch(self, w1, w2):
        """log(exp(w1) exp(w2)), exact for the group's nilpotency step."""
        a, b = np.broadcast_arrays(np.asarray(w1, float), np.asarray(w2, float))
        if a.shape[-1] != self.dim:
            raise algebra.DimensionError(f"coordinates of length {a.shape[-1]} for dim {self.dim}")
        if self.step == 1:
            return a + b
        if self.step == 2:
            return a + b + 0.5 * self.br(a, b)
        return self._eval_terms(a, b, self._terms)

    def multiply(self, g, h):
        return self.bch(g, h)

    @staticmethod
    def inverse(g):
        return -np.asarray(g, float)

    def adjoint(self, g):
        """Ad_g for g = exp(w)."""
        return algebra.Ad_of_exp(self.spec, np.asarray(g, float))

    # -- translation Jacobians -------------------------------------------

    @cached_property
    def _psi_coeffs(self):
        bern = _bernoulli_plus(self.step)
        return [float(bern[j] / math.factorial(j)) for j in range(self.step)]

    def translation_jacobians(self, g):
        """(M_L(g), M_R(g)) with M_L X = d/de bch(w, eX) and M_R X = d/de bch(eX, w).

        Evaluated by the Bernoulli series psi(+-ad_w), psi(z) = z / (1 - e^{-z}).
        """
        a = self.ad(g)
        eye = np.broadcast_to(np.eye(self.dim), a.shape)
        ml = np.array(eye, dtype=float)
        mr = np.array(eye, dtype=float)
        power = np.array(eye, dtype=float)
        for j, coef in enumerate(self._psi_coeffs[1:], start=1):
            power = power @ a
            ml = ml + coef * power
            mr = mr + coef * (-1) ** j * power
        return ml, mr

    def translation_jacobians_dynkin(self, g):
        """Same matrices by differentiating the Dynkin table in its linear slot."""
        w = np.asarray(g, float)
        if w.ndim != 1:
            raise GroupError("Dynkin cross-check expects a single point")
        d = self.dim
        eye = np.eye(d)
        ws = np.broadcast_to(w, (d, d))
        left = [(t, q) for t, q in self._terms if t.count("b") == 1]
        right = [(t, q) for t, q in self._terms if t.count("a") == 1]
        ml = self._eval_terms(ws, eye, left).T
        mr = self._eval_terms(eye, ws, right).T
        return ml, mr

    def check_jacobians(self, g, tol=JACOBIAN_TOL):
        """Maximum disagreement between the two Jacobian evaluations; raises above ``tol``."""
        a1, b1 = self.translation_jacobians(g)
        a2, b2 = self.translation_jacobians_dynkin(g)
        err = max(np.abs(a1 - a2).max(), np.abs(b1 - b2).max())
        if err > tol:
            raise GroupError(f"translation Jacobian methods disagree by {err:.3e}")
        return err

    # -- derivatives of scalar functions ---------------------------------

    def left_deriv(self, f, g, x):
        """X~f(g) = d/de f(g exp(eX))."""
        ml, _ = self.translation_jacobians(g)
        return np.einsum("...i,...ij,...j->...", f.gradient(g), ml, np.asarray(x, float))

    def right_deriv(self, f, g, x):
        """X^f(g) = d/de f(exp(eX) g)."""
        _, mr = self.translation_jacobians(g)
        return np.einsum("...i,...ij,...j->...", f.gradient(g), mr, np.asarray(x, float))

    def full_gradient(self, f, g):
        """(X~_1 f, ..., X~_k f)(g) as the last axis."""
        ml, _ = self.translation_jacobians(g)
        return np.einsum("...i,...ij->...j", f.gradient(g), ml @ self.spec.generator_matrix)

    def right_gradient(self, f, g):
        _, mr = self.translation_jacobians(g)
        return np.einsum("...i,...ij->...j", f.gradient(g), mr @ self.spec.generator_matrix)

    def left_deriv_fd(self, f, g, x, eps=FD_STEP):
        x = np.asarray(x, float)
        return (f(self.bch(g, eps * x)) - f(self.bch(g, -eps * x))) / (2 * eps)

    def right_deriv_fd(self, f, g, x, eps=FD_STEP):
        x = np.asarray(x, float)
        return (f(self.bch(eps * x, g)) - f(self.bch(-eps * x, g))) / (2 * eps)

    # -- dilations -------------------------------------------------------

    @cached_property
    def _weights(self):
        if self.spec.grading is None:
            raise algebra.GradingError(f"{self.spec.name or 'spec'} has no grading")
        return np.asarray(self.spec.grading, float)

    def dilate_point(self, g, r):
        return np.asarray(g, float) * float(r) ** self._weights

    def dilate_function(self, f, r):
        """f o phi_r within the same polynomial-times-envelope family."""
        self._weights  # raises without a grading
        algebra.dilation_matrix(self.spec, r)
        return f.scaled(float(r) ** self._weights)

    def generators(self):
        """Generator vectors as rows of a k x d array."""
        return self.spec.generator_matrix.T.copy()


@dataclass(frozen=True, eq=False)
class GroupPoint:
    """exp(coords) in a given group."""

    group: Group
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, float)
        if c.shape != (self.group.dim,) or not np.all(np.isfinite(c)):
            raise GroupError(f"bad coordinates {c!r}")
        object.__setattr__(self, "coords", c)

    @classmethod
    def identity(cls, group):
        return cls(group, np.zeros(group.dim))

    def _check(self, other):
        if other.group is not self.group and other.group.spec is not self.group.spec:
            raise GroupError("points belong to different groups")

    def __mul__(self, other):
        self._check(other)
        return GroupPoint(self.group, self.group.multiply(self.coords, other.coords))

    def inverse(self):
        return GroupPoint(self.group, -self.coords)

    def adjoint(self):
        return self.group.adjoint(self.coords)

    def dilate(self, r):
        return GroupPoint(self.group, self.group.dilate_point(self.coords, r))
