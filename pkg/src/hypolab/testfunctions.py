"""Polynomial times anisotropic Gaussian envelope test functions."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class TestFunction:
    """f(w) = sum_m coef_m w^{exps_m} * exp(-sum_i rates_i w_i^2).

    ``exps`` is an (M, d) integer array, ``coefs`` length M and ``rates``
    length d with non-negative entries.
    """

    __test__ = False  # not a pytest class

    exps: np.ndarray
    coefs: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.exps, dtype=np.int64))
        c = np.atleast_1d(np.asarray(self.coefs, dtype=float))
        r = np.atleast_1d(np.asarray(self.rates, dtype=float))
        if e.shape[0] != c.shape[0] or e.shape[1] != r.shape[0]:
            raise ValueError(f"inconsistent shapes exps {e.shape}, coefs {c.shape}, rates {r.shape}")
        if (e < 0).any() or (r < 0).any() or not np.all(np.isfinite(c)) or not np.all(np.isfinite(r)):
            raise ValueError("exponents and rates must be non-negative, coefficients finite")
        object.__setattr__(self, "exps", e)
        object.__setattr__(self, "coefs", c)
        object.__setattr__(self, "rates", r)

    @property
    def dim(self):
        return self.rates.shape[0]

    @property
    def degree(self):
        return int(self.exps.sum(axis=1).max(initial=0))

    @property
    def bounded(self):
        """True when bounded with bounded first derivatives."""
        live = self.exps[self.coefs != 0]
        if not live.size or live.sum(axis=1).max() == 0:
            return True
        # every variable carrying a positive power needs a positive rate
        return bool(np.all(self.rates[live.any(axis=0)] > 0))

    # -- constructors ----------------------------------------------------

    @classmethod
    def constant(cls, d, value=1.0):
        return cls(np.zeros((1, d), int), [value], np.zeros(d))

    @classmethod
    def coordinate(cls, d, i, rate=0.0):
        e = np.zeros((1, d), int)
        e[0, i] = 1
        rates = np.full(d, float(rate)) if np.isscalar(rate) else rate
        return cls(e, [1.0], rates)

    @classmethod
    def from_terms(cls, d, terms, rates):
        """``terms`` maps exponent tuples to coefficients."""
        items = list(terms.items()) or [((0,) * d, 0.0)]
        return cls(np.array([k for k, _ in items]), np.array([v for _, v in items]), rates)

    # -- evaluation ------------------------------------------------------

    def _power_table(self, w):
        """w_i^e for e = 0..max exponent, shape (..., d, E + 1)."""
        top = int(self.exps.max(initial=0))
        pw = np.empty(w.shape + (top + 1,))
        pw[..., 0] = 1.0
        for e in range(1, top + 1):
            pw[..., e] = pw[..., e - 1] * w
        return pw

    def _factors(self, pw):
        # factors[..., m, i] = w_i^{exps[m, i]}
        d = self.dim
        return pw[..., np.arange(d)[None, :], self.exps]

    def _monomials(self, w):
        return np.prod(self._factors(self._power_table(w)), axis=-1)

    def envelope(self, w):
        w = np.asarray(w, float)
        return np.exp(-np.sum(self.rates * w * w, axis=-1))

    def __call__(self, w):
        w = np.asarray(w, float)
        return (self._monomials(w) @ self.coefs) * self.envelope(w)

    value = __call__

    def gradient(self, w):
        """Coordinate gradient, last axis = d."""
        w = np.asarray(w, float)
        pw = self._power_table(w)
        fac = self._factors(pw)
        poly = np.prod(fac, axis=-1) @ self.coefs
        env = self.envelope(w)
        dpoly = np.empty(w.shape)
        for i in range(self.dim):
            e = self.exps[:, i]
            live = e > 0
            if not live.any():
                dpoly[..., i] = 0.0
                continue
            sub = fac[..., live, :].copy()
            sub[..., i] = pw[..., i, e[live] - 1]
            dpoly[..., i] = np.prod(sub, axis=-1) @ (self.coefs[live] * e[live])
        return (dpoly - 2.0 * self.rates * w * poly[..., None]) * env[..., None]

    def gradient_fd(self, w, eps=1e-6):
        w = np.asarray(w, float)
        out = np.empty(w.shape)
        for i in range(self.dim):
            step = np.zeros(self.dim)
            step[i] = eps
            out[..., i] = (self(w + step) - self(w - step)) / (2 * eps)
        return out

    # -- transforms ------------------------------------------------------

    def scaled(self, s):
        """w -> f(s * w) for a per-coordinate scale vector ``s``."""
        s = np.asarray(s, float)
        coefs = self.coefs * np.prod(s ** self.exps, axis=1)
        return TestFunction(self.exps, coefs, self.rates * s * s)

    # -- serialization ---------------------------------------------------

    def to_json(self):
        return {
            "monomials": [{"exps": [int(x) for x in e], "coef": float(c)}
                          for e, c in zip(self.exps, self.coefs)],
            "envelope_rates": [float(r) for r in self.rates],
        }

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        mons = doc["monomials"]
        rates = doc["envelope_rates"]
        if not mons:
            return cls.constant(len(rates), 0.0)
        return cls([m["exps"] for m in mons], [m["coef"] for m in mons], rates)


@dataclass(frozen=True, eq=False)
class PullbackFunction:
    """f o pi on a covering group, where pi acts on coordinates by the matrix ``pi``."""

    f: TestFunction
    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))

    @property
    def dim(self):
        return self.pi.shape[1]

    def __call__(self, w):
        return self.f(np.asarray(w, float) @ self.pi.T)

    value = __call__

    def gradient(self, w):
        return self.f.gradient(np.asarray(w, float) @ self.pi.T) @ self.pi


def random_test_function(rng, d, degree=3, n_terms=4, rate_range=(0.05, 1.0), coef_bound=1.0,
                         weights=None):
    """Random sparse polynomial with per-coordinate envelope rates.

    ``weights`` (a grading) makes the total weighted degree respect ``degree``.
    """
    w = np.ones(d, int) if weights is None else np.asarray(weights, int)
    terms = {}
    tries = 0
    while len(terms) < n_terms and tries < 200 * n_terms:
        tries += 1
        e = np.zeros(d, int)
        budget = rng.integers(1, degree + 1)
        while True:
            ok = np.flatnonzero(w <= budget - int(e @ w))
            if not ok.size:
                break
            i = rng.choice(ok)
            e[i] += 1
            if rng.random() < 0.4:
                break
        terms.setdefault(tuple(int(x) for x in e), float(rng.uniform(-coef_bound, coef_bound)))
    rates = rng.uniform(*rate_range, size=d)
    return TestFunction.from_terms(d, terms, rates)
