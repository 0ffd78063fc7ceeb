"""Discretized Wiener space and the rolling-map SDE.

Paths are handled in batches: ``increments`` has shape (N, n, k) and the
group trajectory ``coords`` has shape (N, n + 1, d).  The horizon of a path
equals the requested diffusion time t = n * dt.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import algebra, rng
from .group import Group


@dataclass(frozen=True, eq=False)
class CameronMartinVector:
    """Piecewise-constant derivative samples hdot of shape (..., n, k)."""

    hdot: np.ndarray
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "hdot", np.asarray(self.hdot, float))

    def inner(self, other):
        other = other.hdot if isinstance(other, CameronMartinVector) else np.asarray(other, float)
        return np.sum(self.hdot * other, axis=(-2, -1)) * self.dt

    def norm(self):
        return np.sqrt(self.inner(self))

    def wiener_integral(self, increments):
        """sum_{s,i} hdot_{s,i} db_{s,i}."""
        return np.sum(self.hdot * increments, axis=(-2, -1))

    @classmethod
    def zeros(cls, n, k, dt):
        return cls(np.zeros((n, k)), dt)


def as_group(spec_or_group):
    return spec_or_group if isinstance(spec_or_group, Group) else Group(spec_or_group)


def roll(increments, group, start=None, s0=0):
    """Exponential-Euler trajectory xi_{s+1} = xi_s exp(sum_i db_{i,s} X_i).

    ``start`` (shape (N, s0 + 1, d)) supplies an already-rolled prefix.
    """
    group = as_group(group)
    inc = np.asarray(increments, float)
    N, n, k = inc.shape
    gens = group.generators()
    if gens.shape[0] != k:
        raise algebra.DimensionError(f"{k} driving coordinates for {gens.shape[0]} generators")
    coords = np.empty((N, n + 1, group.dim))
    if start is None:
        coords[:, 0] = 0.0
        s0 = 0
    else:
        coords[:, : s0 + 1] = start[:, : s0 + 1]
    steps = inc @ gens  # (N, n, d)
    for s in range(s0, n):
        coords[:, s + 1] = group.bch(coords[:, s], steps[:, s])
    return coords


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """A batch of N discretized Brownian paths and their group trajectories."""

    group: Group
    dt: float
    increments: np.ndarray
    coords: np.ndarray
    seed: int | None = None
    stream: int | None = None

    @property
    def N(self):
        return self.increments.shape[0]

    @property
    def n(self):
        return self.increments.shape[1]

    @property
    def k(self):
        return self.increments.shape[2]

    @property
    def t(self):
        return self.n * self.dt

    @property
    def endpoint(self):
        return self.coords[:, -1]

    @cached_property
    def ad_traj(self):
        """Ad_{xi_s} for s = 0..n in E coordinates, shape (N, n+1, d, d)."""
        return ad_trajectory(self)

    def with_increments(self, increments, s0=0):
        """New batch with replaced increments, re-rolled from step ``s0``."""
        coords = roll(increments, self.group, start=self.coords, s0=s0)
        return DiscretePath(self.group, self.dt, increments, coords, self.seed, self.stream)

    def subset(self, idx):
        return DiscretePath(self.group, self.dt, self.increments[idx], self.coords[idx],
                            self.seed, None)

    def to_csv(self, handle=None):
        """Rows (stream, s, db_1..db_k, xi_1..xi_d); row s holds the step into xi_s."""
        own = handle is None
        handle = handle or io.StringIO()
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(["stream", "s"] + [f"db_{i + 1}" for i in range(self.k)]
                   + [f"xi_{j + 1}" for j in range(self.group.dim)])
        base = self.stream or 0
        for p in range(self.N):
            for s in range(1, self.n + 1):
                w.writerow([base + p, s] + [repr(float(x)) for x in self.increments[p, s - 1]]
                           + [repr(float(x)) for x in self.coords[p, s]])
        return handle.getvalue() if own else None


def sample_increments(k, n, dt, seed, stream, N=1):
    z = rng.standard_normals(seed, stream, N, n * k)
    return z.reshape(N, n, k) * np.sqrt(dt)


def sample_path(spec, n, dt, seed, stream=0, N=1, k=None):
    """N consecutive streams of the rolling map with step ``dt``."""
    if n < 1 or not dt > 0:
        raise ValueError("need n >= 1 and dt > 0")
    group = as_group(spec)
    k = group.spec.k if k is None else k
    if k != group.spec.k:
        raise algebra.DimensionError(f"k = {k} but the spec has {group.spec.k} generators")
    inc = sample_increments(k, n, dt, seed, stream, N)
    return DiscretePath(group, float(dt), inc, roll(inc, group), int(seed), int(stream))


def sample_endpoints(spec, n, dt, seed, stream, N):
    """Endpoints xi_n only, without storing trajectories."""
    group = as_group(spec)
    inc = sample_increments(group.spec.k, n, dt, seed, stream, N)
    steps = inc @ group.generators()
    x = np.zeros((N, group.dim))
    for s in range(n):
        x = group.bch(x, steps[:, s])
    return x


def ad_trajectory(path):
    """Closed-form Ad_{xi_s} along the trajectory."""
    return path.group.adjoint(path.coords)


def ad_sde_step(ad_s, increment, group):
    """One exponential-Euler step of dAd = Ad ad_{db} from Ad_{xi_s}."""
    v = np.asarray(increment, float) @ group.generators()
    return ad_s @ group.adjoint(v)


def perturb(path, h, eps):
    """Path with increments db + eps * hdot * dt, re-rolled."""
    hdot = h.hdot if isinstance(h, CameronMartinVector) else np.asarray(h, float)
    return path.with_increments(path.increments + eps * hdot * path.dt)


def directional_derivative_fd(functional, path, h, eps=None):
    """Central difference of ``functional`` along h; eps = 1e-5 (1 + |h|_H) by default."""
    if not isinstance(h, CameronMartinVector):
        h = CameronMartinVector(h, path.dt)
    if eps is None:
        eps = 1e-5 * (1.0 + np.max(np.atleast_1d(h.norm())))
    hi = np.asarray(functional(perturb(path, h, eps)), float)
    lo = np.asarray(functional(perturb(path, h, -eps)), float)
    if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
        raise FloatingPointError("functional returned non-finite values")
    return (hi - lo) / (2 * eps)
