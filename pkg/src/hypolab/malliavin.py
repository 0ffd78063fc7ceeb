"""Malliavin objects on the discretized Wiener space.

Matrices indexed by the algebra are expressed in the metric frame (the
generators followed by the bracket completion, declared orthonormal), where
the adjoint of a linear map is its transpose.  For free nilpotent algebras and
the Heisenberg algebra the frame is the coordinate basis.

The discrete gradient of a functional F has Cameron-Martin representation
DF_{s,i} = dF/d(db_{s,i}), so that (DF, h)_H = sum_{s,i} DF_{s,i} hdot_{s,i} dt.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import stats
from .wiener import CameronMartinVector, DiscretePath, as_group, directional_derivative_fd, sample_path

SINGULAR_RTOL = 1e-13


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


class DepthCapError(ValueError):
    pass


# --------------------------------------------------------------------------
# frame helpers


def frame_ad(path, upto=None):
    """Ad_{xi_s} in frame coordinates, s = 0..upto (default n)."""
    frame = path.group.spec.frame
    a = path.ad_traj if upto is None else path.ad_traj[:, : upto + 1]
    if np.array_equal(frame.B, np.eye(path.group.dim)):
        return a
    return frame.Binv @ a @ frame.B


def to_frame(spec, x):
    return spec.frame.Binv @ np.asarray(x, float)


def _t_index(path, t_index):
    t_index = path.n if t_index is None else int(t_index)
    if not 0 <= t_index <= path.n:
        raise ValueError(f"t_index {t_index} outside 0..{path.n}")
    return t_index


# --------------------------------------------------------------------------
# covariance


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """sigma_bar_t = sum_{s < t_index} Ad_s P Ad_s^T dt for each path in a batch."""

    sigma_bar: np.ndarray
    t_index: int

    @cached_property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.sigma_bar)

    @cached_property
    def det(self):
        return np.linalg.det(self.sigma_bar)

    @property
    def min_eig(self):
        return self.eigenvalues[..., 0]

    @property
    def condition(self):
        ev = self.eigenvalues
        with np.errstate(divide="ignore"):
            return np.where(ev[..., 0] > 0, ev[..., -1] / np.where(ev[..., 0] > 0, ev[..., 0], 1), np.inf)

    @property
    def singular(self):
        ev = self.eigenvalues
        return ev[..., 0] <= SINGULAR_RTOL * np.maximum(ev[..., -1], np.finfo(float).tiny)

    @cached_property
    def inverse(self):
        if np.any(self.singular):
            bad = np.flatnonzero(np.atleast_1d(self.singular))
            raise SingularCovarianceError(
                f"singular covariance on {bad.size} path(s); smallest eigenvalue "
                f"{float(np.min(self.min_eig)):.3e}")
        return np.linalg.inv(self.sigma_bar)

    def solve(self, v):
        self.inverse  # raise early on singular paths
        return np.linalg.solve(self.sigma_bar, v[..., None])[..., 0]


def covariance(path, t_index=None):
    t_index = _t_index(path, t_index)
    k = path.k
    a = frame_ad(path, t_index)[:, :t_index, :, :k]  # Ad_s P with P onto the generator block
    sigma = np.einsum("nsik,nsjk->nij", a, a) * path.dt
    return CovarianceMatrix(0.5 * (sigma + np.swapaxes(sigma, -1, -2)), t_index)


def heisenberg_covariance_closed_form(path, t_index=None):
    """Entries of sigma_bar on the Heisenberg group from trajectory integrals."""
    t_index = _t_index(path, t_index)
    x = path.coords[:, :t_index, 0]
    y = path.coords[:, :t_index, 1]
    dt = path.dt
    t = t_index * dt
    out = np.zeros((path.N, 3, 3))
    out[:, 0, 0] = out[:, 1, 1] = t
    out[:, 0, 2] = out[:, 2, 0] = -y.sum(axis=1) * dt
    out[:, 1, 2] = out[:, 2, 1] = x.sum(axis=1) * dt
    out[:, 2, 2] = (x * x + y * y).sum(axis=1) * dt
    return out


def det_inverse_moments(spec, t, n, N, q_list, seed, stream=0, chunk=10_000):
    """MC estimates of E[Delta_t^{-q}] with the fraction of non-positive or underflowing dets."""
    group = as_group(spec)
    dets = []
    for s0 in range(stream, stream + N, chunk):
        c = min(chunk, stream + N - s0)
        dets.append(covariance(sample_path(group, n, t / n, seed, s0, c)).det)
    dets = np.concatenate(dets)
    tiny = np.finfo(float).tiny
    bad = dets <= tiny
    moments = {}
    for q in q_list:
        with np.errstate(divide="ignore", over="ignore"):
            moments[q] = stats.mean_ci(np.where(bad, np.inf, dets) ** (-float(q)), seed, n, t / n)
    return {
        "moments": moments,
        "fraction_nonpositive": float(np.mean(dets <= 0)),
        "fraction_underflow": float(np.mean(bad)),
        "min_det": float(dets.min()),
        "dets": dets,
    }


# --------------------------------------------------------------------------
# lifted vector fields


def lifted_field(x, path, t_index=None, cov=None):
    """Grid samples hdot_{s,i} = 1_{s<t} <Ad_s^T sigma_bar^{-1} Ad_t X, X_i>."""
    t_index = _t_index(path, t_index)
    cov = covariance(path, t_index) if cov is None else cov
    a = frame_ad(path, t_index)
    xf = to_frame(path.group.spec, x)
    v = a[:, t_index] @ xf
    y = cov.solve(v)
    hdot = np.zeros((path.N, path.n, path.k))
    hdot[:, :t_index] = np.einsum("nsjk,nj->nsk", a[:, :t_index, :, : path.k], y)
    return CameronMartinVector(hdot, path.dt)


def collapse_residual(x, path, t_index=None, h=None):
    """max |sum_s Ad_s P hdot_s dt - Ad_t X| per path (zero up to round-off)."""
    t_index = _t_index(path, t_index)
    h = lifted_field(x, path, t_index) if h is None else h
    a = frame_ad(path, t_index)
    lhs = np.einsum("nsjk,nsk->nj", a[:, :t_index, :, : path.k], h.hdot[:, :t_index]) * path.dt
    rhs = a[:, t_index] @ to_frame(path.group.spec, x)
    return np.abs(lhs - rhs).max(axis=-1)


# --------------------------------------------------------------------------
# closed-form gradients of f(xi_t)


def _phi_matrix(group, v):
    """phi(ad_v) with phi(z) = (e^z - 1) / z, batched."""
    a = group.ad(v)
    out = np.broadcast_to(np.eye(group.dim), a.shape).copy()
    term = out.copy()
    fact = 1.0
    for j in range(1, group.step):
        fact *= j + 1
        term = term @ a
        out = out + term / fact
    return out


def gradient_closed_form(f, path, t_index=None, form="left"):
    """D[f(xi_t)] as hdot samples.

    ``form="left"`` pairs the right-invariant gradient at xi_t with Ad_{xi_s} X_i;
    ``form="scheme"`` with Ad_{xi_s} phi(ad_{V_s}) X_i, the exact derivative of the
    exponential-Euler trajectory with respect to db_{s,i} (V_s the step increment).
    """
    t_index = _t_index(path, t_index)
    group = path.group
    xt = path.coords[:, t_index]
    _, mr = group.translation_jacobians(xt)
    r = np.einsum("ni,nij->nj", f.gradient(xt), mr)  # covector V -> V^ f(xi_t)
    gens = group.spec.generator_matrix
    a = path.ad_traj[:, :t_index]
    if form == "left":
        cols = a @ gens
    elif form == "scheme":
        v = path.increments[:, :t_index] @ group.generators()
        cols = a @ _phi_matrix(group, v) @ gens
    else:
        raise ValueError(f"unknown form {form!r}")
    out = np.zeros((path.N, path.n, path.k))
    out[:, :t_index] = np.einsum("nj,nsjk->nsk", r, cols)
    return CameronMartinVector(out, path.dt)


# --------------------------------------------------------------------------
# perturbation sweeps


def default_eps(path):
    return 1e-5 * np.sqrt(path.dt)


def sweep(path, fns, eps=None, steps=None):
    """Central differences of each ``fn(perturbed_path, s, i) -> (N,)`` in db_{s,i}.

    Every increment is bumped by +-eps in turn and the trajectory re-rolled from
    that step; the base path is never mutated, so sweep order is irrelevant.
    Returns an array of shape (len(fns), N, n, k).
    """
    eps = default_eps(path) if eps is None else eps
    steps = range(path.n) if steps is None else steps
    out = np.zeros((len(fns), path.N, path.n, path.k))
    for s in steps:
        for i in range(path.k):
            vals = []
            for sign in (1.0, -1.0):
                inc = path.increments.copy()
                inc[:, s, i] += sign * eps
                p = path.with_increments(inc, s0=s)
                vals.append([np.asarray(fn(p, s, i), float) for fn in fns])
            for j in range(len(fns)):
                hi, lo = vals[0][j], vals[1][j]
                if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
                    raise FloatingPointError("non-finite functional value in sweep")
                out[j, :, s, i] = (hi - lo) / (2 * eps)
    return out


def malliavin_gradient_fd(functional, path, eps=None):
    d = sweep(path, [lambda p, s, i: functional(p)], eps)[0]
    return CameronMartinVector(d, path.dt)


def divergence(u, path, eps=None, with_gradients=()):
    """Discrete Skorokhod divergence of a path-dependent field ``u(path) -> (N, n, k)``.

    delta(u) = sum u db - sum d(u_{s,i})/d(db_{s,i}) dt.  Extra functionals in
    ``with_gradients`` get their discrete gradients from the same sweep; they
    are returned as a list after delta.
    """
    base = np.asarray(u(path), float)
    fns = [lambda p, s, i: u(p)[:, s, i]] + [(lambda g: (lambda p, s, i: g(p)))(g) for g in with_gradients]
    d = sweep(path, fns, eps)
    trace = d[0].sum(axis=(-2, -1))
    delta = np.sum(base * path.increments, axis=(-2, -1)) - trace * path.dt
    if with_gradients:
        return delta, [CameronMartinVector(g, path.dt) for g in d[1:]]
    return delta


def _frame(spec, a):
    frame = spec.frame
    if np.array_equal(frame.B, np.eye(spec.dim)):
        return a
    return frame.Binv @ a @ frame.B


def lifted_sweep(x, path, t_index=None, endpoint_fns=(), eps=None):
    """Fast sweep for the lifted field of ``x`` and endpoint functionals.

    Bumping db_{s,i} left-multiplies xi_r (r > s) by a fixed element g, so
    Ad_r becomes L Ad_r with L = Ad_g and sigma_bar splits into an unchanged
    prefix plus L (suffix) L^T.  This replaces the re-roll of :func:`sweep`
    and computes the same central differences.  Returns the divergence trace
    sum_{s,i} d hdot_{s,i} / d db_{s,i} and the discrete gradients of
    ``fn(xi_t)`` for each ``fn`` in ``endpoint_fns``.
    """
    t = _t_index(path, t_index)
    eps = default_eps(path) if eps is None else eps
    group, spec = path.group, path.group.spec
    k, N = path.k, path.N
    a = frame_ad(path, t)  # (N, t+1, d, d)
    blocks = a[:, :t, :, :k]
    contrib = np.einsum("nsik,nsjk->nsij", blocks, blocks) * path.dt
    pre = np.cumsum(contrib, axis=1)  # sum_{r <= s}
    total = pre[:, -1:]
    v_t = a[:, t] @ to_frame(spec, x)  # (N, d)
    xs = path.coords[:, :t]
    xs1 = path.coords[:, 1 : t + 1]
    a1_inv = _frame(spec, group.adjoint(-xs1))
    steps = path.increments[:, :t] @ group.generators()
    gens = group.generators()
    x_t = np.broadcast_to(path.coords[:, t][:, None], xs.shape)
    trace = np.zeros(N)
    grads = [np.zeros((N, path.n, k)) for _ in endpoint_fns]
    for i in range(k):
        comp, gvals = [], []
        for sign in (1.0, -1.0):
            xs1p = group.bch(xs, steps + sign * eps * gens[i])
            L = _frame(spec, group.adjoint(xs1p)) @ a1_inv
            sig = pre + L @ (total - pre) @ np.swapaxes(L, -1, -2)
            y = np.linalg.solve(sig, (L @ v_t[:, None, :, None]))[..., 0]
            comp.append(np.einsum("nsj,nsj->ns", a[:, :t, :, i], y))
            if endpoint_fns:
                g = group.bch(xs1p, -xs1)
                xtp = group.bch(g, x_t)
                gvals.append([fn(xtp) for fn in endpoint_fns])
        trace += ((comp[0] - comp[1]) / (2 * eps)).sum(axis=1)
        for j in range(len(endpoint_fns)):
            grads[j][:, :t, i] = (gvals[0][j] - gvals[1][j]) / (2 * eps)
    return trace, [CameronMartinVector(g, path.dt) for g in grads]


def lifted_divergence(x, path, t_index=None, eps=None):
    """delta of the lifted field of ``x`` via :func:`lifted_sweep`."""
    h = lifted_field(x, path, t_index)
    trace, _ = lifted_sweep(x, path, t_index, eps=eps)
    return h.wiener_integral(path.increments) - trace * path.dt


def dh_adjoint(h, G, path, eps=None):
    """d_h^* G = -d_h G + (sum hdot db) G."""
    if not isinstance(h, CameronMartinVector):
        h = CameronMartinVector(h, path.dt)
    g = np.asarray(G(path), float)
    return -directional_derivative_fd(G, path, h, eps) + h.wiener_integral(path.increments) * g


class AdjointFunctional:
    """Path functional G -> X^* G at horizon index ``t_index`` (None = endpoint)."""

    def __init__(self, x, G, t_index=None, max_depth=1):
        self.x = np.asarray(x, float)
        self.G = G
        self.t_index = t_index
        self.depth = getattr(G, "depth", 0) + 1
        self.max_depth = max_depth
        if self.depth > max_depth:
            raise DepthCapError(f"adjoint depth {self.depth} exceeds cap {max_depth}")

    def __call__(self, path):
        return adjoint_apply(self.x, self.G, path, self.t_index, max_depth=self.max_depth)


DEPTH2_MAX_N = 32


def adjoint_apply(x, G, path, t_index=None, max_depth=1, eps=None):
    """X^* G = G delta(X) - (DG, X)_H with X the lifted field of ``x``.

    ``G`` is a path functional; functionals built by :func:`endpoint_functional`
    use the fast suffix sweep, anything else the generic re-rolling sweep.
    ``G`` may itself be an :class:`AdjointFunctional`; nesting beyond
    ``max_depth`` is refused, and depth 2 requires n <= 32.
    """
    depth = getattr(G, "depth", 0) + 1
    if depth > max_depth:
        raise DepthCapError(f"adjoint depth {depth} exceeds cap {max_depth}")
    if depth >= 2 and path.n > DEPTH2_MAX_N:
        raise DepthCapError(f"adjoint depth {depth} needs n <= {DEPTH2_MAX_N}, got {path.n}")
    if G is None or (isinstance(G, (int, float)) and G == 1):
        G = _one
    t = _t_index(path, t_index)
    h = lifted_field(x, path, t)
    g = np.asarray(G(path), float)
    wiener = h.wiener_integral(path.increments)
    if G is _one:
        trace, _ = lifted_sweep(x, path, t, eps=eps)
        return (wiener - trace * path.dt) * g
    fn = getattr(G, "endpoint", None)
    if fn is not None and getattr(G, "t_index", None) in (None, t) and t == path.n:
        trace, (dg,) = lifted_sweep(x, path, t, endpoint_fns=(fn,), eps=eps)
        delta = wiener - trace * path.dt
    else:
        field = lambda p: lifted_field(x, p, t).hdot  # noqa: E731
        delta, (dg,) = divergence(field, path, eps, with_gradients=(G,))
    return g * delta - dg.inner(h)


def _one(path):
    return np.ones(path.N)


class EndpointFunctional:
    """path -> fn(xi_t) for a coordinate function ``fn`` (None = endpoint)."""

    def __init__(self, fn, t_index=None):
        self.endpoint = fn
        self.t_index = t_index

    def __call__(self, path):
        return self.endpoint(path.coords[:, path.n if self.t_index is None else self.t_index])


def endpoint_functional(f, t_index=None):
    return EndpointFunctional(f, t_index)
