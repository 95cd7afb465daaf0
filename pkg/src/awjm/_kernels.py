"""Compiled inner loops for the 1D explicit scheme and its discrete adjoint.

All kernels operate on plain float64 arrays. Node 0 and node n-1 are Dirichlet
nodes: their right-hand side is forced to zero.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def rhs_1d(z, e, a, k, dx, out):
    n = z.shape[0]
    out[0] = 0.0
    out[n - 1] = 0.0
    inv2dx = 0.5 / dx
    for i in range(1, n - 1):
        s = (z[i + 1] - z[i - 1]) * inv2dx
        out[i] = e[i] * math.exp(a * z[i] - 0.5 * k * math.log1p(s * s))
    return out


@njit(cache=True)
def forward_1d(z0, e, a, k, dx, dt, n_steps, states):
    """Fill ``states[0..n_steps]``; return the first non-finite step or -1."""
    n = z0.shape[0]
    f = np.empty(n)
    states[0, :] = z0
    for m in range(n_steps):
        zm = states[m]
        rhs_1d(zm, e, a, k, dx, f)
        bad = False
        for i in range(n):
            v = zm[i] + dt * f[i]
            if not math.isfinite(v):
                bad = True
            states[m + 1, i] = v
        if bad:
            return m + 1
    return -1


@njit(cache=True)
def forward_noisy_1d(z0, e, a, k, dx, dt, n_steps, lam, eps, out):
    """Final state only, with ``dt * lam * eps[m]`` added to interior nodes."""
    n = z0.shape[0]
    f = np.empty(n)
    z = z0.copy()
    for m in range(n_steps):
        rhs_1d(z, e, a, k, dx, f)
        for i in range(1, n - 1):
            z[i] += dt * (f[i] + lam * eps[m, i])
        for i in range(n):
            if not math.isfinite(z[i]):
                return m + 1
    out[:] = z
    return -1


@njit(cache=True)
def step_jvp_1d(z, e, a, k, dx, dz):
    """Directional derivative of rhs at z along dz (state direction only)."""
    n = z.shape[0]
    out = np.zeros(n)
    inv2dx = 0.5 / dx
    for i in range(1, n - 1):
        s = (z[i + 1] - z[i - 1]) * inv2dx
        q = 1.0 + s * s
        f = e[i] * math.exp(a * z[i] - 0.5 * k * math.log1p(s * s))
        c = -k * s * f / q * inv2dx
        out[i] = a * f * dz[i] + c * (dz[i + 1] - dz[i - 1])
    return out


@njit(cache=True)
def step_vjp_1d(z, e, a, k, dx, w, grad_e):
    """Transpose of the rhs linearization applied to w.

    Returns the state cotangent and accumulates into ``grad_e``; the
    derivatives with respect to a and k are returned as scalars.
    """
    n = z.shape[0]
    out = np.zeros(n)
    inv2dx = 0.5 / dx
    ga = 0.0
    gk = 0.0
    for i in range(1, n - 1):
        wi = w[i]
        if wi == 0.0:
            continue
        s = (z[i + 1] - z[i - 1]) * inv2dx
        l1p = math.log1p(s * s)
        g = math.exp(a * z[i] - 0.5 * k * l1p)
        f = e[i] * g
        c = -k * s * f / (1.0 + s * s) * inv2dx
        out[i] += a * f * wi
        out[i + 1] += c * wi
        out[i - 1] -= c * wi
        ga += z[i] * f * wi
        gk += -0.5 * l1p * f * wi
        grad_e[i] += g * wi
    return out, ga, gk


@njit(cache=True)
def adjoint_1d(states, e, a, k, dx, dt, seed):
    """Reverse sweep of Z^{m+1} = Z^m + dt F(Z^m).

    ``seed`` is dJ/dZ^N. Returns (dJ/da, dJ/dk, dJ/dE, P^0). The adjoint
    is kept at zero on the Dirichlet nodes since those states are fixed.
    """
    n_levels, n = states.shape
    p = seed.copy()
    p[0] = 0.0
    p[n - 1] = 0.0
    grad_e = np.zeros(n)
    grad_a = 0.0
    grad_k = 0.0
    for m in range(n_levels - 2, -1, -1):
        w = dt * p
        jt, ga, gk = step_vjp_1d(states[m], e, a, k, dx, w, grad_e)
        grad_a += ga
        grad_k += gk
        for i in range(1, n - 1):
            p[i] += jt[i]
    return grad_a, grad_k, grad_e, p
