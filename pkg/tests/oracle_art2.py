"""Plain-Python reference for the ART2 F1 dynamics, used to freeze test values.

Written independently of the package: lists instead of arrays, one loop per
sublayer update, no shared helpers.
"""

import math


def f(x, theta):
    return x if x >= theta else 2 * theta * x * x / (x * x + theta * theta)


def norm(v):
    return math.sqrt(sum(t * t for t in v))


def settle(I, a=10, b=10, d=0.9, theta=0.2, etp=1e-4, z=None, max_iter=5000):
    """Bottom-up (and optionally top-down ``z``) F1 settling; returns (u, p, iterations)."""
    m = len(I)
    u = [0.0] * m
    fq = [0.0] * m
    for it in range(1, max_iter + 1):
        w = [I[i] + a * u[i] for i in range(m)]
        nw = norm(w)
        x = [t / nw for t in w]
        v = [f(x[i], theta) + (b * fq[i] if it > 1 else 0.0) for i in range(m)]
        nv = norm(v)
        un = [t / nv for t in v]
        p = [un[i] + (d * z[i] if z is not None else 0.0) for i in range(m)]
        npn = norm(p)
        q = [t / npn for t in p]
        fq = [f(t, theta) for t in q]
        delta = max(abs(un[i] - u[i]) for i in range(m))
        u = un
        if it > 1 and delta <= etp:
            return u, p, it
    raise RuntimeError("no convergence")


def r_norm(u, p, c=0.1):
    cp = [c * t for t in p]
    den = norm(u) + norm(cp)
    return norm([(u[i] + cp[i]) / den for i in range(len(u))])


def one_pass_residual(u, z, c=0.1, d=0.9):
    """Vigilance residual of a stabilized ``u`` against top-down row ``z``."""
    p = [u[i] + d * z[i] for i in range(len(u))]
    return r_norm(u, p, c)
