"""Shared generators and finite-difference oracles for the test-suite."""

import random
from fractions import Fraction

import numpy as np

from miold.expr import ONE, ZERO, Const, Var, cos, evaluate, sin
from miold.model.transform import MechanicalTransformation


def random_coefficient(rng: random.Random) -> Const:
    num = rng.choice([i for i in range(-5, 6) if i])
    return Const(Fraction(num, rng.randint(1, 4)))


def random_function(rng: random.Random, n: int, allow_zero: bool = True):
    """Small closed-form function of the configuration: c, c*x_i, c*sin x_i, c*cos x_i, c*x_i*x_j."""
    kind = rng.randrange(6 if allow_zero else 5)
    c = random_coefficient(rng)
    i = Var(rng.randint(1, n))
    j = Var(rng.randint(1, n))
    if kind == 0:
        return c
    if kind == 1:
        return c * i
    if kind == 2:
        return c * sin(i)
    if kind == 3:
        return c * cos(i)
    if kind == 4:
        return c * i * j
    return ZERO


def random_feedback(rng: random.Random, n: int, m: int, x, params) -> MechanicalTransformation:
    """Random mechanical feedback whose beta is well conditioned at ``x``."""
    while True:
        gamma = []
        for _ in range(m):
            mat = [[ZERO] * n for _ in range(n)]
            for a in range(n):
                for b in range(a, n):
                    if rng.random() < 0.5:
                        mat[a][b] = mat[b][a] = random_function(rng, n)
            gamma.append(mat)
        alpha = [random_function(rng, n) for _ in range(m)]
        beta = [[(ONE if r == s else ZERO) * random_coefficient(rng)
                 + (random_coefficient(rng) if rng.random() < 0.5 else ZERO)
                 for s in range(m)] for r in range(m)]
        r0 = rng.randrange(m)
        beta[r0][r0] = beta[r0][r0] + Const(Fraction(1, 3)) * cos(Var(rng.randint(1, n)))
        B = np.array([[evaluate(b, x, params) for b in row] for row in beta])
        if np.linalg.cond(B) < 1e3:
            return MechanicalTransformation(None, gamma, alpha, beta)


def directional_fd(expr, direction, x, params, h=1e-5):
    """Central difference of ``expr`` along the evaluated vector field ``direction``."""
    x = np.asarray(x, dtype=float)
    d = np.array([evaluate(f, x, params) for f in direction])
    return (evaluate(expr, x + h * d, params) - evaluate(expr, x - h * d, params)) / (2 * h)


def gradient_fd(expr, x, params, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = []
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        out.append((evaluate(expr, x + e, params) - evaluate(expr, x - e, params)) / (2 * h))
    return np.array(out)


def hessian_fd(expr, x, params, h=2e-4):
    x = np.asarray(x, dtype=float)
    n = len(x)
    H = np.empty((n, n))
    f0 = evaluate(expr, x, params)
    for j in range(n):
        for k in range(j, n):
            ej = np.zeros(n)
            ek = np.zeros(n)
            ej[j] = h
            ek[k] = h
            if j == k:
                val = (evaluate(expr, x + ej, params) - 2 * f0 + evaluate(expr, x - ej, params)) / h**2
            else:
                val = (evaluate(expr, x + ej + ek, params) - evaluate(expr, x + ej - ek, params)
                       - evaluate(expr, x - ej + ek, params)
                       + evaluate(expr, x - ej - ek, params)) / (4 * h * h)
            H[j, k] = H[k, j] = val
    return H


def nearby_points(x0, count, seed, spread=0.3):
    rng = random.Random(seed)
    pts = [list(x0)]
    while len(pts) < count:
        pts.append([a + rng.uniform(-spread, spread) for a in x0])
    return pts
