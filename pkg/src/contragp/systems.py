"""Discrete-time control-affine system models and builtin benchmarks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError

__all__ = ["Box", "SystemModel", "grid_points", "boundary_states",
           "oscillator", "sine1d", "linear_system", "polynomial_system",
           "builtin_system"]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box {x : lo <= x <= hi}."""

    lo: tuple
    hi: tuple

    @classmethod
    def make(cls, lo, hi):
        lo = tuple(float(v) for v in np.atleast_1d(lo))
        hi = tuple(float(v) for v in np.atleast_1d(hi))
        if len(lo) != len(hi):
            raise DimensionError("hi", len(lo), len(hi))
        if any(l >= h for l, h in zip(lo, hi)):
            raise DataError("box needs lo < hi on every axis")
        return cls(lo, hi)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def lo_arr(self):
        return np.asarray(self.lo)

    @property
    def hi_arr(self):
        return np.asarray(self.hi)

    def contains(self, x, tol=0.0):
        x = np.asarray(x)
        return bool(np.all(x >= self.lo_arr - tol) and np.all(x <= self.hi_arr + tol))

    def diameter(self):
        return float(np.linalg.norm(self.hi_arr - self.lo_arr))


def grid_points(box: Box, per_axis):
    """Uniform grid over a box, inclusive of the boundary; shape (G, n).

    ``per_axis`` may be an int or one count per axis; points are ordered
    with the first axis varying slowest.
    """
    counts = np.broadcast_to(np.asarray(per_axis, dtype=int), (box.dim,))
    if np.any(counts < 1):
        raise DataError("grid counts must be positive")
    axes = [np.linspace(box.lo[i], box.hi[i], counts[i]) for i in range(box.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def boundary_states(box: Box, count):
    """``count`` states equally spaced along the boundary of a 2-D box."""
    if box.dim != 2:
        raise DimensionError("box", "dimension 2", box.dim)
    lo, hi = box.lo_arr, box.hi_arr
    w, h = hi - lo
    perim = 2.0 * (w + h)
    out = []
    for k in range(count):
        s = perim * k / count
        if s < w:
            out.append([lo[0] + s, lo[1]])
        elif s < w + h:
            out.append([hi[0], lo[1] + (s - w)])
        elif s < 2 * w + h:
            out.append([hi[0] - (s - w - h), hi[1]])
        else:
            out.append([lo[0], hi[1] - (s - 2 * w - h)])
    return np.asarray(out)


class SystemModel:
    """x_{k+1} = f(x_k) + b(x_k) u_k with a known Jacobian of the drift.

    The input direction is either a constant vector ``b`` or an evaluator
    pair ``(b_fun, b_jac)``.  On construction the drift Jacobian is checked
    against finite differences at a handful of deterministic probe states,
    and a declared equilibrium must actually be a fixed point of the drift.
    """

    def __init__(self, n, drift, drift_jacobian, b=None, b_fun=None,
                 b_jac=None, equilibrium=None, name=None, validate=True):
        self.n = int(n)
        self.drift = drift
        self.drift_jacobian = drift_jacobian
        self.name = name
        if (b is None) == (b_fun is None):
            raise DataError("provide exactly one of b or (b_fun, b_jac)")
        if b is not None:
            self.b = np.asarray(b, dtype=float).reshape(-1)
            if self.b.shape[0] != self.n:
                raise DimensionError("b", self.n, self.b.shape[0])
            self.b_fun = None
            self.b_jac = None
        else:
            if b_jac is None:
                raise DataError("b_fun requires b_jac")
            self.b = None
            self.b_fun = b_fun
            self.b_jac = b_jac
        self.equilibrium = (None if equilibrium is None
                            else np.asarray(equilibrium, dtype=float).reshape(-1))
        if validate:
            self._validate()

    @property
    def constant_input(self):
        return self.b is not None

    def input_at(self, x):
        return self.b if self.constant_input else np.asarray(self.b_fun(x), dtype=float).reshape(-1)

    def input_jac_at(self, x):
        if self.constant_input:
            return np.zeros((self.n, self.n))
        return np.asarray(self.b_jac(x), dtype=float).reshape(self.n, self.n)

    def step(self, x, u):
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.asarray(self.drift(x), dtype=float).reshape(-1) + self.input_at(x) * float(u)

    def _probe_states(self):
        pts = [np.zeros(self.n)]
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = 1.0
            pts.append(e)
            pts.append(-0.5 * e)
        rng = np.random.default_rng(20240401)
        pts.extend(rng.uniform(-1.0, 1.0, size=(3, self.n)))
        return pts

    def _validate(self):
        for x in self._probe_states():
            J = np.asarray(self.drift_jacobian(x), dtype=float)
            if J.shape != (self.n, self.n):
                raise DimensionError("drift_jacobian(x)", (self.n, self.n), J.shape)
            h = 1e-6
            fd = np.zeros_like(J)
            for i in range(self.n):
                e = np.zeros(self.n)
                e[i] = h
                fd[:, i] = (np.asarray(self.drift(x + e)) - np.asarray(self.drift(x - e))) / (2 * h)
            scale = 1.0 + np.abs(J).max()
            if np.abs(J - fd).max() > 1e-4 * scale:
                raise DataError(
                    f"drift_jacobian disagrees with finite differences at {x} "
                    f"(max deviation {np.abs(J - fd).max():.3e})")
        if self.equilibrium is not None:
            x = self.equilibrium
            resid = np.linalg.norm(np.asarray(self.drift(x)) - x)
            if resid > 1e-8:
                raise DataError(
                    f"declared equilibrium is not a fixed point (|f(x*)-x*| = {resid:.3e})")


# ---------------------------------------------------------------------------
# builtin benchmark systems


def _osc_h(x1):
    return -x1 + x1 ** 3 - x1 ** 5 / 5.0 + x1 ** 7 / 105.0


def _osc_h_prime(x1):
    return -1.0 + 3.0 * x1 ** 2 - x1 ** 4 + x1 ** 6 / 15.0


def oscillator(dt=0.01):
    """Forward-Euler negative-resistance oscillator on R^2.

    f(x) = x + [x2, -x1 + h(x1) x2] dt with h a degree-7 odd polynomial,
    actuated through b = [0, 1] dt; the origin is a fixed point.
    """

    def drift(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return x + np.array([x[1], -x[0] + _osc_h(x[0]) * x[1]]) * dt

    def jac(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.eye(2) + dt * np.array([
            [0.0, 1.0],
            [-1.0 + _osc_h_prime(x[0]) * x[1], _osc_h(x[0])],
        ])

    return SystemModel(2, drift, jac, b=np.array([0.0, 1.0]) * dt,
                       equilibrium=np.zeros(2), name="oscillator")


def oscillator_f2(X, dt=0.01):
    """Second drift component of the oscillator on a stack of states."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X[:, 1] + dt * (-X[:, 0] + _osc_h(X[:, 0]) * X[:, 1])


def sine1d(dt=0.1):
    """Scalar benchmark f(x) = x + dt sin(x), b = dt; used for hull tests."""

    def drift(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return x + dt * np.sin(x)

    def jac(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.array([[1.0 + dt * np.cos(x[0])]])

    return SystemModel(1, drift, jac, b=np.array([dt]),
                       equilibrium=np.zeros(1), name="sine1d")


def linear_system(A, b, name=None):
    """x_{k+1} = A x + b u."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    return SystemModel(n, lambda x: A @ np.asarray(x, dtype=float).reshape(-1),
                       lambda x: A, b=b, name=name or "linear")


def polynomial_system(spec):
    """Build a system from a polynomial coefficient description.

    ``spec`` maps ``n`` to the dimension, ``b`` to the input vector and
    ``rows`` to a list (one per component) of term lists; each term is
    ``{"exponents": [e1, ..., en], "coef": c}`` contributing
    ``c * prod_i x_i^{e_i}`` to that component of f.
    """
    try:
        n = int(spec["n"])
        rows = spec["rows"]
        b = np.asarray(spec["b"], dtype=float).reshape(-1)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"polynomial system spec is missing fields: {exc}") from exc
    if len(rows) != n or b.shape[0] != n:
        raise ConfigError("polynomial system spec has inconsistent dimensions")
    terms = []
    for row in rows:
        parsed = []
        for term in row:
            expo = np.asarray(term["exponents"], dtype=int)
            if expo.shape[0] != n or np.any(expo < 0):
                raise ConfigError(f"bad exponents {term['exponents']}")
            parsed.append((expo, float(term["coef"])))
        terms.append(parsed)

    def drift(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        out = np.zeros(n)
        for i, row in enumerate(terms):
            for expo, coef in row:
                out[i] += coef * np.prod(x ** expo)
        return out

    def jac(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        J = np.zeros((n, n))
        for i, row in enumerate(terms):
            for expo, coef in row:
                for j in range(n):
                    if expo[j] == 0:
                        continue
                    de = expo.copy()
                    de[j] -= 1
                    J[i, j] += coef * expo[j] * np.prod(x ** de)
        return J

    eq = spec.get("equilibrium")
    return SystemModel(n, drift, jac, b=b, equilibrium=eq, name="polynomial")


def builtin_system(name, **kwargs):
    registry = {"oscillator": oscillator, "sine1d": sine1d}
    if name not in registry:
        raise ConfigError(f"unknown builtin system '{name}' "
                          f"(available: {sorted(registry)})")
    return registry[name](**kwargs)
