"""Singular exponent and closed-form corner solutions of the Stokes problem.

All evaluators are vectorised over points of shape (..., 3).  Angles are
measured from the positive x-axis and mapped into ``[0, omega]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

PHI_CLAMP = 1e-12


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class SingularExponent:
    lam: float
    omega: float

    @property
    def residual(self) -> float:
        return abs(math.sin(self.lam * self.omega) + self.lam * math.sin(self.omega))


def _eigen_residual(lam: float, omega: float) -> float:
    return math.sin(lam * omega) + lam * math.sin(omega)


def solve_lambda(omega: float, scan: int = 64) -> SingularExponent:
    """Smallest root of ``sin(lam omega) = -lam sin(omega)`` in (1/2, pi/omega)."""
    if not math.pi < omega < 2.0 * math.pi:
        raise ValueError(f"omega must lie in (pi, 2 pi), got {omega}")
    lo, hi = 0.5, math.pi / omega
    grid = np.linspace(lo, hi, scan + 1)
    vals = [_eigen_residual(t, omega) for t in grid]
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            return SingularExponent(float(a), omega)
        if fa * fb < 0.0:
            lam = brentq(_eigen_residual, a, b, args=(omega,), xtol=1e-16, rtol=4 * np.finfo(float).eps)
            # one Newton polish step
            d = omega * math.cos(lam * omega) + math.sin(omega)
            lam -= _eigen_residual(lam, omega) / d
            return SingularExponent(float(lam), omega)
    raise ArithmeticError(f"no sign change of the eigenvalue equation for omega={omega}")


def cylindrical(x: np.ndarray, omega: float):
    """(r, phi, z) for Cartesian points, rejecting the axis and out-of-sector angles."""
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    if np.any(r <= 0.0):
        raise EvaluationError("evaluation on the singular axis r = 0")
    phi = np.arctan2(x[..., 1], x[..., 0])
    phi = np.where(phi < -PHI_CLAMP, phi + 2.0 * math.pi, np.maximum(phi, 0.0))
    phi = np.where((phi > omega) & (phi <= omega + PHI_CLAMP), omega, phi)
    # the wall phi = 0 seen from slightly below the x-axis
    phi = np.where(2.0 * math.pi - phi < PHI_CLAMP, 0.0, phi)
    if np.any(phi > omega):
        raise EvaluationError("point outside the sector 0 <= phi <= omega")
    return r, phi, x[..., 2]


def _to_cartesian(c, s, d_r, d_phi_over_r):
    return c * d_r - s * d_phi_over_r, s * d_r + c * d_phi_over_r


def angular_pressure(phi, lam, omega):
    """Phi(phi) and its derivative."""
    beta = (lam - 1.0) * phi
    val = 2.0 * lam * (np.sin(omega + beta) - np.sin(lam * omega - beta))
    der = 2.0 * lam * (lam - 1.0) * (np.cos(omega + beta) + np.cos(lam * omega - beta))
    return val, der


def _angular_velocity(phi, lam, omega):
    """Angular factors A, B of the in-plane velocity and their derivatives."""
    al = lam * (omega - phi) + phi
    be = (lam - 1.0) * phi
    ga = lam * (omega - phi)
    sp, cp = np.sin(phi), np.cos(phi)
    sw, cw = np.sin(omega - phi), np.cos(omega - phi)
    sa, ca = np.sin(al), np.cos(al)
    sb, cb = np.sin(be), np.cos(be)
    a = -lam * sp * ca + lam * sw * cb + np.sin(ga)
    da = (
        -lam * cp * ca
        + lam * (1.0 - lam) * sp * sa
        - lam * cw * cb
        - lam * (lam - 1.0) * sw * sb
        - lam * np.cos(ga)
    )
    b = np.sin(lam * phi) - lam * sp * sa - lam * sw * sb
    db = (
        lam * np.cos(lam * phi)
        - lam * cp * sa
        - lam * (1.0 - lam) * sp * ca
        + lam * cw * sb
        - lam * (lam - 1.0) * sw * cb
    )
    return a, da, b, db


@dataclass
class FieldSample:
    velocity: np.ndarray
    velocity_gradient: np.ndarray
    pressure: np.ndarray
    data_f: np.ndarray


@dataclass(frozen=True)
class ExactCase:
    """Exact solution and data of the two corner examples.

    ``example=1``: the velocity/pressure pair is fixed and the data depends on
    ``nu``.  ``example=2``: the data ``f0 + grad(phi_i)`` is fixed; the
    velocity scales with ``1/nu`` and the pressure gains ``phi_i``.
    """

    example: int = 1
    nu: float = 1.0
    exponent: SingularExponent | None = None
    phi_variant: int = 1
    omega: float = 1.5 * math.pi

    def __post_init__(self):
        if self.example not in (1, 2):
            raise ValueError("example must be 1 or 2")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.phi_variant not in (1, 2):
            raise ValueError("phi_variant must be 1 or 2")
        if self.exponent is None:
            object.__setattr__(self, "exponent", solve_lambda(self.omega))

    @property
    def lam(self) -> float:
        return self.exponent.lam

    @property
    def kappa(self) -> float:
        # exponent of the out-of-plane harmonic, 2/3 for omega = 3 pi / 2
        return math.pi / self.omega

    @property
    def _velocity_scale(self) -> float:
        return 1.0 / self.nu if self.example == 2 else 1.0

    # -- corner solution of the first example ------------------------------
    def _base_velocity(self, x):
        r, phi, z = cylindrical(x, self.omega)
        lam, k = self.lam, self.kappa
        a, _, b, _ = _angular_velocity(phi, lam, self.omega)
        rl = r**lam
        return np.stack([z * rl * a, z * rl * b, r**k * np.sin(k * phi)], axis=-1)

    def _base_gradient(self, x):
        r, phi, z = cylindrical(x, self.omega)
        lam, k = self.lam, self.kappa
        a, da, b, db = _angular_velocity(phi, lam, self.omega)
        c, s = np.cos(phi), np.sin(phi)
        rl1 = r ** (lam - 1.0)
        g = np.empty(np.shape(r) + (3, 3))
        g[..., 0, 0], g[..., 0, 1] = _to_cartesian(c, s, z * lam * rl1 * a, z * rl1 * da)
        g[..., 0, 2] = r * rl1 * a
        g[..., 1, 0], g[..., 1, 1] = _to_cartesian(c, s, z * lam * rl1 * b, z * rl1 * db)
        g[..., 1, 2] = r * rl1 * b
        rk1 = k * r ** (k - 1.0)
        g[..., 2, 0] = rk1 * np.sin((k - 1.0) * phi)
        g[..., 2, 1] = rk1 * np.cos((k - 1.0) * phi)
        g[..., 2, 2] = 0.0
        return g

    def _base_pressure(self, x):
        r, phi, z = cylindrical(x, self.omega)
        val, _ = angular_pressure(phi, self.lam, self.omega)
        return z * r ** (self.lam - 1.0) * val

    def _example1_data(self, x, nu):
        r, phi, z = cylindrical(x, self.omega)
        lam, om = self.lam, self.omega
        val, _ = angular_pressure(phi, lam, om)
        pre = 2.0 * lam * (lam - 1.0) * z * r ** (lam - 2.0)
        f1 = (nu - 1.0) * pre * (np.sin(lam * om - (lam - 2.0) * phi) - np.sin(om + (lam - 2.0) * phi))
        f2 = (1.0 - nu) * pre * (np.cos(lam * om - (lam - 2.0) * phi) + np.cos(om + (lam - 2.0) * phi))
        f3 = r ** (lam - 1.0) * val
        return np.stack([f1, f2, f3], axis=-1)

    # -- gradient perturbation ---------------------------------------------
    def potential(self, x):
        """The gradient potential phi_i added to the data of the second example."""
        r, phi, _ = cylindrical(x, self.omega)
        if self.example != 2 or self.phi_variant == 1:
            return np.zeros_like(r)
        val, _ = angular_pressure(phi, self.lam, self.omega)
        return 10.0 * r**self.lam * val

    def potential_gradient(self, x):
        r, phi, _ = cylindrical(x, self.omega)
        out = np.zeros(np.shape(r) + (3,))
        if self.example != 2 or self.phi_variant == 1:
            return out
        lam = self.lam
        val, der = angular_pressure(phi, lam, self.omega)
        rl1 = r ** (lam - 1.0)
        out[..., 0], out[..., 1] = _to_cartesian(np.cos(phi), np.sin(phi), 10.0 * lam * rl1 * val, 10.0 * rl1 * der)
        return out

    # -- public evaluators -------------------------------------------------
    def velocity(self, x):
        return self._velocity_scale * self._base_velocity(x)

    def velocity_gradient(self, x):
        return self._velocity_scale * self._base_gradient(x)

    def pressure(self, x):
        """Un-normalised exact pressure."""
        return self._base_pressure(x) + self.potential(x)

    def data(self, x):
        if self.example == 1:
            return self._example1_data(x, self.nu)
        return self._example1_data(x, 1.0) + self.potential_gradient(x)

    def sample(self, x) -> FieldSample:
        return FieldSample(self.velocity(x), self.velocity_gradient(x), self.pressure(x), self.data(x))

    @property
    def data_in_l2(self) -> bool:
        return self.example == 2 or self.nu == 1.0


def eval_exact(case: ExactCase, point) -> FieldSample:
    return case.sample(np.asarray(point, dtype=float))


def eval_gradient_phi2(case: ExactCase, point) -> np.ndarray:
    """Cartesian gradient of the data perturbation (zero for the phi_1 variant)."""
    return case.potential_gradient(np.asarray(point, dtype=float))


@dataclass(frozen=True)
class PolynomialCase:
    """Smooth synthetic data with an optional polynomial gradient perturbation.

    Homogeneous boundary data; used for gradient-invariance checks where no
    exact solution is needed.  ``base`` and ``potential_grad`` map points
    (..., 3) to vectors (..., 3).
    """

    nu: float = 1.0
    add_gradient: bool = False
    potential: str = "x2+y2"

    def base(self, x):
        x = np.asarray(x, dtype=float)
        # curl of (0, 0, sin(pi x) sin(pi y)) plus a z-component free of gradients
        px, py = np.pi * x[..., 0], np.pi * x[..., 1]
        return np.stack(
            [np.pi * np.sin(px) * np.cos(py), -np.pi * np.cos(px) * np.sin(py), np.sin(px) * np.sin(py)],
            axis=-1,
        )

    def potential_gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.potential == "const":
            return np.zeros_like(x)
        if self.potential == "x2+y2":
            return np.stack([2.0 * x[..., 0], 2.0 * x[..., 1], 0.0 * x[..., 2]], axis=-1)
        if self.potential == "cubic":
            return np.stack([3.0 * x[..., 0] ** 2 * x[..., 1], x[..., 0] ** 3, 2.0 * x[..., 2]], axis=-1)
        raise ValueError(f"unknown potential {self.potential!r}")

    def data(self, x):
        f = self.base(x)
        if self.add_gradient:
            f = f + self.potential_gradient(x)
        return f

    def velocity(self, x):
        return np.zeros(np.shape(x))
