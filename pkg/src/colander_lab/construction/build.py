"""The explicit subharmonic function with a recurrent zero set.

Ingredients, for a profile ``(eps, R)`` in dimension ``d`` (2 or 3):

* ``R0 = R/7``, ``eps0(t) = 7 eps(t/2)``, shells ``2 rho_k S^{d-1}`` with
  ``rho_{k+1} = rho_k + R0(rho_k)``, carrying separated, covering points
  ``lambda``;
* the radial subharmonic ``v(x) = exp(C int_1^|x| phi)``;
* ``w = v`` off the shell balls ``B(lambda, R0)``; inside them the Poisson
  extension of ``v`` plus ``A_lambda * kt((x - lambda)/R0)``, where
  ``kt = log`` (d=2) or ``1 + ker`` (d=3);
* ``u = v1`` on ``|x| <= r1`` (a maximum of a kernel term and a strip
  function ``s``) and ``u = C2 w - C3`` outside, with ``C2, C3`` matching
  value and radial slope on ``|x| = r1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.spatial import cKDTree

from ..errors import (ConstructionInfeasible, DomainError, ProfileError,
                      UnsupportedDimension)
from ..harmonic.wos import EstimateCI, WoSConfig, wos_escape
from ..mathcore import (FuncSpec, Profile, envelope_integral, phi_derivative,
                        phi_eval, rho_recursion)
from ..quadrature import gauss_legendre, gl_intervals
from ..setgen import (BallUnion, Colander, ShellLattice, fibonacci_sphere,
                      make_shell_lattice, threshold_r0, unit_ball_volume)
from .poisson import BALL_NODES, DISK_NODES, fit_series

CENTER_SENTINEL = -1e30
TABLE_STEP = 0.02
PROBE_ANGLES = 12
PROBE_RADII = (1 / 32, 1 / 64, 1 / 128)
BISECT_NODES = 4096
ZERO_NODES = 256
DEFAULTS = {
    "k_max": 12, "k_min": 0, "seed": 0, "a_mode": "bisect", "safety": 0.98,
    "disk_nodes": DISK_NODES, "ball_nodes": BALL_NODES, "max_doublings": 10, "C": None,
}


def kt(d: int, t):
    """The shifted kernel: ``log t`` (d=2), ``1 - t**(2-d)`` (d>=3); ``kt(1) = 0``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(t) if d == 2 else 1.0 - t ** (2.0 - d)
    return np.where(t > 0, out, CENTER_SENTINEL)


def kt_slope(d: int) -> float:
    """``d/dt kt`` at ``t = 1``."""
    return float(max(1, d - 2))


def strip_function(x: np.ndarray, width: float) -> np.ndarray:
    """``cosh(pi sqrt(d-1) x_1 / width) * prod_j cos(pi x_j / width)`` on the
    slab ``|x_j| < width/2`` (j >= 2), zero elsewhere."""
    d = x.shape[1]
    a = math.pi / width
    out = np.cosh(a * math.sqrt(d - 1) * x[:, 0])
    for j in range(1, d):
        out = out * np.where(np.abs(x[:, j]) < width / 2, np.cos(a * x[:, j]), 0.0)
    return out


class EnvelopeTable:
    """``I(r) = int_1^r phi`` tabulated on a uniform grid with Hermite interpolation."""

    def __init__(self, p: Profile, r_max: float, step: float = TABLE_STEP):
        n = int(math.ceil(r_max / step)) + 1
        self.t = step * np.arange(n + 1)
        self.p = p
        pieces = gl_intervals(lambda s: phi_eval(p, s), self.t[:-1], self.t[1:])
        cum = np.concatenate(([0.0], np.cumsum(pieces)))
        i1 = int(round(1.0 / step))
        cum -= cum[i1]
        self.r_max = float(self.t[-1])
        self._spline = CubicHermiteSpline(self.t, cum, phi_eval(p, self.t))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.asarray(self._spline(np.minimum(r, self.r_max)), dtype=float)
        far = r > self.r_max
        if np.any(far):
            base = float(self._spline(self.r_max))
            out = out.copy()
            out[far] = [base + envelope_integral(self.p, ri) - envelope_integral(self.p, self.r_max)
                        for ri in np.atleast_1d(r)[np.atleast_1d(far)]]
        return out


@dataclass(frozen=True)
class ShellData:
    k: int
    radius: float
    R0: float
    eps0: float
    A: float
    A_green: float
    zero_radius: float
    series: object = field(repr=False)


@dataclass
class Construction:
    profile: Profile
    R0: FuncSpec
    eps0: FuncSpec
    lattice: ShellLattice
    C: float
    sigma_d: float
    r0: float
    r1: float
    C1: float
    C2: float
    C3: float
    shells: list
    quadrature: dict
    table: EnvelopeTable = field(repr=False)

    def __post_init__(self):
        self.d = self.profile.d
        self._centers = self.lattice.centers
        self._shell_of = np.concatenate(
            [np.full(len(s.centers), i) for i, s in enumerate(self.lattice.shells)]
        ).astype(int) if len(self._centers) else np.zeros(0, dtype=int)
        self._tree = cKDTree(self._centers) if len(self._centers) else None
        self._ball_r = np.array([self.shells[i].R0 for i in self._shell_of]) \
            if len(self._centers) else np.zeros(0)

    # ---- radial pieces -------------------------------------------------
    def v(self, r):
        return np.exp(self.C * self.table(r))

    def v_prime(self, r):
        return self.C * phi_eval(self.profile, r) * self.v(r)

    def v_laplacian(self, r):
        p = self.profile
        phi = phi_eval(p, r)
        dphi = phi_derivative(p, r)
        C = self.C
        return self.v(r) * (C * C * phi * phi + C * dphi + (self.d - 1) * C * phi / r)

    @property
    def a_inner(self) -> float:
        return self.r1 - self.sigma_d * float(self.R0(0.0))

    @property
    def A_table(self) -> np.ndarray:
        return np.array([self.shells[i].A for i in self._shell_of])

    def v1(self, x):
        x = np.atleast_2d(x)
        kern = self.C1 * kt(self.d, np.linalg.norm(x, axis=1) / self.a_inner)
        kern = np.where(kern <= CENTER_SENTINEL * 1e-3, CENTER_SENTINEL, kern)
        width = self.sigma_d * float(self.profile.R(0.0))
        return np.maximum(kern, strip_function(x, width))

    # ---- the function u ------------------------------------------------
    def w(self, x, A_override=None):
        """``w`` at points ``x``; ``A_override`` maps shell index to A."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = self.v(np.linalg.norm(x, axis=1))
        flags = np.zeros(len(x), dtype=bool)
        if self._tree is None:
            return out, flags
        dist, idx = self._tree.query(x)
        inside = dist < self._ball_r[idx]
        for si in np.unique(self._shell_of[idx[inside]]):
            sel = np.flatnonzero(inside & (self._shell_of[idx] == si))
            sh = self.shells[si]
            A = sh.A if A_override is None else A_override.get(si, sh.A)
            lam = self._centers[idx[sel]]
            vals, kvals = self._inner_parts(x[sel], lam, sh)
            out[sel] = vals + A * kvals
            flags[sel] = dist[sel] == 0
        return out, flags

    def _inner_parts(self, x, lam, sh):
        """Poisson-extension part and unit-coefficient kernel part inside a ball."""
        local = _local_coords(x - lam, lam) / sh.R0
        kvals = kt(self.d, np.linalg.norm(x - lam, axis=1) / sh.R0)
        return sh.series(local), kvals

    def u(self, x, return_flags=False):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        out = np.empty(len(x))
        flags = np.zeros(len(x), dtype=bool)
        inner = r <= self.r1
        if inner.any():
            out[inner] = self.v1(x[inner])
            flags[inner] = r[inner] == 0
        if (~inner).any():
            wv, fl = self.w(x[~inner])
            out[~inner] = np.where(fl, CENTER_SENTINEL, self.C2 * wv - self.C3)
            flags[~inner] = fl
        return (out, flags) if return_flags else out

    def certified_balls(self, use_zero_radius: bool = False) -> BallUnion:
        """Balls ``B(lambda, R0 eps0)`` (or the computed zero radii) where ``u <= 0``."""
        if not len(self._centers):
            return BallUnion.empty(self.d)
        if use_zero_radius:
            rad = np.array([self.shells[i].zero_radius for i in self._shell_of])
        else:
            rad = np.array([self.shells[i].R0 * self.shells[i].eps0 for i in self._shell_of])
        return BallUnion(self._centers, rad)

    def to_dict(self) -> dict:
        return {
            "profile": self.profile.to_dict(), "R0": self.R0.to_dict(), "eps0": self.eps0.to_dict(),
            "C": self.C, "C1": self.C1, "C2": self.C2, "C3": self.C3,
            "r0": self.r0, "r1": self.r1, "sigma_d": self.sigma_d,
            "shells": [{"k": s.k, "radius": s.radius, "R0": s.R0, "eps0": s.eps0, "A": s.A,
                        "A_green": s.A_green, "zero_radius": s.zero_radius,
                        "n_centers": len(self.lattice.shells[i].centers)}
                       for i, s in enumerate(self.shells)],
            "lattice": self.lattice.to_dict(),
            "quadrature": self.quadrature,
        }


def _local_coords(off, lam):
    """``(axial, transverse)`` coordinates of ``off`` relative to the axis ``lam``."""
    axis = lam / np.linalg.norm(lam, axis=1, keepdims=True)
    axial = np.sum(off * axis, axis=1)
    if off.shape[1] == 2:
        trans = axis[:, 0] * off[:, 1] - axis[:, 1] * off[:, 0]
    else:
        trans = np.linalg.norm(off - axial[:, None] * axis, axis=1)
    return np.column_stack((axial, trans))


# --------------------------------------------------------------------------
# sphere quadrature
# --------------------------------------------------------------------------

def sphere_rule(d: int, n: int):
    """Nodes and weights (summing to 1) for averages over the unit sphere.

    d=2: ``n`` equal angles.  d=3: Gauss-Legendre in the polar cosine times
    equal azimuths, about ``n`` nodes in total.
    """
    if d == 2:
        t = 2 * np.pi * np.arange(n) / n
        return np.column_stack((np.cos(t), np.sin(t))), np.full(n, 1.0 / n)
    if d == 3:
        m = max(4, int(round(math.sqrt(n / 2))))
        z, wz = gauss_legendre(m)
        ph = 2 * np.pi * np.arange(2 * m) / (2 * m)
        Z, P = np.meshgrid(z, ph, indexing="ij")
        s = np.sqrt(1 - Z**2)
        nodes = np.column_stack(((s * np.cos(P)).ravel(), (s * np.sin(P)).ravel(), Z.ravel()))
        w = (np.asarray(wz)[:, None] / 2 / (2 * m) * np.ones_like(P)).ravel()
        return nodes, w
    raise UnsupportedDimension("sphere rules implemented for d = 2, 3")


# --------------------------------------------------------------------------
# choosing A_lambda
# --------------------------------------------------------------------------

def green_lower_bound(cons: Construction, sh: ShellData, lam, n_xi: int = 64,
                      order: int = 48) -> float:
    """``min_xi int_B P(y, xi) Lap v_lambda(y) dy`` divided by ``kt'(1)``.

    The Poisson kernel ``(1 - |y|^2) / (omega_d |y - xi|^d)`` is integrated in
    polar coordinates around the boundary point ``xi``, where it becomes the
    bounded weight ``(2 cos psi - s) / omega_d`` on ``0 < s < 2 cos psi``.
    """
    d = cons.d
    lam = np.asarray(lam, dtype=float)
    axis = lam / np.linalg.norm(lam)
    perp = _perp(axis)
    g, gw = gauss_legendre(order)
    g, gw = np.asarray(g), np.asarray(gw)
    best = math.inf
    for th in np.linspace(0, np.pi, n_xi):
        xi = math.cos(th) * axis + math.sin(th) * perp
        inward = -xi
        other = _perp(inward) if d == 2 else None
        if d == 2:
            psi = 0.5 * np.pi * g  # psi in (-pi/2, pi/2)
            wpsi = 0.5 * np.pi * gw
            dirs = np.cos(psi)[:, None] * inward + np.sin(psi)[:, None] * other
            weight_dir = wpsi
            omega = 2 * np.pi
        else:
            psi = 0.25 * np.pi * (g + 1)  # psi in (0, pi/2)
            m_az = 2 * order
            az = 2 * np.pi * np.arange(m_az) / m_az
            e1 = _perp(inward)
            e2 = np.cross(inward, e1)
            PS, AZ = np.meshgrid(psi, az, indexing="ij")
            dirs = (np.cos(PS)[..., None] * inward + np.sin(PS)[..., None]
                    * (np.cos(AZ)[..., None] * e1 + np.sin(AZ)[..., None] * e2)).reshape(-1, 3)
            weight_dir = ((0.25 * np.pi * gw * np.sin(psi))[:, None]
                          * np.full(m_az, 2 * np.pi / m_az)).ravel()
            psi = PS.ravel()
            omega = 4 * np.pi
        smax = 2 * np.cos(psi)[:, None]
        sv = 0.5 * smax * (g + 1)
        ws = 0.5 * smax * gw
        phys = lam + sh.R0 * (xi + sv[..., None] * dirs[:, None, :])
        lap = sh.R0**2 * cons.v_laplacian(np.linalg.norm(phys, axis=-1))
        total = float(weight_dir @ np.sum(ws * (smax - sv) * lap, axis=1)) / omega
        best = min(best, total)
    return best / kt_slope(d)


def _perp(axis):
    if axis.shape[0] == 2:
        return np.array([-axis[1], axis[0]])
    trial = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = trial - axis * (trial @ axis)
    return p / np.linalg.norm(p)


def _submean_linear(cons: Construction, si: int, lam, nodes_per_sphere: int):
    """Margins ``m0 + A m1`` and node values for the bisection probes of one shell."""
    sh = cons.shells[si]
    d = cons.d
    axis = lam / np.linalg.norm(lam)
    perp = _perp(axis)
    nodes, wq = sphere_rule(d, nodes_per_sphere)
    rows = []
    for th in np.linspace(0, np.pi, PROBE_ANGLES):
        direction = math.cos(th) * axis + math.sin(th) * perp
        for f in (1.0, 1.0 + 1.0 / 64):
            x = lam + f * sh.R0 * direction
            for rad in PROBE_RADII:
                pts = np.vstack((x[None, :], x + rad * sh.R0 * nodes))
                u0, u1 = _u_linear(cons, si, pts)
                m0 = wq @ u0[1:] - u0[0]
                m1 = wq @ u1[1:] - u1[0]
                rows.append((m0, m1, u0, u1))
    return rows


def _u_linear(cons, si, pts):
    """``u = u0 + A u1`` near shell ``si`` where ``A`` is that shell's coefficient."""
    w0, _ = cons.w(pts, {si: 0.0})
    w1, _ = cons.w(pts, {si: 1.0})
    return cons.C2 * w0 - cons.C3, cons.C2 * (w1 - w0)


def bisect_A(cons: Construction, si: int, start: float, tol: float = 1e-12,
             iterations: int = 64) -> float:
    """Largest A for which all bisection probes keep the sub-mean property."""
    lam = cons.lattice.shells[si].centers[0]
    rows = _submean_linear(cons, si, lam, BISECT_NODES if cons.d == 2 else 2048)

    def ok(A):
        for m0, m1, u0, u1 in rows:
            scale = max(1.0, float(np.max(np.abs(u0 + A * u1))))
            if m0 + A * m1 < -tol * scale:
                return False
        return True

    if not ok(0.0):
        raise ConstructionInfeasible("sub-mean property fails already with A = 0",
                                     shell=cons.shells[si].k)
    lo, hi = 0.0, max(start, 1e-300)
    while ok(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            return lo
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


# --------------------------------------------------------------------------
# zero radius
# --------------------------------------------------------------------------

def zero_radius(cons: Construction, lam, A=None, n_nodes: int = ZERO_NODES,
                iterations: int = 64) -> float:
    """Largest ``r`` with ``max_{dB(lam, r)} u <= 0``, by bisection."""
    lam = np.asarray(lam, dtype=float)
    dist, idx = cons._tree.query(lam)
    if dist > 1e-9 * max(1.0, np.linalg.norm(lam)):
        raise DomainError("point is not a lattice center")
    si = int(cons._shell_of[idx])
    sh = cons.shells[si]
    A = sh.A if A is None else float(A)
    if A == 0:
        return 0.0
    nodes = sphere_rule(cons.d, n_nodes)[0] if cons.d == 2 else fibonacci_sphere(n_nodes)
    lam_rows = np.broadcast_to(lam, (len(nodes), cons.d))

    def top(r):
        pts = lam + r * nodes
        vals, kvals = cons._inner_parts(pts, lam_rows, sh)
        return float(np.max(cons.C2 * (vals + A * kvals) - cons.C3))

    if top(sh.R0 * (1 - 1e-12)) <= 0:
        return sh.R0
    lo, hi = 0.0, sh.R0 * (1 - 1e-12)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if mid <= 0:
            break
        lo, hi = (mid, hi) if top(mid) <= 0 else (lo, mid)
    return lo


# --------------------------------------------------------------------------
# build
# --------------------------------------------------------------------------

def _sigma(d):
    return min(0.5, unit_ball_volume(d))


def _inner_radius(rho_ks, R0, sigma):
    """Sphere radius kept clear of the first shell: ``R0 + 1`` beyond the ball
    surface plus a margin of ``R0(0)/2``."""
    return 2 * rho_ks - 2 * float(R0(2 * rho_ks)) - 1 - float(R0(0.0)) / 2


def build(p: Profile, overrides: dict | None = None) -> Construction:
    opts = dict(DEFAULTS)
    unknown = set(overrides or {}) - set(DEFAULTS)
    if unknown:
        raise DomainError(f"unknown build options {sorted(unknown)}")
    opts.update(overrides or {})
    d = p.d
    if d not in (2, 3):
        raise UnsupportedDimension("constructions are implemented for d = 2, 3")
    rep = p.report
    if not rep["function_hypothesis"]:
        raise ProfileError("d/dt (1/phi) is not bounded on the sampled range")
    R0 = p.R.scaled(1.0 / 7.0)
    eps0 = p.eps.scaled(7.0, arg_scale=0.5)
    sigma = _sigma(d)
    r0 = threshold_r0(R0)
    k_max = int(opts["k_max"])
    rho = rho_recursion(R0, k_max)

    k_start = None
    for k in range(max(1, int(opts["k_min"])), k_max + 1):
        if rho[k] < r0:
            continue
        r1 = _inner_radius(rho[k], R0, sigma)
        if r1 >= r0 and r1 > sigma * float(R0(0.0)):
            k_start = k
            break
    if k_start is None:
        raise ConstructionInfeasible("no shell leaves room for the inner sphere r1")
    r1 = _inner_radius(rho[k_start], R0, sigma)

    for k in range(k_start, k_max + 1):
        e0 = float(eps0(2 * rho[k]))
        if not e0 < 1:
            raise ProfileError(f"eps0 = 7 eps(t/2) reaches {e0:.3g} >= 1 at shell {k}")

    lattice = make_shell_lattice(p, R0, k_max, seed=int(opts["seed"]), k_min=k_start)
    table = EnvelopeTable(p, 4 * rho[k_max] + 4 * float(R0(2 * rho[k_max])) + 10)

    if opts["C"] is not None:
        candidates = [float(opts["C"])]
    else:
        c_start = 2 * max(2 * rep["sup_dinv_phi"], 1.0)
        candidates = [c_start * 2**j for j in range(int(opts["max_doublings"]) + 1)]
    last_error = None
    for C in candidates:
        try:
            cons = _assemble(p, R0, eps0, lattice, C, sigma, r0, r1, table, opts)
        except ConstructionInfeasible as exc:
            last_error = exc
            continue
        u0 = float(cons.u(np.zeros(d))[0])
        if u0 < 1:
            raise ConstructionInfeasible(f"u(0) = {u0:.6g} < 1")
        return cons
    raise last_error


def _assemble(p, R0, eps0, lattice, C, sigma, r0, r1, table, opts):
    d = p.d
    a = r1 - sigma * float(R0(0.0))
    width = sigma * float(p.R(0.0))
    s_max = max(math.exp(r1), math.cosh(math.pi * math.sqrt(d - 1) * r1 / width))
    C1 = 2 * s_max / float(kt(d, r1 / a))
    vr1 = float(np.exp(C * table(r1)))
    dv_r1 = C * phi_eval(p, r1) * vr1
    slope_v1 = C1 * kt_slope(d) * a ** (d - 2) / r1 ** (d - 1)
    C2 = slope_v1 / dv_r1
    C3 = C2 * vr1 - C1 * float(kt(d, r1 / a))
    quad = {"disk_nodes": int(opts["disk_nodes"]), "ball_nodes": int(opts["ball_nodes"]),
            "bisect_nodes": BISECT_NODES, "zero_nodes": ZERO_NODES,
            "probe_radii": list(PROBE_RADII), "a_mode": opts["a_mode"],
            "safety": float(opts["safety"]), "seed": int(opts["seed"])}

    shells = []
    for s in lattice.shells:
        R0s = s.R0
        e0 = float(eps0(s.radius))
        v_of = lambda t, lam_norm=s.radius, R0s=R0s: np.exp(C * table(
            np.sqrt(lam_norm**2 + 2 * lam_norm * R0s * t + R0s**2)))
        series = fit_series(d, v_of, opts["disk_nodes"] if d == 2 else opts["ball_nodes"])
        shells.append(ShellData(s.k, s.radius, R0s, e0, 0.0, 0.0, 0.0, series))
    cons = Construction(p, R0, eps0, lattice, C, sigma, r0, r1, C1, C2, C3, shells, quad, table)

    for si, s in enumerate(lattice.shells):
        sh = cons.shells[si]
        lam = s.centers[0]
        A_green = green_lower_bound(cons, sh, lam)
        if opts["a_mode"] == "green":
            A = A_green
        elif opts["a_mode"] == "bisect":
            A = opts["safety"] * bisect_A(cons, si, A_green)
        else:
            raise DomainError(f"unknown A mode {opts['a_mode']!r}")
        cons.shells[si] = ShellData(sh.k, sh.radius, sh.R0, sh.eps0, A, A_green, 0.0, sh.series)
        r_zero = zero_radius(cons, lam)
        cons.shells[si] = ShellData(sh.k, sh.radius, sh.R0, sh.eps0, A, A_green, r_zero, sh.series)
        if r_zero < sh.R0 * sh.eps0:
            raise ConstructionInfeasible(
                f"zero radius {r_zero:.4g} below R0*eps0 = {sh.R0 * sh.eps0:.4g} at C = {C:g}",
                shell=sh.k)
    return cons


# --------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SubmeanResult:
    worst_margin: float
    margins: tuple


def submean_check(cons: Construction, x, radii, quad_nodes: int = 4096) -> SubmeanResult:
    """Relative sub-mean-value margins ``(mean_{dB(x,r)} u - u(x)) / scale``.

    ``scale = max(1, |u(x)|, max |u| on the sphere)``.  When the sphere lies
    inside one shell ball, the kernel term is averaged exactly
    (``mean kt(|y - lam|/R0) = kt(max(|x - lam|, r)/R0)``), so spheres that pass
    near a ball center do not suffer from the near-singular integrand.
    """
    x = np.asarray(x, dtype=float)
    d = cons.d
    nodes, wq = sphere_rule(d, quad_nodes)
    ux = float(cons.u(x)[0])
    margins = []
    inside_ball = None
    if cons._tree is not None:
        dist, idx = cons._tree.query(x)
        if np.linalg.norm(x) > cons.r1 and dist < cons._ball_r[idx]:
            inside_ball = (dist, idx)
    for r in radii:
        pts = x + r * nodes
        vals = cons.u(pts)
        scale = max(1.0, abs(ux), float(np.max(np.abs(vals))))
        if inside_ball is not None and inside_ball[0] + r < cons._ball_r[inside_ball[1]]:
            dist, idx = inside_ball
            si = int(cons._shell_of[idx])
            sh = cons.shells[si]
            lam = cons._centers[idx]
            lam_rows = np.broadcast_to(lam, (len(pts), d))
            smooth, _ = cons._inner_parts(pts, lam_rows, sh)
            s_x, _ = cons._inner_parts(x[None, :], lam[None, :], sh)
            k_mean = float(kt(d, max(dist, r) / sh.R0))
            k_x = float(kt(d, dist / sh.R0)) if dist > 0 else CENTER_SENTINEL
            m = cons.C2 * (wq @ smooth - s_x[0] + sh.A * (k_mean - k_x))
        else:
            m = float(wq @ vals) - ux
        margins.append(m / scale)
    return SubmeanResult(float(min(margins)), tuple(margins))


@dataclass(frozen=True)
class GrowthRow:
    rho: float
    M_hat: float
    ratio: float
    flagged: bool


def sphere_samples(d: int, n: int) -> np.ndarray:
    if d == 2:
        t = 2 * np.pi * np.arange(n) / n
        return np.column_stack((np.cos(t), np.sin(t)))
    return fibonacci_sphere(n)


def growth_profile(cons: Construction, rhos, samples_per_sphere: int = 4096) -> list[GrowthRow]:
    rhos = [float(r) for r in rhos]
    if any(r <= cons.r1 for r in rhos):
        raise DomainError("growth radii must exceed r1")
    if any(b <= a for a, b in zip(rhos, rhos[1:])):
        raise DomainError("growth radii must increase")
    dirs = sphere_samples(cons.d, samples_per_sphere)
    out = []
    for rho in rhos:
        M = float(np.max(cons.u(rho * dirs)))
        if M <= 0:
            out.append(GrowthRow(rho, M, math.nan, True))
        else:
            out.append(GrowthRow(rho, M, math.log(M) / envelope_integral(cons.profile, rho), False))
    return out


@dataclass(frozen=True)
class HeartCheck:
    rho: float
    lhs: float
    rhs: float
    M_hat: float
    omega: EstimateCI
    holds: bool


def zero_set_colander(cons: Construction, rho: float) -> Colander:
    balls = cons.certified_balls()
    if len(balls):
        gap = np.linalg.norm(balls.centers, axis=1) - balls.radii
        balls = balls.subset(gap < rho)
    return Colander(float(rho), balls)


def heart_check(cons: Construction, c: Colander | None, rho: float,
                cfg: WoSConfig | None = None, samples_per_sphere: int = 4096) -> HeartCheck:
    """``u(0) <= M(rho) * omega(0, dB_rho; B_rho minus Z)`` with ``omega`` taken
    at its upper 3-sigma value.  ``c=None`` uses the certified zero balls."""
    if not rho > cons.r1:
        raise DomainError("rho must exceed r1")
    col = zero_set_colander(cons, rho) if c is None else c
    if cfg is None:
        small = float(col.obstacles.radii.min()) if len(col.obstacles) else rho
        cfg = WoSConfig(delta=min(1e-4 * rho, 0.1 * small), n_walks=20_000)
    lhs = float(cons.u(np.zeros(cons.d))[0])
    M = growth_profile(cons, [rho], samples_per_sphere)[0].M_hat
    om = wos_escape(col, np.zeros(cons.d), cfg)
    rhs = M * min(1.0, om.p_hat + 3 * om.stderr)
    return HeartCheck(float(rho), lhs, rhs, M, om, lhs <= rhs)


def u_eval(cons: Construction, x) -> float:
    return float(cons.u(np.asarray(x, dtype=float))[0])


def volume_membership(cons: Construction):
    """Indicator of the zero set ``{u <= 0}``."""
    return lambda pts: cons.u(pts) <= 0
