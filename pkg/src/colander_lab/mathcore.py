"""Kernels, admissible (eps, R) profiles and the scalar invariants built on them.

A :class:`Profile` couples a dimension ``d`` with two parametric functions:
the scale ``R(t)`` and the relative size ``eps(t)``.  From them we derive the
envelope density

    phi(t) = 1 / (R(t) * sqrt(-ker_d(eps(t))))

whose integral ``int_1^rho phi`` governs both the decay of harmonic measure
and the growth of subharmonic functions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PreconditionError, ProfileError
from .quadrature import adaptive_simpson, gl_intervals

E_E = math.exp(math.e)

GRID_SIZE = 2048
DEFAULT_T_MAX = 1.0e4
CONCAVITY_TOL = 1e-9
LITTLE_O_RATIO = 0.5
# slack on the o(t) check so that linear profiles like (1+t)/2 validate
LITTLE_O_SLACK = 1e-3


def kernel_eval(d: int, t):
    """The capacity kernel: ``log t`` for d=2, ``-t**-(d-2)`` for d>=3."""
    _check_dim(d)
    arr = np.asarray(t, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("kernel argument must be positive")
    out = np.log(arr) if d == 2 else -(arr ** (2.0 - d))
    return float(out) if out.ndim == 0 else out


def kernel_inverse(d: int, y):
    _check_dim(d)
    y = np.asarray(y, dtype=float)
    if d == 2:
        out = np.exp(y)
    else:
        if np.any(y >= 0):
            raise DomainError("Newtonian kernel values are negative")
        out = (-y) ** (-1.0 / (d - 2))
    return float(out) if out.ndim == 0 else out


def _check_dim(d):
    if int(d) != d or d < 2:
        raise DomainError(f"dimension must be an integer >= 2, got {d!r}")


# --------------------------------------------------------------------------
# parametric functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FuncSpec:
    """``constant``: f(t) = value.

    ``gauge``: f(t) = amplitude * prod_n log_[n](y) ** exponents[n] with
    ``y = arg_scale * t + shift`` and log_[n] the n-fold iterated logarithm.
    """

    family: str
    value: float = 1.0
    amplitude: float = 1.0
    exponents: tuple = ()
    shift: float = E_E
    arg_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "exponents", tuple(float(a) for a in self.exponents))
        if self.family == "constant":
            if not self.value > 0:
                raise ProfileError("constant value must be positive")
        elif self.family == "gauge":
            if not self.amplitude > 0:
                raise ProfileError("gauge amplitude must be positive")
            if self.exponents and not 0.0 <= self.exponents[0] <= 1.0:
                raise ProfileError("gauge exponent alpha_0 must lie in [0, 1]")
            if self.shift < E_E:
                raise ProfileError("gauge shift must be at least e**e")
            if not self.arg_scale > 0:
                raise ProfileError("arg_scale must be positive")
            last = max((i for i, a in enumerate(self.exponents) if a != 0.0), default=0)
            logs = self._logs(np.array([self.shift]))
            if not np.all(np.isfinite(logs[: last + 1])) or np.any(logs[: last + 1] <= 0):
                raise ProfileError("iterated logarithms undefined at t=0; increase shift")
        else:
            raise ProfileError(f"unknown function family {self.family!r}")

    @classmethod
    def constant(cls, value: float) -> "FuncSpec":
        return cls("constant", value=float(value))

    @classmethod
    def gauge(cls, amplitude, exponents, shift=E_E, arg_scale=1.0) -> "FuncSpec":
        return cls("gauge", amplitude=float(amplitude), exponents=tuple(exponents),
                   shift=float(shift), arg_scale=float(arg_scale))

    def _logs(self, y):
        out = [y]
        with np.errstate(divide="ignore", invalid="ignore"):
            for _ in range(1, len(self.exponents)):
                out.append(np.log(out[-1]))
        return np.array(out)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            out = np.full(t.shape, self.value)
        else:
            logs = self._logs(self.arg_scale * t + self.shift)
            out = np.full(t.shape, self.amplitude)
            for a, lg in zip(self.exponents, logs):
                if a != 0.0:
                    out = out * lg**a
        return float(out) if out.ndim == 0 else out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            out = np.zeros(t.shape)
        else:
            logs = self._logs(self.arg_scale * t + self.shift)
            dlog = np.full(t.shape, self.arg_scale)  # d/dt log_[0](y) = arg_scale
            acc = np.zeros(t.shape)
            for n, (a, lg) in enumerate(zip(self.exponents, logs)):
                if n > 0:
                    dlog = dlog / logs[n - 1]
                if a != 0.0:
                    acc = acc + a * dlog / lg
            out = np.asarray(self(t)) * acc
        return float(out) if out.ndim == 0 else out

    def scaled(self, factor: float, arg_scale: float = 1.0) -> "FuncSpec":
        """The function ``t -> factor * f(arg_scale * t)``."""
        if self.family == "constant":
            return FuncSpec.constant(self.value * factor)
        return FuncSpec.gauge(self.amplitude * factor, self.exponents, self.shift,
                              self.arg_scale * arg_scale)

    def to_dict(self) -> dict:
        if self.family == "constant":
            return {"family": "constant", "value": self.value}
        return {"family": "gauge", "amplitude": self.amplitude,
                "exponents": list(self.exponents), "shift": self.shift,
                "arg_scale": self.arg_scale}

    @classmethod
    def from_dict(cls, data: dict) -> "FuncSpec":
        data = dict(data)
        family = data.pop("family", None)
        allowed = {"constant": {"value"},
                   "gauge": {"amplitude", "exponents", "shift", "arg_scale"}}
        if family not in allowed:
            raise ProfileError(f"unknown function family {family!r}")
        extra = set(data) - allowed[family]
        if extra:
            raise ProfileError(f"unexpected keys for {family}: {sorted(extra)}")
        if family == "constant":
            return cls.constant(data["value"])
        return cls.gauge(data["amplitude"], data.get("exponents", ()),
                         data.get("shift", E_E), data.get("arg_scale", 1.0))


# --------------------------------------------------------------------------
# profiles
# --------------------------------------------------------------------------

def sample_grid(t_max: float, n: int = GRID_SIZE) -> np.ndarray:
    """``n`` samples on ``[0, t_max]``: zero followed by log-spaced points."""
    return np.concatenate(([0.0], np.geomspace(t_max * 1e-7, t_max, n - 1)))


@dataclass(frozen=True)
class Profile:
    d: int
    R: FuncSpec
    eps: FuncSpec
    t_max: float = DEFAULT_T_MAX
    _report: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        _check_dim(self.d)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "_report", validate_profile(self, self.t_max))

    @property
    def report(self) -> dict:
        return dict(self._report)

    def phi(self, t):
        return phi_eval(self, t)

    def to_dict(self) -> dict:
        return {"d": self.d, "R": self.R.to_dict(), "eps": self.eps.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, t_max: float = DEFAULT_T_MAX) -> "Profile":
        extra = set(data) - {"d", "R", "eps"}
        if extra:
            raise ProfileError(f"unexpected profile keys: {sorted(extra)}")
        try:
            return cls(int(data["d"]), FuncSpec.from_dict(data["R"]),
                       FuncSpec.from_dict(data["eps"]), t_max=t_max)
        except KeyError as exc:
            raise ProfileError(f"missing profile key {exc}") from None

    @classmethod
    def from_json(cls, text: str, t_max: float = DEFAULT_T_MAX) -> "Profile":
        return cls.from_dict(json.loads(text), t_max=t_max)

    def with_t_max(self, t_max: float) -> "Profile":
        return Profile(self.d, self.R, self.eps, t_max=t_max)


def _neg_ker_eps(d, eps):
    return -np.log(eps) if d == 2 else eps ** (2.0 - d)


def validate_profile(p: Profile, t_max: float) -> dict:
    """Check the structural invariants on a sample grid; raise ProfileError.

    Returns a report with the grid diagnostics, including the two theorem
    hypotheses, which are recorded but not enforced here.
    """
    t = sample_grid(t_max)
    R = np.asarray(p.R(t))
    eps = np.asarray(p.eps(t))
    if not np.all(np.isfinite(R)) or np.any(R <= 0):
        raise ProfileError("R must be positive and finite on the sample grid")
    if R[0] < 1.0:
        raise ProfileError("R(0) must be at least 1")
    dt = np.diff(t)
    slope = np.diff(R) / dt
    noise = 8.0 * np.finfo(float).eps * np.abs(R[1:]) / dt
    if np.any(slope < -noise):
        raise ProfileError("R must be non-decreasing")
    if np.any(np.diff(slope) > CONCAVITY_TOL + noise[1:] + noise[:-1]):
        raise ProfileError("R must be concave")
    max_slope = float(slope.max())
    if not max_slope < 1.0:
        raise ProfileError("sup R' must be below 1")
    if R[-1] / t[-1] > LITTLE_O_RATIO + LITTLE_O_SLACK:
        raise ProfileError("R(t) = o(t) check failed at the largest sample")
    if not np.all(np.isfinite(eps)) or np.any(eps <= 0) or np.any(eps >= 1):
        raise ProfileError("eps must take values in (0, 1)")
    eps_noise = 8.0 * np.finfo(float).eps * eps[1:]
    if np.any(np.diff(eps) > eps_noise):
        raise ProfileError("eps must be non-increasing")

    phi = 1.0 / (R * np.sqrt(_neg_ker_eps(p.d, eps)))
    tail = t >= 0.9 * t[-1]
    inv_t_phi = 1.0 / (t[tail] * phi[tail])
    dinv = inverse_phi_derivative(p, t)
    late = (t >= 0.1 * t[-1])
    mid = (t >= 0.01 * t[-1]) & ~late
    bounded = bool(np.all(np.isfinite(dinv)) and
                   dinv[late].max() <= 1.02 * max(dinv[mid].max(), 0.0) + 1e-12)
    return {
        "t_max": float(t_max),
        "c_R": 1.0 - max_slope,
        "max_slope": max_slope,
        "limsup_inv_t_phi": float(inv_t_phi.max()),
        "measure_hypothesis": bool(inv_t_phi.max() < 1.0),
        "sup_dinv_phi": float(dinv.max()),
        "function_hypothesis": bounded,
        "phi_nonincreasing": bool(np.all(np.diff(phi) <= 8 * np.finfo(float).eps * phi[1:])),
    }


# --------------------------------------------------------------------------
# phi and its integrals
# --------------------------------------------------------------------------

def phi_eval(p: Profile, t):
    """``1 / (R(t) * sqrt(-ker_d(eps(t))))``, vectorized over ``t``."""
    t = np.asarray(t, dtype=float)
    eps = np.asarray(p.eps(t))
    if np.any(eps >= 1) or np.any(eps <= 0):
        raise DomainError("phi requires eps(t) in (0, 1)")
    out = 1.0 / (np.asarray(p.R(t)) * np.sqrt(_neg_ker_eps(p.d, eps)))
    return float(out) if out.ndim == 0 else out


def phi_derivative(p: Profile, t):
    """Analytic d/dt phi."""
    t = np.asarray(t, dtype=float)
    R, dR = np.asarray(p.R(t)), np.asarray(p.R.derivative(t))
    e, de = np.asarray(p.eps(t)), np.asarray(p.eps.derivative(t))
    q = _neg_ker_eps(p.d, e)
    dq = -de / e if p.d == 2 else (2.0 - p.d) * e ** (1.0 - p.d) * de
    phi = 1.0 / (R * np.sqrt(q))
    out = -phi * (dR / R + 0.5 * dq / q)
    return float(out) if out.ndim == 0 else out


def inverse_phi_derivative(p: Profile, t):
    """d/dt (1/phi)."""
    t = np.asarray(t, dtype=float)
    phi = np.asarray(phi_eval(p, t))
    out = -np.asarray(phi_derivative(p, t)) / phi**2
    return float(out) if out.ndim == 0 else out


def envelope_integral(p: Profile, rho: float, rtol: float = 1e-11) -> float:
    """``int_1^rho phi(t) dt`` by adaptive Simpson."""
    if not rho >= 1:
        raise DomainError("envelope integral needs rho >= 1")
    return adaptive_simpson(lambda t: phi_eval(p, t), 1.0, float(rho), rtol=rtol)


def big_phi(p: Profile, x: float, rtol: float = 1e-11) -> float:
    """``Phi(x) = int_0^x dt / R(t)``."""
    if not x >= 0:
        raise DomainError("Phi is defined for x >= 0")
    return adaptive_simpson(lambda t: 1.0 / np.asarray(p.R(t)), 0.0, float(x), rtol=rtol)


# --------------------------------------------------------------------------
# the rho_n recursion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RhoSequence:
    rho: np.ndarray
    c_R: float

    def __len__(self):
        return len(self.rho)

    def phi_at_nodes(self, p: Profile) -> np.ndarray:
        """``Phi(rho_n)`` for every stored n, by per-step Gauss-Legendre sums."""
        pieces = gl_intervals(lambda t: 1.0 / np.asarray(p.R(t)), self.rho[:-1], self.rho[1:])
        return np.concatenate(([0.0], np.cumsum(pieces)))

    def sandwich(self, p: Profile, rel_tol: float = 1e-12) -> dict:
        """Check ``c_R * n <= Phi(rho_n) <= n`` for all n.

        ``rel_tol`` absorbs summation round-off only.
        """
        n = np.arange(len(self.rho), dtype=float)
        val = self.phi_at_nodes(p)
        lower_ok = val >= self.c_R * n * (1.0 - rel_tol)
        upper_ok = val <= n * (1.0 + rel_tol)
        return {"phi": val, "lower_ok": lower_ok, "upper_ok": upper_ok,
                "holds": bool(lower_ok.all() and upper_ok.all())}


def rho_recursion(R, n_max: int) -> np.ndarray:
    rho = np.empty(n_max + 1)
    rho[0] = 0.0
    for n in range(n_max):
        rho[n + 1] = rho[n] + float(R(rho[n]))
    return rho


def rho_sequence(p: Profile, n_max: int) -> RhoSequence:
    if n_max < 1:
        raise DomainError("n_max must be at least 1")
    rho = rho_recursion(p.R, n_max)
    if not np.all(np.isfinite(rho)):
        raise ProfileError("rho_n overflowed; R grows too fast for this n_max")
    report = validate_profile(p, 10.0 * rho[-1])
    return RhoSequence(rho=rho, c_R=report["c_R"])


@dataclass(frozen=True)
class OscillationReport:
    n: int
    i_n: int
    e_rho: float
    lhs: float
    rhs: float
    holds: bool


def oscillation_report(seq: RhoSequence, p: Profile, n: int) -> OscillationReport:
    """Compare ``max_k R(rho_n)/R(rho_k)`` over ``n - i(n) <= k <= n`` with
    ``1 / (1 - e(rho_n))``."""
    if not 0 <= n < len(seq.rho):
        raise DomainError("n outside the stored sequence")
    rho_n = seq.rho[n]
    i_n = int(math.floor(math.sqrt(float(_neg_ker_eps(p.d, p.eps(rho_n))))))
    if n < i_n:
        raise PreconditionError(f"n={n} is smaller than i(n)={i_n}")
    if rho_n <= 0:
        raise PreconditionError("e(rho_0) is undefined")
    e = 1.0 / (rho_n * phi_eval(p, rho_n))
    if not e < 1:
        raise PreconditionError(f"e(rho_n)={e:.4g} is not below 1")
    Rn = float(p.R(rho_n))
    Rk = np.asarray(p.R(seq.rho[n - i_n: n + 1]))
    lhs = float(np.max(Rn / Rk))
    rhs = 1.0 / (1.0 - e)
    return OscillationReport(n, i_n, e, lhs, rhs, lhs <= rhs)


# --------------------------------------------------------------------------
# thinness diagnostic
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WienerSeries:
    terms: np.ndarray
    partial_sums: np.ndarray
    diverging_hint: bool


def wiener_series(d: int, gamma: float, layer_caps) -> WienerSeries:
    """Partial sums of the thinness series for the layer capacities.

    d=2: ``log(gamma) * sum n / log(1/C(E_n))``; d>=3: the displayed form
    ``sum gamma**(n(d-2)) * C(E_n)**(d-2)``.  Layers are numbered from 1.
    """
    _check_dim(d)
    if not gamma > 1:
        raise DomainError("gamma must exceed 1")
    caps = np.asarray(layer_caps, dtype=float)
    if caps.size == 0:
        empty = np.zeros(0)
        return WienerSeries(empty, empty, False)
    if np.any(caps <= 0):
        raise DomainError("layer capacities must be positive")
    n = np.arange(1, caps.size + 1, dtype=float)
    if d == 2:
        if np.any(caps >= 1):
            raise DomainError("d=2 series needs capacities below 1")
        terms = math.log(gamma) * n / np.log(1.0 / caps)
    else:
        terms = gamma ** (n * (d - 2)) * caps ** (d - 2)
    sums = np.cumsum(terms)
    q = max(2, terms.size // 4)
    tail = terms[-q:]
    hint = bool(terms.size >= 2 and np.all(np.diff(tail) >= 0))
    return WienerSeries(terms, sums, hint)
