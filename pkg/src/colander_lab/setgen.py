"""Obstacle sets made of balls, colanders, shell lattices and the recurrence test."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DomainError, GeometryError
from .mathcore import FuncSpec, Profile, rho_recursion
from .rng import generator, sphere_points

BRUTE_FORCE_MAX = 64


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


# --------------------------------------------------------------------------
# ball unions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BallUnion:
    centers: np.ndarray
    radii: np.ndarray
    _tree: cKDTree = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        if c.ndim != 2:
            c = c.reshape(len(r), -1)
        if c.shape[0] != r.shape[0]:
            raise GeometryError("centers and radii differ in length")
        if np.any(~(r > 0)):
            raise GeometryError("ball radii must be positive")
        c.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)
        if len(r) > BRUTE_FORCE_MAX:
            object.__setattr__(self, "_tree", cKDTree(c))

    @classmethod
    def empty(cls, d: int) -> "BallUnion":
        return cls(np.zeros((0, d)), np.zeros(0))

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    def __len__(self):
        return len(self.radii)

    @property
    def r_max(self) -> float:
        return float(self.radii.max()) if len(self) else 0.0

    def subset(self, mask) -> "BallUnion":
        return BallUnion(self.centers[mask], self.radii[mask])

    def scaled_radii(self, factor: float) -> "BallUnion":
        return BallUnion(self.centers, self.radii * factor)

    def nearest(self, x):
        """Distance ``min_i |x - c_i| - r_i`` and the minimizing index.

        Accepts one point or an ``(n, d)`` array.  Empty unions give ``inf``
        and index ``-1``.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        n = pts.shape[0]
        if len(self) == 0:
            dist, idx = np.full(n, np.inf), np.full(n, -1)
        elif self._tree is None:
            dist, idx = _brute_nearest(pts, self.centers, self.radii)
        else:
            dist, idx = self._tree_nearest(pts)
        if single:
            return float(dist[0]), int(idx[0])
        return dist, idx

    def _tree_nearest(self, pts):
        k = min(16, len(self))
        cd, ci = self._tree.query(pts, k=k)
        cand = cd - self.radii[ci]
        j = np.argmin(cand, axis=1)
        rows = np.arange(len(pts))
        dist = cand[rows, j]
        idx = ci[rows, j]
        # a ball outside the k nearest centers is farther than cd[:, -1] - r_max
        bad = dist > cd[:, -1] - self.r_max
        if np.any(bad) and k < len(self):
            bd, bi = _brute_nearest(pts[bad], self.centers, self.radii)
            dist[bad], idx[bad] = bd, bi
        return dist, idx

    def contains(self, x) -> np.ndarray:
        dist, _ = self.nearest(np.atleast_2d(x))
        return dist <= 0

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"cx_{j + 1}" for j in range(self.d)] + ["r"])
        for c, r in zip(self.centers, self.radii):
            w.writerow([repr(float(v)) for v in c] + [repr(float(r))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, source) -> "BallUnion":
        text = Path(source).read_text(encoding="utf-8") if isinstance(source, Path) \
            or (isinstance(source, str) and "\n" not in source) else source
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        d = len(header) - 1
        if header != [f"cx_{j + 1}" for j in range(d)] + ["r"]:
            raise GeometryError(f"unexpected ball CSV header {header}")
        data = np.array([[float(v) for v in row] for row in rows[1:] if row]).reshape(-1, d + 1)
        return cls(data[:, :d], data[:, d])


def _brute_nearest(pts, centers, radii, block=4096):
    dist = np.empty(len(pts))
    idx = np.empty(len(pts), dtype=int)
    for s in range(0, len(pts), block):
        p = pts[s:s + block]
        gaps = np.linalg.norm(p[:, None, :] - centers[None, :, :], axis=2) - radii[None, :]
        idx[s:s + block] = np.argmin(gaps, axis=1)
        dist[s:s + block] = gaps[np.arange(len(p)), idx[s:s + block]]
    return dist, idx


# --------------------------------------------------------------------------
# colanders
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Colander:
    rho_outer: float
    obstacles: BallUnion
    profile: Profile | None = None

    def __post_init__(self):
        if not self.rho_outer > 0:
            raise GeometryError("rho_outer must be positive")
        ob = self.obstacles
        if len(ob):
            gaps = np.linalg.norm(ob.centers, axis=1) - ob.radii
            if np.any(gaps >= self.rho_outer):
                raise GeometryError("every obstacle must meet the open outer ball")
        if self.profile is not None and not self.rho_outer > float(self.profile.R(0.0)):
            raise GeometryError("rho_outer must exceed R(0)")

    @property
    def d(self) -> int:
        return self.obstacles.d

    def with_obstacles(self, obstacles: BallUnion) -> "Colander":
        return Colander(self.rho_outer, obstacles, self.profile)

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        csv_path = stem.with_suffix(".csv")
        json_path = stem.with_suffix(".json")
        self.obstacles.to_csv(csv_path)
        side = {"rho_outer": self.rho_outer,
                "profile": None if self.profile is None else self.profile.to_dict()}
        json_path.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return csv_path, json_path

    @classmethod
    def load(cls, stem) -> "Colander":
        stem = Path(stem)
        side = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        balls = BallUnion.from_csv(stem.with_suffix(".csv"))
        prof = side.get("profile")
        return cls(float(side["rho_outer"]), balls,
                   None if prof is None else Profile.from_dict(prof))


@dataclass(frozen=True)
class SignedDistance:
    to_outer: float
    to_obstacle: float
    nearest_obstacle_index: int | None


def signed_distance(x, c: Colander) -> SignedDistance:
    x = np.asarray(x, dtype=float)
    to_outer = c.rho_outer - float(np.linalg.norm(x))
    if not to_outer > 0:
        raise DomainError("point lies outside the outer ball")
    dist, idx = c.obstacles.nearest(x)
    if not dist > 0:
        raise DomainError("point lies inside an obstacle")
    return SignedDistance(to_outer, dist, None if idx < 0 else idx)


def _cube_grid(side: float, reach: float, d: int) -> np.ndarray:
    """Centers ``side * (i + 1/2)`` of all grid cubes meeting ``[-reach, reach]^d``."""
    m = int(math.ceil(reach / side))
    axis = side * (np.arange(-m, m) + 0.5)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def make_cube_colander(p: Profile, rho: float, fill: float = 1.0, seed: int = 0) -> Colander:
    """One ball of radius ``eps*R*fill`` at the center of every cube inside B(0, rho).

    Cubes have side ``4 R`` evaluated at the start of the layer containing
    their center; for constant ``R`` this is the plain grid of side ``4R``.
    The layout is deterministic; ``seed`` is accepted for interface symmetry.
    """
    if not 0 < fill <= 1:
        raise DomainError("fill must lie in (0, 1]")
    if not rho > float(p.R(0.0)):
        raise DomainError("rho must exceed R(0)")
    d = p.d
    rho_n = _layers_up_to(p.R, rho)
    centers = []
    for n in range(len(rho_n) - 1):
        side = 4.0 * float(p.R(rho_n[n]))
        grid = _cube_grid(side, rho, d)
        corner = np.linalg.norm(np.abs(grid) + side / 2, axis=1)
        norm = np.linalg.norm(grid, axis=1)
        keep = (corner <= rho) & (norm >= rho_n[n]) & (norm < rho_n[n + 1])
        centers.append(grid[keep])
    centers = np.concatenate(centers) if centers else np.zeros((0, d))
    order = np.lexsort(centers.T[::-1])
    centers = centers[order]
    norms = np.linalg.norm(centers, axis=1)
    radii = np.asarray(p.eps(norms)) * np.asarray(p.R(norms)) * fill
    return Colander(float(rho), BallUnion(centers, np.atleast_1d(radii)), p)


def _layers_up_to(R, rho):
    out = [0.0]
    while out[-1] <= rho * math.sqrt(2):
        out.append(out[-1] + float(R(out[-1])))
    return np.array(out)


# --------------------------------------------------------------------------
# shell lattices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Shell:
    k: int
    radius: float
    centers: np.ndarray
    R0: float


@dataclass(frozen=True)
class ShellLattice:
    d: int
    shells: tuple
    r0: float

    @property
    def centers(self) -> np.ndarray:
        if not self.shells:
            return np.zeros((0, self.d))
        return np.concatenate([s.centers for s in self.shells])

    @property
    def ball_radii(self) -> np.ndarray:
        if not self.shells:
            return np.zeros(0)
        return np.concatenate([np.full(len(s.centers), s.R0) for s in self.shells])

    def __len__(self):
        return sum(len(s.centers) for s in self.shells)

    def to_dict(self) -> dict:
        return {"d": self.d, "r0": self.r0,
                "shells": [{"k": s.k, "radius": s.radius, "R0": s.R0,
                            "centers": s.centers.tolist()} for s in self.shells]}


def threshold_r0(R0: FuncSpec, t_max: float = 1e6) -> float:
    """Smallest ``t`` with ``R0(s) <= s/2`` for all ``s >= t``.

    ``R0(t) - t/2`` is concave and positive at 0, so it changes sign once.
    """
    g = lambda t: float(R0(t)) - t / 2
    hi = 1.0
    while g(hi) > 0:
        hi *= 2
        if hi > t_max:
            raise GeometryError("R0(t) <= t/2 never holds on the sampled range")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if g(mid) > 0 else (lo, mid)
    return hi


def make_shell_lattice(p: Profile, R0: FuncSpec, k_max: int, seed: int = 0,
                       k_min: int = 0, n_check: int = 10_000) -> ShellLattice:
    """Points on the spheres ``2 rho_k S^{d-1}`` that are separated and covering.

    ``rho_k`` follows ``rho_{k+1} = rho_k + R0(rho_k)``; shells with
    ``rho_k < r0`` or ``k < k_min`` are skipped.
    """
    d = p.d
    r0 = threshold_r0(R0)
    rho = rho_recursion(R0, max(k_max, 0))
    shells = []
    for k in range(max(k_min, 0), k_max + 1):
        if rho[k] < r0 or rho[k] <= 0:
            continue
        radius = 2.0 * rho[k]
        rad0 = float(R0(radius))
        rng = generator(seed, f"shell/{k}")
        if d == 2:
            pts = _circle_shell(radius, rad0, rng)
        else:
            pts = _sphere_shell(radius, rad0, d, rng)
        _assert_shell(pts, radius, rad0, d, generator(seed, f"shell-check/{k}"), n_check)
        shells.append(Shell(k, radius, pts, rad0))
    return ShellLattice(d, tuple(shells), r0)


def _circle_shell(radius, rad0, rng):
    sep, cover = 2 * rad0 + 2, 4 * rad0
    # covering distance 2r sin(pi/2N), neighbour chord 2r sin(pi/N)
    covers = lambda n: 2 * radius * math.sin(math.pi / (2 * n)) <= cover
    separates = lambda n: n == 1 or 2 * radius * math.sin(math.pi / n) > sep
    n_lo = 1 if cover >= 2 * radius else math.ceil(math.pi / (2 * math.asin(cover / (2 * radius))))
    while n_lo > 1 and covers(n_lo - 1):
        n_lo -= 1
    while not covers(n_lo):
        n_lo += 1
    n_hi = 1 if sep >= 2 * radius else math.floor(math.pi / math.asin(sep / (2 * radius)))
    while n_hi > 1 and not separates(n_hi):
        n_hi -= 1
    while separates(n_hi + 1):
        n_hi += 1
    if n_hi < n_lo:
        raise GeometryError(f"no equal-angle count separates and covers radius {radius:g}")
    count = (n_lo + n_hi) // 2
    theta = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(count) / count
    return radius * np.column_stack((np.cos(theta), np.sin(theta)))


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = np.pi * (1 + 5**0.5) * i
    s = np.sqrt(1 - z * z)
    return np.column_stack((s * np.cos(phi), s * np.sin(phi), z))


def _random_rotation(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _sphere_shell(radius, rad0, d, rng):
    sep, cover = 2 * rad0 + 2, 4 * rad0
    if sep >= 2 * cover:
        raise GeometryError("separation exceeds twice the covering radius")
    # hexagonal spacing between the separation and the covering limit
    a = 0.5 * (sep + min(2 * cover, math.sqrt(3) * cover * 1.1))
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2) * radius ** (d - 1)
    cell = math.sqrt(3) / 2 * a * a if d == 3 else a ** (d - 1)
    n = max(1, int(round(area / cell)))
    if d == 3:
        cand = fibonacci_sphere(n) @ _random_rotation(rng, 3).T
    else:
        cand = sphere_points(rng, 4 * n, d)
    pts = _greedy_separated(radius * cand, sep, [])
    clean = 0
    for _ in range(100):
        # fresh samples each round; stop after two clean rounds
        test = radius * sphere_points(rng, 20 * max(n, 1000), d)
        far = cKDTree(pts).query(test)[0] > cover
        if not far.any():
            clean += 1
            if clean == 2:
                break
            continue
        clean = 0
        before = len(pts)
        pts = _greedy_separated(test[far], sep, list(pts))
        if len(pts) == before:
            raise GeometryError(f"cannot cover radius {radius:g} under separation")
    return np.array(pts)


def _greedy_separated(cand, sep, kept):
    kept = list(kept)
    for x in cand:
        if not kept or np.min(np.linalg.norm(np.asarray(kept) - x, axis=1)) > sep:
            kept.append(x)
    return kept


def _assert_shell(pts, radius, rad0, d, rng, n_check):
    sep, cover = 2 * rad0 + 2, 4 * rad0
    if len(pts) > 1:
        dist, _ = cKDTree(pts).query(pts, k=2)
        if not np.all(dist[:, 1] > sep):
            raise GeometryError("shell separation violated")
    test = radius * sphere_points(rng, n_check, d)
    if not np.all(cKDTree(pts).query(test)[0] <= cover):
        raise GeometryError("shell covering violated")


# --------------------------------------------------------------------------
# recurrence predicate
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeResult:
    x: tuple
    lhs: float
    rhs: float
    passed: bool
    stderr: float = 0.0
    n_clipped: int = 0


def clip_to_ball(E: BallUnion, x, R: float) -> tuple[BallUnion, int]:
    """Under-approximate ``B(x, R) & E`` by a union of balls.

    Balls whose center lies in the closed ball are kept; balls crossing the
    sphere are replaced by the largest ball inside the lens they cut out.
    Returns the clipped union and the number of shrunk balls.
    """
    x = np.asarray(x, dtype=float)
    if len(E) == 0:
        return E, 0
    off = E.centers - x
    dist = np.linalg.norm(off, axis=1)
    keep = dist <= R
    c, r = E.centers[keep], E.radii[keep]
    dist, off = dist[keep], off[keep]
    straddle = dist + r > R
    new_c, new_r = c.copy(), r.copy()
    for i in np.flatnonzero(straddle):
        if r[i] >= dist[i] + R:
            new_c[i], new_r[i] = x, R
            continue
        mid = 0.5 * (dist[i] - r[i] + R)
        rad = min(r[i], 0.5 * (R - dist[i] + r[i]), R)
        u = off[i] / dist[i] if dist[i] > 0 else np.eye(len(x))[0]
        new_c[i], new_r[i] = x + mid * u, rad
    return BallUnion(new_c, new_r), int(straddle.sum())


def recurrence_check(E: BallUnion, p: Profile, probes, mode: str = "ratio", caps=None,
                     membership=None, n_samples: int = 100_000, seed: int = 0) -> list[ProbeResult]:
    """Decide the recurrence inequality at each probe point.

    ``raw``:    C(B(x,R) & E) > R * eps
    ``ratio``:  C(B(x,R) & E) / C(B(x,R)) > C(B(x,eps))
    ``volume``: m(B(x,R) & Z) / m(B(x,R)) > m(B(x,eps)), by Monte Carlo.

    ``caps`` is a callable mapping a BallUnion to its capacity (0 for the
    empty union).  In volume mode ``Z = E`` unless ``membership`` (a
    vectorized indicator) is given, in which case ``Z`` is the union of ``E``
    and that set; ``E`` should then list balls known to lie in ``Z``.
    """
    if mode not in ("raw", "ratio", "volume"):
        raise ConfigError(f"unknown recurrence mode {mode!r}")
    if mode != "volume" and caps is None:
        raise ConfigError(f"mode {mode!r} needs a capacity oracle")
    d = p.d
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    out = []
    for i, x in enumerate(probes):
        t = float(np.linalg.norm(x))
        R = float(p.R(t))
        eps = float(p.eps(t))
        if mode == "volume":
            frac, se = _volume_fraction(E, membership, x, R, n_samples,
                                        generator(seed, f"recurrence-volume/{i}"))
            rhs = unit_ball_volume(d) * eps**d
            out.append(ProbeResult(tuple(x), frac, rhs, frac > rhs, se))
            continue
        clipped, n_clip = clip_to_ball(E, x, R)
        cap = float(caps(clipped)) if len(clipped) else 0.0
        if mode == "raw":
            lhs, rhs = cap, R * eps
        else:
            lhs = cap / float(caps(BallUnion(x[None, :], [R])))
            rhs = float(caps(BallUnion(x[None, :], [eps])))
        out.append(ProbeResult(tuple(x), lhs, rhs, lhs > rhs, 0.0, n_clip))
    return out


def _volume_fraction(E: BallUnion, membership, x, R, n_samples, rng):
    """Estimate ``m(B(x,R) & Z) / m(B(x,R))`` and its standard error.

    Balls of ``E`` are integrated one at a time by sampling inside each ball
    and weighting by ``1/multiplicity`` so overlaps count once; a ball that
    sits inside ``B(x,R)`` and meets no other ball contributes its exact
    volume.  The remainder ``Z minus E`` is sampled uniformly in ``B(x,R)``.
    Tiny obstacles are thereby resolved even when uniform sampling would
    never land in them.
    """
    d = x.shape[0]
    vol_B = unit_ball_volume(d) * R**d
    total, var = 0.0, 0.0
    if len(E):
        near = E.subset(np.linalg.norm(E.centers - x, axis=1) < R + E.radii)
        if len(near):
            gaps = np.linalg.norm(near.centers[:, None] - near.centers[None], axis=2)
            overlap = gaps < near.radii[:, None] + near.radii[None]
            np.fill_diagonal(overlap, False)
            inner = np.linalg.norm(near.centers - x, axis=1) + near.radii <= R
            n_each = max(64, n_samples // max(1, len(near)))
            for j in range(len(near)):
                vol_j = unit_ball_volume(d) * near.radii[j] ** d
                if inner[j] and not overlap[j].any():
                    total += vol_j
                    continue
                pts = near.centers[j] + near.radii[j] * _uniform_in_ball(rng, n_each, d)
                mult = np.sum(np.linalg.norm(pts[:, None] - near.centers[None], axis=2)
                              <= near.radii[None], axis=1)
                g = (np.linalg.norm(pts - x, axis=1) < R) / np.maximum(mult, 1)
                total += vol_j * g.mean()
                var += vol_j**2 * g.var() / n_each
    if membership is not None:
        pts = x + R * _uniform_in_ball(rng, n_samples, d)
        extra = np.asarray(membership(pts), dtype=bool)
        if len(E):
            extra &= ~E.contains(pts)
        f = extra.mean()
        total += vol_B * f
        var += vol_B**2 * f * (1 - f) / n_samples
    return total / vol_B, math.sqrt(var) / vol_B


def _uniform_in_ball(rng, n, d):
    dirs = sphere_points(rng, n, d)
    return dirs * rng.uniform(size=(n, 1)) ** (1.0 / d)
