"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest

from colander_lab.capacity import equilibrium_solve
from colander_lab.cli import main
from colander_lab.construction import (build, growth_profile, heart_check, submean_check,
                                       u_eval, volume_membership, zero_radius)
from colander_lab.harmonic import (WoSConfig, decay_fit, grid_solve_2d, layer_bounds, wos_escape)
from colander_lab.mathcore import FuncSpec, Profile, oscillation_report, rho_sequence
from colander_lab.errors import PreconditionError
from colander_lab.setgen import BallUnion, Colander, make_cube_colander, recurrence_check

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


_t = 2 * np.pi * np.arange(12) / 12 + 0.1
RING12 = np.column_stack((2.0 * np.cos(_t), 1.6 * np.sin(_t)))


def annulus(d):
    return Colander(4.0, BallUnion(np.zeros((1, d)), [1.0]))


@pytest.mark.parametrize("n,d,target", [(1, 2, 0.5), (2, 3, 2 / 3)])
def test_annulus_oracle(report, monkeypatch, n, d, target):
    monkeypatch.setenv("COLANDER_THREADS", "1")
    x = np.zeros(d)
    x[0] = 2.0
    t = time.perf_counter()
    est = wos_escape(annulus(d), x, WoSConfig(delta=4e-4, n_walks=100_000, seed=2024))
    dt = time.perf_counter() - t
    err = abs(est.p_hat - target)
    report(n, err <= 3 * est.stderr and dt <= 10.0,
           f"d={d} p_hat={est.p_hat:.5f} target={target:.5f} |err|={err:.2e} "
           f"3se={3 * est.stderr:.2e} time={dt:.2f}s")


def test_cross_oracle(report):
    colanders = [
        Colander(3.0, BallUnion([[1.2, 0.4]], [0.5])),
        Colander(3.0, BallUnion([[1.0, 0.0], [-0.8, 1.0], [0.2, -1.5]], [0.3, 0.4, 0.25])),
        Colander(3.0, BallUnion(RING12, [0.15] * 12)),
    ]
    assert [len(c.obstacles) for c in colanders] == [1, 3, 12]
    lines, ok = [], True
    for i, c in enumerate(colanders):
        g = grid_solve_2d(c, h=0.01).omega_at_origin
        w = wos_escape(c, [0.0, 0.0], WoSConfig(delta=1e-4, n_walks=40_000, seed=31 + i))
        tol = max(0.01, 3 * w.stderr)
        ok &= abs(w.p_hat - g) <= tol
        lines.append(f"[{len(c.obstacles)} balls: wos={w.p_hat:.4f} grid={g:.4f} tol={tol:.3f}]")
    report(3, ok, " ".join(lines))


def test_capacity_single_ball(report):
    lines, ok = [], True
    for d, nodes in ((2, 512), (3, 2048)):
        for r in (0.5, 1.0, 2.0):
            _, res = equilibrium_solve(BallUnion(np.zeros((1, d)), [r]), nodes)
            rel = abs(res.capacity - r) / r
            good = rel <= 5e-3 and res.residual <= 1e-6 * abs(res.robin)
            ok &= good
            lines.append(f"[d={d} r={r} rel={rel:.1e} res={res.residual:.1e}]")
    report(4, ok, " ".join(lines))


def test_layered_sandwich(report):
    p = Profile(2, FuncSpec.constant(1.0), FuncSpec.constant(0.1))
    n, A = 6, 2.0
    seq = rho_sequence(p, n + 2)
    col = make_cube_colander(p, A * seq.rho[n + 1])
    b = layer_bounds(col, n, A, 16, WoSConfig(delta=1e-3, n_walks=2000, seed=5))
    inside = np.linalg.norm(col.obstacles.centers, axis=1) - col.obstacles.radii < b.outer_radius
    direct = wos_escape(Colander(b.outer_radius, col.obstacles.subset(inside)), [0.0, 0.0],
                        WoSConfig(delta=1e-3, n_walks=40_000, seed=6))
    lo = b.lower - 3 * b.lower_se
    hi = b.upper + 3 * b.upper_se
    ok = lo <= direct.p_hat <= hi and b.alpha_ok
    report(5, ok, f"lower-3s={lo:.3e} direct={direct.p_hat:.3e} upper+3s={hi:.3e} "
                  f"alpha={b.alpha:.3f} alpha_ok={b.alpha_ok}")


def test_decay_law_shape(report):
    p = Profile(2, FuncSpec.constant(1.0), FuncSpec.constant(0.1))
    seq = rho_sequence(p, 18)
    layers = [8, 10, 12, 14, 16, 18]
    radii = [float(seq.rho[k]) for k in layers]
    base, grown = [], []
    for i, rho in enumerate(radii):
        col = make_cube_colander(p, rho)
        cfg = WoSConfig(delta=1e-3, n_walks=20_000, seed=100 + i)
        base.append(wos_escape(col, [0.0, 0.0], cfg))
        big = Colander(rho, col.obstacles.scaled_radii(1.5))
        grown.append(wos_escape(big, [0.0, 0.0], cfg))
    fit = decay_fit(p, radii, base)
    mono = all(g.p_hat <= b.p_hat + 3 * math.hypot(g.stderr, b.stderr)
               for g, b in zip(grown, base))
    ok = fit.r2 >= 0.95 and fit.c_slope > 0 and mono
    report(6, ok, f"r2={fit.r2:.4f} c_slope={fit.c_slope:.4f} monotone_1.5x={mono}")


def test_rho_sandwich_and_oscillation(report):
    profiles = [
        Profile(2, FuncSpec.constant(1.0), FuncSpec.constant(0.1)),
        Profile(2, FuncSpec.gauge(1.0, (0.5,)), FuncSpec.constant(0.05)),
        Profile(3, FuncSpec.gauge(1.0, (0.3, 1.0)), FuncSpec.gauge(0.2, (0.0, -0.5))),
    ]
    lines, ok = [], True
    for p in profiles:
        seq = rho_sequence(p, 10_000)
        sand = seq.sandwich(p)
        tested = held = 0
        for n in range(1, 10_001):
            try:
                rep = oscillation_report(seq, p, n)
            except PreconditionError:
                continue
            tested += 1
            held += rep.holds
        good = sand["holds"] and tested > 0 and held == tested
        ok &= good
        lines.append(f"[d={p.d} sandwich={sand['holds']} osc={held}/{tested}]")
    report(7, ok, " ".join(lines))


def test_construction_suite(report):
    t0 = time.perf_counter()
    p = Profile(2, FuncSpec.constant(7.0), FuncSpec.constant(math.exp(-9) / 7))
    cons = build(p, {"k_max": 12})
    rng = np.random.default_rng(8)
    parts = {}

    # (a)
    u0 = u_eval(cons, np.zeros(2))
    parts["a"] = (u0 >= 1, f"u0={u0:.3f}")

    # (b) far field, shell interiors, gluing spheres
    centers = cons.lattice.centers
    balls = cons.certified_balls()
    probes = []
    while len(probes) < 70:
        r, a = rng.uniform(cons.r1, 24.0), rng.uniform(0, 2 * np.pi)
        x = r * np.array([math.cos(a), math.sin(a)])
        if np.min(np.linalg.norm(centers - x, axis=1)) > 1.5:
            probes.append(x)
    for which in rng.choice(len(centers), 65):
        s, a = rng.uniform(0.1, 0.9), rng.uniform(0, 2 * np.pi)
        probes.append(centers[which] + s * np.array([math.cos(a), math.sin(a)]))
    for which in rng.choice(len(centers), 65):
        a = rng.uniform(0, 2 * np.pi)
        probes.append(centers[which] + np.array([math.cos(a), math.sin(a)]))
    R0 = cons.shells[0].R0  # constant profile: R0 is the same on every shell
    worst = min(submean_check(cons, x, [R0 / 8, R0 / 4]).worst_margin for x in probes)
    parts["b"] = (len(probes) == 200 and worst >= -1e-6, f"worst={worst:.2e}")

    # (c) one lambda on each of 10 shells
    zr = []
    for i, shell in enumerate(cons.lattice.shells[:10]):
        lam = shell.centers[int(rng.integers(len(shell.centers)))]
        sh = cons.shells[i]
        zr.append(zero_radius(cons, lam) / (sh.R0 * sh.eps0))
    parts["c"] = (len(zr) == 10 and min(zr) >= 1, f"min r/R0eps0={min(zr):.1f}")

    # (d)
    k_hi = cons.shells[-2].radius
    r, a = rng.uniform(cons.r1, k_hi, 100), rng.uniform(0, 2 * np.pi, 100)
    xs = np.column_stack((r * np.cos(a), r * np.sin(a)))
    rec = recurrence_check(balls, p, xs, mode="volume", membership=volume_membership(cons), seed=3)
    parts["d"] = (all(x.passed for x in rec),
                  f"{sum(x.passed for x in rec)}/100 min ratio={min(x.lhs / x.rhs for x in rec):.2f}")

    # (e)
    rows = growth_profile(cons, [8.0, 11.0, 14.0, 17.0, 20.0, 22.0])
    last = [row.ratio for row in rows[-3:]]
    parts["e"] = (last[0] >= last[1] >= last[2], "ratios=" + ",".join(f"{v:.2f}" for v in last))

    # (f) shells sit at 2 rho_k with rho_k = k
    hearts = [heart_check(cons, None, 2.0 * k) for k in (5, 8)]
    parts["f"] = (all(h.holds for h in hearts),
                  " ".join(f"rho={h.rho:g}:lhs={h.lhs:.2f}<=rhs={h.rhs:.1f}" for h in hearts))

    dt = time.perf_counter() - t0
    ok = all(v[0] for v in parts.values()) and dt <= 300
    detail = " ".join(f"({k}){'ok' if v[0] else 'FAIL'} {v[1]};" for k, v in parts.items())
    report(8, ok, f"{detail} time={dt:.1f}s")


def test_determinism(report, tmp_path, monkeypatch):
    cfgs = {
        "decay-study": {"geometry": {"kind": "cube", "layers": [4, 6, 8, 10, 12]},
                        "wos": {"delta": 1e-3, "n_walks": 20_000}},
        "layers": {"geometry": {"kind": "cube", "n_layers": 3, "A": 2.0, "m_points": 8},
                   "wos": {"delta": 1e-3, "n_walks": 500}},
        "measure": {"geometry": {"kind": "cube", "rho": 9.0}, "wos": {"delta": 1e-3, "n_walks": 20_000}},
    }
    profile = {"d": 2, "R": {"family": "constant", "value": 1.0},
               "eps": {"family": "constant", "value": 0.1}}
    lines, ok = [], True
    for cmd, extra in cfgs.items():
        path = tmp_path / f"{cmd}.json"
        path.write_text(json.dumps({"command": cmd, "profile": profile, "seed": 42} | extra))
        outs = []
        for threads in ("1", "8"):
            monkeypatch.setenv("COLANDER_THREADS", threads)
            out = tmp_path / f"{cmd}-{threads}"
            assert main([cmd, "--config", str(path), "--out", str(out)]) == 0
            outs.append(out)
        csvs = sorted(f.name for f in outs[0].glob("*.csv"))
        same = bool(csvs) and all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
                                  for f in csvs)
        ok &= same
        lines.append(f"[{cmd}: {','.join(csvs)} identical={same}]")
    report(9, ok, " ".join(lines))
