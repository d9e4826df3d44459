"""Independent reference implementations used as test oracles.

Everything here is deliberately written from the documented contracts in
plain Python (dicts, lists, math module), sharing no code with the engine
kernels, so disagreements point at real defects rather than shared bugs.
"""
from __future__ import annotations

import math

V_STICK = 1e-6


def vadd(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def vsub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def vscale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


def vdot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def vnorm(a):
    return math.sqrt(vdot(a, a))


class RefSystem:
    """Plain spring-mass system advanced by semi-implicit Euler.

    masses: list of dicts {pos, vel, m, fixed, f, load, constraints}
    springs: list of dicts {i, j, rest, k, diameter, yield, actuation, alive}
    actuation: None or dict {amplitude, frequency, offset, period, quiescent}
    """

    def __init__(self, gravity=(0.0, 0.0, -9.81), drag=0.0, planes=(),
                 balls=()):
        self.masses = []
        self.springs = []
        self.gravity = gravity
        self.drag = drag
        self.planes = list(planes)   # dicts {normal, offset, k, mu_s, mu_k}
        self.balls = list(balls)     # dicts {center, radius, k}
        self.time = 0.0

    def add_mass(self, pos, m, vel=(0.0, 0.0, 0.0), fixed=False,
                 constraints=()):
        self.masses.append({"pos": tuple(pos), "vel": tuple(vel), "m": m,
                            "fixed": fixed, "f": (0.0, 0.0, 0.0),
                            "load": (0.0, 0.0, 0.0),
                            "constraints": list(constraints)})
        return len(self.masses) - 1

    def add_spring(self, i, j, rest, k, diameter=0.0, yield_stress=None,
                   actuation=None):
        self.springs.append({"i": i, "j": j, "rest": rest, "k": k,
                             "diameter": diameter, "yield": yield_stress,
                             "actuation": actuation, "alive": True})
        return len(self.springs) - 1

    def factor(self, spring):
        a = spring["actuation"]
        if a is None:
            return 1.0
        if a.get("quiescent") and self.time < a["offset"]:
            return 1.0
        t = (self.time - a["offset"]) % a["period"]
        return 1.0 + a["amplitude"] * math.sin(a["frequency"] * t)

    def spring_pass(self):
        for s in self.springs:
            if not s["alive"]:
                continue
            mi, mj = self.masses[s["i"]], self.masses[s["j"]]
            d = vsub(mj["pos"], mi["pos"])
            length = vnorm(d)
            if length == 0.0:
                continue
            target = self.factor(s) * s["rest"]
            fmag = s["k"] * (length - target)
            f = vscale(d, fmag / length)
            mi["f"] = vadd(mi["f"], f)
            mj["f"] = vsub(mj["f"], f)
            if s["yield"] is not None:
                area = math.pi * (s["diameter"] * 0.5) ** 2
                if abs(fmag) > s["yield"] * area:
                    s["alive"] = False

    def contact_force(self, m, f_applied):
        total = (0.0, 0.0, 0.0)
        for pl in self.planes:
            n = pl["normal"]
            depth = pl["offset"] - vdot(m["pos"], n)
            if depth <= 0.0:
                continue
            nmag = pl["k"] * depth
            f_now = vadd(vadd(f_applied, total), vscale(n, nmag))
            v_t = vsub(m["vel"], vscale(n, vdot(m["vel"], n)))
            f_t = vsub(f_now, vscale(n, vdot(f_now, n)))
            contrib = vscale(n, nmag)
            if vnorm(v_t) < V_STICK and vnorm(f_t) <= pl["mu_s"] * nmag:
                contrib = vsub(contrib, f_t)
            elif vnorm(v_t) >= V_STICK:
                contrib = vsub(contrib,
                               vscale(v_t, pl["mu_k"] * nmag / vnorm(v_t)))
            elif vnorm(f_t) > 0.0:
                contrib = vsub(contrib,
                               vscale(f_t, pl["mu_k"] * nmag / vnorm(f_t)))
            total = vadd(total, contrib)
        for bl in self.balls:
            d = vsub(m["pos"], bl["center"])
            dist = vnorm(d)
            depth = bl["radius"] - dist
            if depth > 0.0 and dist > 0.0:
                total = vadd(total, vscale(d, bl["k"] * depth / dist))
        return total

    def mass_pass(self, dt):
        for m in self.masses:
            if m["fixed"]:
                m["vel"] = (0.0, 0.0, 0.0)
                m["f"] = (0.0, 0.0, 0.0)
                continue
            f = vadd(m["f"], m["load"])
            f = vadd(f, vscale(self.gravity, m["m"]))
            f = vsub(f, vscale(m["vel"], self.drag))
            f = vadd(f, self.contact_force(m, f))
            a = vscale(f, 1.0 / m["m"])
            v = vadd(m["vel"], vscale(a, dt))
            for kind, vec in m["constraints"]:
                if kind == "direction":
                    v = vscale(vec, vdot(v, vec))
                else:
                    v = vsub(v, vscale(vec, vdot(v, vec)))
            m["pos"] = vadd(m["pos"], vscale(v, dt))
            m["vel"] = v
            m["f"] = (0.0, 0.0, 0.0)

    def step(self, dt):
        self.spring_pass()
        self.mass_pass(dt)
        self.time += dt


def brute_force_cell_pairs(nx, ny, nz):
    """Same-unit-cell neighbor pairs by scanning each node's 3x3x3 index
    window; independent of the builder's offset enumeration."""
    def nid(i, j, k):
        return (i * ny + j) * nz + k

    pairs = set()
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        for dk in (-1, 0, 1):
                            if di == dj == dk == 0:
                                continue
                            a, b, c = i + di, j + dj, k + dk
                            if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz:
                                p = nid(i, j, k), nid(a, b, c)
                                pairs.add((min(p), max(p)))
    return pairs


def oscillator_energy(pos, vel, m, k, rest, anchor):
    """Mechanical energy of a single mass on a spring to a fixed anchor."""
    stretch = vnorm(vsub(pos, anchor)) - rest
    return 0.5 * m * vdot(vel, vel) + 0.5 * k * stretch * stretch
