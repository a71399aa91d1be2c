"""Analytic benchmark systems: dynamics, Jacobians, costs, obstacles.

All dynamics and Jacobians are written against the diffkit op set, so the
same code evaluates eagerly on plain arrays (dataset generation, test-time
rollouts) and participates in a tape during training with an analytic
transition.  Everything works on batches: x is (B, d), u is (B, m).

Registered systems: dubins, cartpole, acrobot, quadrotor, lq1d.
Conventions:
  cartpole  x = [p, p_dot, phi, phi_dot], phi = 0 upright, phi = pi hanging
  acrobot   x = [q1, q2, q1_dot, q2_dot], q1 = 0 hanging, q1 = pi upright,
            torque at the elbow (second joint)
  quadrotor x = [p(3), rpy(3), v(3), omega(3)] with ZYX Euler angles
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import diffkit as dk
from .diffkit import Tensor


class DynamicsError(Exception):
    """Checked-mode violation (input outside its box, singular attitude)."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with per-coordinate [lo, hi]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError("box needs elementwise lo < hi")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def contains(self, x: np.ndarray, atol: float = 1e-9) -> bool:
        return bool(np.all(x >= self.lo - atol) and np.all(x <= self.hi + atol))


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray  # planar position
    radius: float


@dataclass(frozen=True)
class SystemSpec:
    """One benchmark system: dimensions, boxes, dynamics, Jacobians, cost data."""

    name: str
    d: int
    m: int
    state_box: Box
    action_box: Box
    f: Callable[[Tensor, Tensor], Tensor]
    jac: Callable[[Tensor, Tensor], tuple[Tensor, Tensor]]
    x_star: np.ndarray
    u_star: np.ndarray
    P: np.ndarray
    R: np.ndarray
    t0: float = 0.0
    tf: float = 6.0
    Q: np.ndarray | None = None  # optional state running-cost weight
    obstacles: tuple[Obstacle, ...] = ()
    c_obs: float = 100.0
    obs_margin: float = 0.1
    position_slice: slice | None = None  # planar/3D position coords, if meaningful
    params: dict = field(default_factory=dict)

    def validate(self, x: np.ndarray, u: np.ndarray) -> None:
        """Checked-mode input validation; raises DynamicsError on violation."""
        if not self.action_box.contains(u):
            raise DynamicsError(f"{self.name}: action outside its box")
        if not self.state_box.contains(x):
            raise DynamicsError(f"{self.name}: state outside its box")
        if self.name == "quadrotor":
            pitch = np.asarray(x)[..., 4]
            if np.any(np.abs(pitch) > 1.4):
                raise DynamicsError("quadrotor: pitch near the Euler singularity")

    # -- cost pieces (all taped-compatible) ---------------------------------

    def running_cost(self, x, u, t=None) -> Tensor:
        """L(x, u, t) = (u - u*)' R (u - u*) [+ (x - x*)' Q (x - x*)] + obstacle penalty."""
        du = dk._lift(u) - self.u_star
        val = dk.quadform(du, self.R)
        if self.Q is not None:
            dx = dk._lift(x) - self.x_star
            val = val + dk.quadform(dx, self.Q)
        if self.obstacles:
            val = val + obstacle_penalty(
                x, self.obstacles, c_obs=self.c_obs, margin=self.obs_margin
            )
        return val

    def running_cost_grad_u(self, x, u, t=None) -> Tensor:
        """d L / d u = 2 R (u - u*); obstacles do not depend on u."""
        du = dk._lift(u) - self.u_star
        return dk.matmul(du, 2.0 * self.R)

    def terminal_cost(self, x) -> Tensor:
        """G(x) = (x - x*)' P (x - x*)."""
        dx = dk._lift(x) - self.x_star
        return dk.quadform(dx, self.P)


def obstacle_penalty(x, obstacles, c_obs: float = 100.0, margin: float = 0.1) -> Tensor:
    """Soft obstacle cost: sum over obstacles of c * relu(r_safe - dist)^2.

    Quadratic in the clearance violation, hence C^1; exactly zero at planar
    distance >= radius + margin.
    """
    x = dk._lift(x)
    pos = x[:, 0:2]
    total = None
    for obs in obstacles:
        delta = pos - np.asarray(obs.center, dtype=np.float64)
        dist = dk.l2norm(delta, axis=1)
        gap = dk.relu((obs.radius + margin) - dist)
        term = c_obs * dk.square(gap)
        total = term if total is None else total + term
    if total is None:
        return dk.tensor(np.zeros(x.shape[0]), checked=False)
    return total


# ---------------------------------------------------------------------------
# Assembly helper for batched Jacobians
# ---------------------------------------------------------------------------


def _col(e, batch: int) -> Tensor:
    if isinstance(e, Tensor):
        return e if e.ndim == 2 else dk.reshape(e, (batch, 1))
    return dk.tensor(np.full((batch, 1), float(e)), checked=False)


def _bmat(rows, batch: int) -> Tensor:
    """Stack a list of rows of per-sample scalars into a (B, r, c) tensor."""
    built = []
    for r in rows:
        cols = [_col(e, batch) for e in r]
        built.append(dk.reshape(dk.concat(cols, axis=1), (batch, 1, len(cols))))
    return dk.concat(built, axis=1)


def _vec(cols, batch: int) -> Tensor:
    """Concatenate per-sample scalars into a (B, len(cols)) tensor."""
    return dk.concat([_col(e, batch) for e in cols], axis=1)


# ---------------------------------------------------------------------------
# Dubins car with varying speed
# ---------------------------------------------------------------------------


def _make_dubins(p: dict) -> SystemSpec:
    r = p["turn_radius"]
    v_max = p["v_max"]

    def f(x, u):
        x, u = dk._lift(x), dk._lift(u)
        psi = x[:, 2:3]
        v = u[:, 0:1]
        alpha = u[:, 1:2]
        s, c = dk.sincos(psi)
        return dk.concat([v * c, v * s, alpha * v * (1.0 / r)], axis=1)

    def jac(x, u):
        x, u = dk._lift(x), dk._lift(u)
        b = x.shape[0]
        psi = x[:, 2]
        v = u[:, 0]
        alpha = u[:, 1]
        s, c = dk.sincos(psi)
        jx = _bmat(
            [[0.0, 0.0, -v * s], [0.0, 0.0, v * c], [0.0, 0.0, 0.0]], b
        )
        ju = _bmat(
            [[c, 0.0], [s, 0.0], [alpha * (1.0 / r), v * (1.0 / r)]], b
        )
        return jx, ju

    return SystemSpec(
        name="dubins",
        d=3,
        m=2,
        state_box=Box(np.array([-5.0, -5.0, -np.pi]), np.array([5.0, 5.0, np.pi])),
        action_box=Box(np.array([0.0, -1.0]), np.array([v_max, 1.0])),
        f=f,
        jac=jac,
        x_star=np.zeros(3),
        u_star=np.zeros(2),
        P=np.eye(3),
        R=0.01 * np.eye(2),
        t0=0.0,
        tf=p["tf"],
        position_slice=slice(0, 2),
        params=p,
    )


# ---------------------------------------------------------------------------
# Cartpole (frictionless; phi measured from upright)
# ---------------------------------------------------------------------------


def _make_cartpole(p: dict) -> SystemSpec:
    mc, mp, lp, g = p["cart_mass"], p["pole_mass"], p["pole_half_length"], p["gravity"]
    mt = mc + mp
    k = mp * lp

    def _core(x, u):
        phi = x[:, 2]
        phid = x[:, 3]
        force = u[:, 0]
        s, c = dk.sincos(phi)
        t1 = (force + k * dk.square(phid) * s) * (1.0 / mt)
        den = lp * (4.0 / 3.0 - (mp / mt) * dk.square(c))
        phidd = (g * s - c * t1) / den
        pdd = t1 - (k / mt) * phidd * c
        return phi, phid, force, s, c, t1, den, phidd, pdd

    def f(x, u):
        x, u = dk._lift(x), dk._lift(u)
        b = x.shape[0]
        _, phid, _, _, _, _, _, phidd, pdd = _core(x, u)
        return _vec([x[:, 1], pdd, phid, phidd], b)

    def jac(x, u):
        x, u = dk._lift(x), dk._lift(u)
        b = x.shape[0]
        phi, phid, force, s, c, t1, den, phidd, pdd = _core(x, u)
        dt1_dphi = k * dk.square(phid) * c * (1.0 / mt)
        dt1_dphid = 2.0 * k * phid * s * (1.0 / mt)
        dden_dphi = 2.0 * lp * (mp / mt) * c * s
        num = g * s - c * t1
        dnum_dphi = g * c + s * t1 - c * dt1_dphi
        dphidd_dphi = (dnum_dphi * den - num * dden_dphi) / dk.square(den)
        dphidd_dphid = (-c * dt1_dphid) / den
        dphidd_df = (-c * (1.0 / mt)) / den
        dpdd_dphi = dt1_dphi - (k / mt) * (dphidd_dphi * c - phidd * s)
        dpdd_dphid = dt1_dphid - (k / mt) * c * dphidd_dphid
        dpdd_df = (1.0 / mt) - (k / mt) * c * dphidd_df
        jx = _bmat(
            [
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, dpdd_dphi, dpdd_dphid],
                [0.0, 0.0, 0.0, 1.0],
                [0.0, 0.0, dphidd_dphi, dphidd_dphid],
            ],
            b,
        )
        ju = _bmat([[0.0], [dpdd_df], [0.0], [dphidd_df]], b)
        return jx, ju

    return SystemSpec(
        name="cartpole",
        d=4,
        m=1,
        state_box=Box(
            np.array([-3.0, -6.0, -1.5 * np.pi, -10.0]),
            np.array([3.0, 6.0, 1.5 * np.pi, 10.0]),
        ),
        action_box=Box(np.array([-p["force_max"]]), np.array([p["force_max"]])),
        f=f,
        jac=jac,
        x_star=np.zeros(4),
        u_star=np.zeros(1),
        P=np.eye(4),
        R=0.01 * np.eye(1),
        t0=0.0,
        tf=p["tf"],
        params=p,
    )


# ---------------------------------------------------------------------------
# Acrobot (torque at the elbow; q1 = 0 hanging)
# ---------------------------------------------------------------------------


def _make_acrobot(p: dict) -> SystemSpec:
    m1, m2 = p["m1"], p["m2"]
    l1, lc1, lc2 = p["l1"], p["lc1"], p["lc2"]
    i1, i2, g = p["I1"], p["I2"], p["gravity"]
    a = m2 * l1 * lc2
    c1_const = m1 * lc1**2 + m2 * (l1**2 + lc2**2) + i1 + i2
    c2_const = m2 * lc2**2 + i2
    g1 = (m1 * lc1 + m2 * l1) * g
    g2 = m2 * lc2 * g

    def _core(x, u):
        q1, q2 = x[:, 0], x[:, 1]
        qd1, qd2 = x[:, 2], x[:, 3]
        tau = u[:, 0]
        s1 = dk.sin(q1)
        s2, c2 = dk.sincos(q2)
        s12 = dk.sin(q1 + q2)
        d1 = c1_const + 2.0 * a * c2
        d2 = c2_const + a * c2
        phi2 = g2 * s12
        phi1 = -a * dk.square(qd2) * s2 - 2.0 * a * qd1 * qd2 * s2 + g1 * s1 + phi2
        den2 = c2_const - dk.square(d2) / d1
        n2 = tau + (d2 / d1) * phi1 - a * dk.square(qd1) * s2 - phi2
        qdd2 = n2 / den2
        qdd1 = -(d2 * qdd2 + phi1) / d1
        return q1, q2, qd1, qd2, tau, s1, s2, c2, s12, d1, d2, phi1, phi2, den2, n2, qdd1, qdd2

    def f(x, u):
        x, u = dk._lift(x), dk._lift(u)
        b = x.shape[0]
        core = _core(x, u)
        qd1, qd2, qdd1, qdd2 = core[2], core[3], core[15], core[16]
        return _vec([qd1, qd2, qdd1, qdd2], b)

    def jac(x, u):
        x, u = dk._lift(x), dk._lift(u)
        b = x.shape[0]
        (q1, q2, qd1, qd2, tau, s1, s2, c2, s12, d1, d2,
         phi1, phi2, den2, n2, qdd1, qdd2) = _core(x, u)
        c1 = dk.cos(q1)
        c12 = dk.cos(q1 + q2)

        # q1 column
        dphi2_q1 = g2 * c12
        dphi1_q1 = g1 * c1 + dphi2_q1
        dn2_q1 = (d2 / d1) * dphi1_q1 - dphi2_q1
        dqdd2_q1 = dn2_q1 / den2
        dqdd1_q1 = -(d2 * dqdd2_q1 + dphi1_q1) / d1

        # q2 column
        dd1 = -2.0 * a * s2
        dd2 = -a * s2
        dphi2_q2 = g2 * c12
        dphi1_q2 = -a * dk.square(qd2) * c2 - 2.0 * a * qd1 * qd2 * c2 + dphi2_q2
        dratio = (dd2 * d1 - d2 * dd1) / dk.square(d1)
        dden2 = -(2.0 * d2 * dd2 * d1 - dk.square(d2) * dd1) / dk.square(d1)
        dn2_q2 = dratio * phi1 + (d2 / d1) * dphi1_q2 - a * dk.square(qd1) * c2 - dphi2_q2
        dqdd2_q2 = (dn2_q2 * den2 - n2 * dden2) / dk.square(den2)
        dqdd1_q2 = -(
            (dd2 * qdd2 + d2 * dqdd2_q2 + dphi1_q2) * d1 - (d2 * qdd2 + phi1) * dd1
        ) / dk.square(d1)

        # velocity columns
        dphi1_qd1 = -2.0 * a * qd2 * s2
        dn2_qd1 = (d2 / d1) * dphi1_qd1 - 2.0 * a * qd1 * s2
        dqdd2_qd1 = dn2_qd1 / den2
        dqdd1_qd1 = -(d2 * dqdd2_qd1 + dphi1_qd1) / d1

        dphi1_qd2 = -2.0 * a * (qd1 + qd2) * s2
        dn2_qd2 = (d2 / d1) * dphi1_qd2
        dqdd2_qd2 = dn2_qd2 / den2
        dqdd1_qd2 = -(d2 * dqdd2_qd2 + dphi1_qd2) / d1

        # torque column
        dqdd2_tau = 1.0 / den2
        dqdd1_tau = -d2 / (d1 * den2)

        jx = _bmat(
            [
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [dqdd1_q1, dqdd1_q2, dqdd1_qd1, dqdd1_qd2],
                [dqdd2_q1, dqdd2_q2, dqdd2_qd1, dqdd2_qd2],
            ],
            b,
        )
        ju = _bmat([[0.0], [0.0], [dqdd1_tau], [dqdd2_tau]], b)
        return jx, ju

    return SystemSpec(
        name="acrobot",
        d=4,
        m=1,
        state_box=Box(
            np.array([-1.5 * np.pi, -1.5 * np.pi, -12.0, -12.0]),
            np.array([1.5 * np.pi, 1.5 * np.pi, 12.0, 12.0]),
        ),
        action_box=Box(np.array([-p["torque_max"]]), np.array([p["torque_max"]])),
        f=f,
        jac=jac,
        x_star=np.array([np.pi, 0.0, 0.0, 0.0]),
        u_star=np.zeros(1),
        P=np.eye(4),
        R=0.01 * np.eye(1),
        t0=0.0,
        tf=p["tf"],
        params=p,
    )


# ---------------------------------------------------------------------------
# Quadrotor (12 states, ZYX Euler angles, diagonal inertia)
# ---------------------------------------------------------------------------


def _make_quadrotor(p: dict) -> SystemSpec:
    mass, g = p["mass"], p["gravity"]
    j1, j2, j3 = p["inertia"]

    def _attitude(x):
        roll, pitch, yaw = x[:, 3], x[:, 4], x[:, 5]
        sr, cr = dk.sincos(roll)
        sp, cp = dk.sincos(pitch)
        sy, cy = dk.sincos(yaw)
        return sr, cr, sp, cp, sy, cy

    def _thrust_axis(sr, cr, sp, cp, sy, cy):
        # third column of Rz(yaw) Ry(pitch) Rx(roll)
        r3x = cy * sp * cr + sy * sr
        r3y = sy * sp * cr - cy * sr
        r3z = cp * cr
        return r3x, r3y, r3z

    def f(x, u):
        x, u = dk._lift(x), dk._lift(u)
        b = x.shape[0]
        sr, cr, sp, cp, sy, cy = _attitude(x)
        w1, w2, w3 = x[:, 9], x[:, 10], x[:, 11]
        thrust = u[:, 0]
        t1, t2, t3 = u[:, 1], u[:, 2], u[:, 3]

        r3x, r3y, r3z = _thrust_axis(sr, cr, sp, cp, sy, cy)
        acc = thrust * (1.0 / mass)
        tp = sp / cp
        roll_rate = w1 + sr * tp * w2 + cr * tp * w3
        pitch_rate = cr * w2 - sr * w3
        yaw_rate = (sr * w2 + cr * w3) / cp
        wd1 = (t1 - (j3 - j2) * w2 * w3) * (1.0 / j1)
        wd2 = (t2 - (j1 - j3) * w1 * w3) * (1.0 / j2)
        wd3 = (t3 - (j2 - j1) * w1 * w2) * (1.0 / j3)
        return _vec(
            [
                x[:, 6], x[:, 7], x[:, 8],
                roll_rate, pitch_rate, yaw_rate,
                acc * r3x, acc * r3y, acc * r3z - g,
                wd1, wd2, wd3,
            ],
            b,
        )

    def jac(x, u):
        x, u = dk._lift(x), dk._lift(u)
        b = x.shape[0]
        sr, cr, sp, cp, sy, cy = _attitude(x)
        w1, w2, w3 = x[:, 9], x[:, 10], x[:, 11]
        thrust = u[:, 0]
        acc = thrust * (1.0 / mass)
        tp = sp / cp
        sec2 = 1.0 / dk.square(cp)

        r3x, r3y, r3z = _thrust_axis(sr, cr, sp, cp, sy, cy)
        # partials of the thrust axis w.r.t. roll, pitch, yaw
        dr3x_r = -cy * sp * sr + sy * cr
        dr3y_r = -sy * sp * sr - cy * cr
        dr3z_r = -cp * sr
        dr3x_p = cy * cp * cr
        dr3y_p = sy * cp * cr
        dr3z_p = -sp * cr
        dr3x_y = -sy * sp * cr + cy * sr
        dr3y_y = cy * sp * cr + sy * sr

        # Euler kinematics partials
        droll_r = cr * tp * w2 - sr * tp * w3
        droll_p = (sr * w2 + cr * w3) * sec2
        dpitch_r = -sr * w2 - cr * w3
        dyaw_r = (cr * w2 - sr * w3) / cp
        dyaw_p = (sr * w2 + cr * w3) * tp / cp

        z = 0.0
        rows = [
            [z, z, z, z, z, z, 1.0, z, z, z, z, z],
            [z, z, z, z, z, z, z, 1.0, z, z, z, z],
            [z, z, z, z, z, z, z, z, 1.0, z, z, z],
            [z, z, z, droll_r, droll_p, z, z, z, z, 1.0, sr * tp, cr * tp],
            [z, z, z, dpitch_r, z, z, z, z, z, z, cr, -sr],
            [z, z, z, dyaw_r, dyaw_p, z, z, z, z, z, sr / cp, cr / cp],
            [z, z, z, acc * dr3x_r, acc * dr3x_p, acc * dr3x_y, z, z, z, z, z, z],
            [z, z, z, acc * dr3y_r, acc * dr3y_p, acc * dr3y_y, z, z, z, z, z, z],
            [z, z, z, acc * dr3z_r, acc * dr3z_p, z, z, z, z, z, z, z],
            [z, z, z, z, z, z, z, z, z, z, -(j3 - j2) * w3 / j1, -(j3 - j2) * w2 / j1],
            [z, z, z, z, z, z, z, z, z, -(j1 - j3) * w3 / j2, z, -(j1 - j3) * w1 / j2],
            [z, z, z, z, z, z, z, z, z, -(j2 - j1) * w2 / j3, -(j2 - j1) * w1 / j3, z],
        ]
        jx = _bmat(rows, b)
        ju = _bmat(
            [
                [z, z, z, z], [z, z, z, z], [z, z, z, z],
                [z, z, z, z], [z, z, z, z], [z, z, z, z],
                [r3x * (1.0 / mass), z, z, z],
                [r3y * (1.0 / mass), z, z, z],
                [r3z * (1.0 / mass), z, z, z],
                [z, 1.0 / j1, z, z],
                [z, z, 1.0 / j2, z],
                [z, z, z, 1.0 / j3],
            ],
            b,
        )
        return jx, ju

    t_max = 2.0 * mass * g
    lo = np.array([-5.0] * 3 + [-np.pi / 3, -np.pi / 3, -np.pi] + [-5.0] * 3 + [-5.0] * 3)
    hi = np.array([5.0] * 3 + [np.pi / 3, np.pi / 3, np.pi] + [5.0] * 3 + [5.0] * 3)
    x_star = np.zeros(12)
    x_star[:3] = p["goal_position"]
    return SystemSpec(
        name="quadrotor",
        d=12,
        m=4,
        state_box=Box(lo, hi),
        action_box=Box(
            np.array([0.0, -p["torque_max"], -p["torque_max"], -p["torque_max"]]),
            np.array([t_max, p["torque_max"], p["torque_max"], p["torque_max"]]),
        ),
        f=f,
        jac=jac,
        x_star=x_star,
        u_star=np.array([mass * g, 0.0, 0.0, 0.0]),
        P=np.eye(12),
        R=0.01 * np.eye(4),
        t0=0.0,
        tf=p["tf"],
        position_slice=slice(0, 3),
        params=p,
    )


# ---------------------------------------------------------------------------
# Scalar linear-quadratic sanity system: xdot = u, L = u^2 + x^2, G = 0
# ---------------------------------------------------------------------------


def _make_lq1d(p: dict) -> SystemSpec:
    def f(x, u):
        return dk._lift(u)[:, 0:1]

    def jac(x, u):
        x = dk._lift(x)
        b = x.shape[0]
        jx = _bmat([[0.0]], b)
        ju = _bmat([[1.0]], b)
        return jx, ju

    return SystemSpec(
        name="lq1d",
        d=1,
        m=1,
        state_box=Box(np.array([-2.0]), np.array([2.0])),
        action_box=Box(np.array([-p["u_max"]]), np.array([p["u_max"]])),
        f=f,
        jac=jac,
        x_star=np.zeros(1),
        u_star=np.zeros(1),
        P=np.zeros((1, 1)),
        R=np.eye(1),
        Q=np.eye(1),
        t0=0.0,
        tf=p["tf"],
        params=p,
    )


# ---------------------------------------------------------------------------
# Registry and datasets
# ---------------------------------------------------------------------------

_DEFAULT_PARAMS: dict[str, dict] = {
    "dubins": {"v_max": 1.0, "turn_radius": 1.0, "tf": 6.0},
    "cartpole": {
        "cart_mass": 1.0,
        "pole_mass": 0.1,
        "pole_half_length": 0.5,
        "gravity": 9.8,
        "force_max": 10.0,
        "tf": 3.0,
    },
    "acrobot": {
        "m1": 1.0,
        "m2": 1.0,
        "l1": 1.0,
        "l2": 1.0,
        "lc1": 0.5,
        "lc2": 0.5,
        "I1": 1.0,
        "I2": 1.0,
        "gravity": 9.8,
        "torque_max": 4.0,
        "tf": 5.0,
    },
    "quadrotor": {
        "mass": 1.0,
        "inertia": (0.01, 0.01, 0.02),
        "gravity": 9.81,
        "torque_max": 1.0,
        "goal_position": (3.0, 3.0, 3.0),
        "tf": 4.0,
    },
    "lq1d": {"u_max": 3.0, "tf": 5.0},
}

_MAKERS = {
    "dubins": _make_dubins,
    "cartpole": _make_cartpole,
    "acrobot": _make_acrobot,
    "quadrotor": _make_quadrotor,
    "lq1d": _make_lq1d,
}


def system_names() -> tuple[str, ...]:
    return tuple(sorted(_MAKERS))


def make_system(name: str, overrides: dict | None = None) -> SystemSpec:
    """Build a registered system, optionally overriding physical parameters."""
    if name not in _MAKERS:
        raise KeyError(f"unknown system '{name}'; known: {', '.join(system_names())}")
    params = dict(_DEFAULT_PARAMS[name])
    extra = dict(overrides or {})
    spec_overrides = {
        k: extra.pop(k) for k in ("obstacles", "P", "R", "Q", "x_star", "u_star", "tf")
        if k in extra
    }
    unknown = set(extra) - set(params)
    if unknown:
        raise KeyError(f"unknown parameter(s) for {name}: {sorted(unknown)}")
    params.update(extra)
    if "tf" in spec_overrides:
        params["tf"] = float(spec_overrides.pop("tf"))
    sys_spec = _MAKERS[name](params)
    if spec_overrides:
        fields = {}
        if "obstacles" in spec_overrides:
            fields["obstacles"] = tuple(
                Obstacle(center=np.asarray(o[0], dtype=np.float64), radius=float(o[1]))
                for o in spec_overrides["obstacles"]
            )
        for key in ("P", "R", "Q"):
            if key in spec_overrides:
                fields[key] = np.asarray(spec_overrides[key], dtype=np.float64)
        for key in ("x_star", "u_star"):
            if key in spec_overrides:
                fields[key] = np.asarray(spec_overrides[key], dtype=np.float64)
        sys_spec = replace(sys_spec, **fields)
    return sys_spec


@dataclass(frozen=True)
class Dataset:
    """Sampled transitions with analytic value and Jacobian targets."""

    x: np.ndarray  # (N, d)
    u: np.ndarray  # (N, m)
    xdot: np.ndarray  # (N, d)
    jac_x: np.ndarray  # (N, d, d)
    jac_u: np.ndarray  # (N, d, m)

    def __len__(self) -> int:
        return self.x.shape[0]


def sample_dataset(spec: SystemSpec, n: int, seed: int) -> Dataset:
    """N i.i.d. uniform draws over state_box x action_box with analytic targets."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(seed)
    x = spec.state_box.sample(rng, n)
    u = spec.action_box.sample(rng, n)
    spec.validate(x, u)
    xdot = spec.f(x, u).data
    jx, ju = spec.jac(x, u)
    return Dataset(x=x, u=u, xdot=xdot, jac_x=jx.data, jac_u=ju.data)
