"""Differentiable closed-loop simulation with fixed-step RK4.

The integrator is discretize-then-optimize: a rollout executed under an
active tape produces exact gradients of the discrete trajectory with
respect to controller (and transition) parameters.  Control is held
constant across each step (zero-order hold), and the running cost is
accumulated with a left-endpoint Riemann sum, consistent with the hold.

Transition sources are interchangeable callables (x, u) -> xdot; analytic
system dynamics and learned network dynamics run through identical code
paths.  Each source owns an NFE counter so training budgets are auditable.
"""

from __future__ import annotations

import csv
import json
import weakref
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffkit as dk
from . import netzoo
from .diffkit import NumericError, Tensor
from .dynzoo import SystemSpec


class NfeCounter:
    """Monotone counter of transition-function evaluations."""

    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0

    def add(self, n: int) -> None:
        self.count += n

    def reset(self) -> None:
        self.count = 0


# learned transitions register here so evaluation code can assert that it
# never touched a network dynamics model
_LEARNED_REGISTRY: "weakref.WeakSet[LearnedTransition]" = weakref.WeakSet()


class AnalyticTransition:
    """Ground-truth dynamics as a transition source."""

    def __init__(self, spec: SystemSpec):
        self.spec = spec
        self.nfe = NfeCounter()

    def __call__(self, x, u) -> Tensor:
        return self.spec.f(x, u)

    def jac_u(self, x, u) -> Tensor:
        return self.spec.jac(x, u)[1]

    def costate_vjp_u(self, x, u, v) -> Tensor:
        """v^T . df/du for a batch of costate rows v: (B, d) -> (B, m)."""
        ju = self.jac_u(x, u)
        b = ju.shape[0]
        row = dk.matmul(dk.reshape(dk._lift(v), (b, 1, ju.shape[1])), ju)
        return dk.reshape(row, (b, ju.shape[2]))


class LearnedTransition:
    """Network dynamics model f_theta(x, u) as a transition source."""

    def __init__(self, net: netzoo.Mlp, d: int, m: int, params=None):
        if net.in_dim != d + m or net.out_dim != d:
            raise ValueError(
                f"network dims ({net.in_dim}->{net.out_dim}) do not match system ({d + m}->{d})"
            )
        self.net = net
        self.d = d
        self.m = m
        self.params = params
        self.nfe = NfeCounter()
        _LEARNED_REGISTRY.add(self)

    def __call__(self, x, u) -> Tensor:
        z = dk.concat([dk._lift(x), dk._lift(u)], axis=1)
        return netzoo.forward(self.net, z, params=self.params)

    def jac_u(self, x, u) -> Tensor:
        z = dk.concat([dk._lift(x), dk._lift(u)], axis=1)
        jac = netzoo.input_jacobian(self.net, z, params=self.params)
        return jac[:, :, self.d:]

    def costate_vjp_u(self, x, u, v) -> Tensor:
        """v^T . df_theta/du without materializing the network Jacobian."""
        z = dk.concat([dk._lift(x), dk._lift(u)], axis=1)
        return netzoo.vjp(self.net, z, v, params=self.params)[:, self.d:]


def learned_nfe_total() -> int:
    """Total NFE across every live learned transition (eval-purity audits)."""
    return sum(tr.nfe.count for tr in _LEARNED_REGISTRY)


@dataclass
class TrajectoryBatch:
    """Batched closed-loop trajectory with its taped tensors still attached."""

    times: np.ndarray  # (K+1,)
    states: list[Tensor]  # K+1 tensors of (B, d)
    controls: list[Tensor]  # K tensors of (B, m)
    running_cost_integral: Tensor  # (B,)
    nfe: int
    # feedback control evaluated at the final state; not integrated, but the
    # HJB residual grid includes the terminal point
    terminal_control: Tensor | None = None

    @property
    def batch(self) -> int:
        return self.states[0].shape[0]

    @property
    def steps(self) -> int:
        return len(self.controls)

    @property
    def states_array(self) -> np.ndarray:
        return np.stack([s.data for s in self.states], axis=1)

    @property
    def controls_array(self) -> np.ndarray:
        return np.stack([u.data for u in self.controls], axis=1)


def rk4_step(f: Callable, x, u, h: float, nfe: NfeCounter | None = None) -> Tensor:
    """One classical RK4 step with the control held constant (ZOH)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = dk._lift(x)
    k1 = f(x, u)
    k2 = f(x + (h / 2.0) * k1, u)
    k3 = f(x + (h / 2.0) * k2, u)
    k4 = f(x + h * k3, u)
    if nfe is not None:
        nfe.add(4)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("non-finite state after rk4 step")
    return out


def rollout(
    spec: SystemSpec,
    transition: Callable,
    controller: Callable,
    x0: np.ndarray,
    K: int = 50,
    count_nfe: bool = True,
) -> TrajectoryBatch:
    """Integrate xdot = f(x, u(x)) over [t0, tf] in K uniform RK4 steps.

    The control is recomputed from the current state at every grid point
    (feedback).  Under an active tape the whole computation is recorded, so
    gradients reach the controller through every step.  ``count_nfe``
    increments the transition's counter (disabled at evaluation time).
    """
    x = dk._lift(np.asarray(x0, dtype=np.float64))
    if x.ndim == 1:
        x = dk.reshape(x, (1, x.shape[0]))
    if x.shape[1] != spec.d:
        raise ValueError(f"x0 has dim {x.shape[1]}, system has d={spec.d}")
    h = (spec.tf - spec.t0) / K
    times = spec.t0 + h * np.arange(K + 1)
    counter = getattr(transition, "nfe", None) if count_nfe else None

    states = [x]
    controls: list[Tensor] = []
    cost = dk.tensor(np.zeros(x.shape[0]), checked=False)
    nfe_before = counter.count if counter is not None else 0
    for k in range(K):
        u = controller(x)
        controls.append(u)
        cost = cost + h * spec.running_cost(x, u, times[k])
        try:
            x = rk4_step(transition, x, u, h, nfe=counter)
        except NumericError as e:
            raise NumericError(f"{e} (rollout step {k})") from None
        states.append(x)
    nfe_used = (counter.count - nfe_before) if counter is not None else 4 * K
    return TrajectoryBatch(
        times=times,
        states=states,
        controls=controls,
        running_cost_integral=cost,
        nfe=nfe_used,
        terminal_control=controller(x),
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_trajectories(
    traj: TrajectoryBatch,
    spec: SystemSpec,
    outdir,
    prefix: str = "traj",
    header: str = "",
    manifest: dict | None = None,
) -> list[Path]:
    """One CSV per batch element plus a JSON manifest.

    Columns: t, x_0..x_{d-1}, u_0..u_{m-1}, running_cost (the rate
    L(x_k, u_k, t_k); its left Riemann sum over the first K rows times h
    reproduces the integral).  The terminal row carries no control.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    xs = traj.states_array
    us = traj.controls_array
    rates = np.stack(
        [spec.running_cost(traj.states[k].data, traj.controls[k].data, traj.times[k]).data
         for k in range(traj.steps)],
        axis=1,
    )
    paths = []
    cols = ["t"] + [f"x_{i}" for i in range(spec.d)] + [f"u_{i}" for i in range(spec.m)]
    cols += ["running_cost"]
    for b in range(traj.batch):
        path = outdir / f"{prefix}_{b:04d}.csv"
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for k in range(traj.steps + 1):
                row = [repr(float(traj.times[k]))]
                row += [repr(float(v)) for v in xs[b, k]]
                if k < traj.steps:
                    row += [repr(float(v)) for v in us[b, k]]
                    row += [repr(float(rates[b, k]))]
                else:
                    row += [""] * (spec.m + 1)
                w.writerow(row)
        paths.append(path)
    man = dict(manifest or {})
    man.update({"nfe": traj.nfe, "steps": traj.steps, "batch": traj.batch,
                "system": spec.name})
    (outdir / f"{prefix}_manifest.json").write_text(json.dumps(man, indent=2))
    return paths
