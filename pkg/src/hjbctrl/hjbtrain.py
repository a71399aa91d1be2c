"""Joint controller / value-function training from the HJB equation.

Four losses over differentiable rollouts:

  cost    mean of the running-cost integral plus the terminal cost
  hjb     mean |dV/dt + H| over every grid point of every trajectory
  final   mean |V(x_f, t_f) - G(x_f)| (PDE boundary condition)
  hamil   mean ||d H / d u||_2 (stationarity of the Hamiltonian in u)

with H = L(x, u, t) + grad_x V(x, t) . f(x, u).  One Adam instance updates
the controller and value parameters jointly; the transition (analytic or a
frozen learned checkpoint) is never updated here.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffkit as dk
from . import netzoo, optim
from .diffkit import Tensor
from .dynzoo import SystemSpec
from .rollout import AnalyticTransition, LearnedTransition, TrajectoryBatch, rollout
from .sysid import TrainingDiverged


# ---------------------------------------------------------------------------
# Initial-state distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialStateDist:
    """Box-uniform or Gaussian sampler for rollout starts."""

    kind: str  # "box" | "gaussian"
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None  # per-coordinate; 0 pins a coordinate

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "box":
            return rng.uniform(self.lo, self.hi, size=(n, self.lo.shape[0]))
        if self.kind == "gaussian":
            return self.mean + self.std * rng.standard_normal((n, self.mean.shape[0]))
        raise ValueError(f"unknown initial-state distribution '{self.kind}'")


def default_rho(spec: SystemSpec) -> InitialStateDist:
    """Per-system start distributions used throughout the experiments."""
    if spec.name == "dubins":
        return InitialStateDist(
            kind="box",
            lo=np.array([-3.5, -3.0, -np.pi]),
            hi=np.array([-2.5, 3.0, np.pi]),
        )
    if spec.name == "quadrotor":
        std = np.zeros(12)
        std[:3] = 1.0  # positions ~ N(0, I); attitude and rates start at rest
        return InitialStateDist(kind="gaussian", mean=np.zeros(12), std=std)
    if spec.name == "cartpole":
        center = np.array([0.0, 0.0, np.pi, 0.0])  # hanging
        half = np.array([0.1, 0.1, 0.1, 0.1])
        return InitialStateDist(kind="box", lo=center - half, hi=center + half)
    if spec.name == "acrobot":
        half = np.full(4, 0.1)
        return InitialStateDist(kind="box", lo=-half, hi=half)
    if spec.name == "lq1d":
        return InitialStateDist(kind="box", lo=np.array([-1.0]), hi=np.array([1.0]))
    # fall back to the middle half of the state box
    mid = 0.5 * (spec.state_box.lo + spec.state_box.hi)
    half = 0.25 * (spec.state_box.hi - spec.state_box.lo)
    return InitialStateDist(kind="box", lo=mid - half, hi=mid + half)


# ---------------------------------------------------------------------------
# Value-function adapter and the Hamiltonian
# ---------------------------------------------------------------------------


class MlpValue:
    """V(x, t) from an MLP over (x, t_norm) with exact taped derivatives.

    Physical time is normalized to [0, 1] over the horizon before entering
    the network; dV/dt is rescaled back accordingly.
    """

    def __init__(self, net: netzoo.Mlp, t0: float, tf: float, params=None):
        self.net = net
        self.t0 = t0
        self.tf = tf
        self.params = params

    def __call__(self, x, t) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (V, dV/dt, grad_x V) with shapes (B,), (B,), (B, d)."""
        x = dk._lift(x)
        b, d = x.shape
        span = self.tf - self.t0
        tn = (np.asarray(t, dtype=np.float64) - self.t0) / span
        if tn.ndim == 0:
            tn = np.full((b, 1), float(tn))
        elif tn.ndim == 1:
            tn = tn[:, None]
        z = dk.concat([x, dk.tensor(tn, checked=False)], axis=1)
        y, jac = netzoo.forward_with_jacobian(self.net, z, params=self.params)
        value = dk.reshape(y, (b,))
        grad_x = dk.reshape(jac[:, :, :d], (b, d))
        dvdt = dk.reshape(jac[:, :, d:], (b,)) * (1.0 / span)
        return value, dvdt, grad_x


@dataclass
class HamiltonianEval:
    """Batched Hamiltonian pieces at given (x, u, t) points."""

    H: Tensor  # (B,)
    dV_dt: Tensor  # (B,)
    grad_x_V: Tensor  # (B, d)
    grad_u_H: Tensor  # (B, m)


def hamiltonian(
    value: Callable,
    transition,
    spec: SystemSpec,
    x,
    u,
    t,
    hamil_through_value: bool = True,
) -> HamiltonianEval:
    """H = L(x, u, t) + grad_x V(x, t) . f(x, u), with its u-gradient.

    grad_u H = dL/du + (df/du)^T grad_x V, computed as a vjp so learned
    transitions never materialize their full Jacobian.  When
    ``hamil_through_value`` is false the costate entering grad_u H is
    detached, so the hamiltonian loss regularizes only the controller.
    """
    x, u = dk._lift(x), dk._lift(u)
    v_val, dvdt, grad_x = value(x, t)
    f_val = transition(x, u)
    run = spec.running_cost(x, u, t)
    ham = run + dk.sum_(grad_x * f_val, axis=1)
    costate = grad_x if hamil_through_value else dk.detach(grad_x)
    grad_u = spec.running_cost_grad_u(x, u, t) + transition.costate_vjp_u(x, u, costate)
    if not np.all(np.isfinite(grad_x.data)):
        raise dk.NumericError("non-finite value-function gradient in hamiltonian")
    return HamiltonianEval(H=ham, dV_dt=dvdt, grad_x_V=grad_x, grad_u_H=grad_u)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def loss_cost(traj: TrajectoryBatch, spec: SystemSpec) -> Tensor:
    """Mean over the batch of the running-cost integral plus G(x_f)."""
    return dk.mean_(traj.running_cost_integral + spec.terminal_cost(traj.states[-1]))


def _grid_points(traj: TrajectoryBatch) -> tuple[Tensor, Tensor, np.ndarray]:
    """Flatten all K+1 grid points into one batch (states, controls, times)."""
    xs = dk.concat(traj.states, axis=0)
    controls = list(traj.controls)
    if traj.terminal_control is not None:
        controls = controls + [traj.terminal_control]
    else:
        controls = controls + [traj.controls[-1]]  # ZOH fallback
    us = dk.concat(controls, axis=0)
    b = traj.states[0].shape[0]
    ts = np.repeat(traj.times, b)
    return xs, us, ts


def loss_hjb(value, traj: TrajectoryBatch, transition, spec: SystemSpec) -> Tensor:
    """Mean |dV/dt + H| over batch and all K+1 grid points."""
    xs, us, ts = _grid_points(traj)
    ev = hamiltonian(value, transition, spec, xs, us, ts)
    return dk.mean_(dk.absval(ev.dV_dt + ev.H))


def loss_final(value, traj: TrajectoryBatch, spec: SystemSpec) -> Tensor:
    """Mean |V(x_f, t_f) - G(x_f)| (HJB boundary condition)."""
    x_f = traj.states[-1]
    v_f, _, _ = value(x_f, traj.times[-1])
    return dk.mean_(dk.absval(v_f - spec.terminal_cost(x_f)))


def loss_hamil(value, traj: TrajectoryBatch, transition, spec: SystemSpec,
               hamil_through_value: bool = True) -> Tensor:
    """Mean ||grad_u H||_2 over batch and grid (PMP stationarity pressure)."""
    xs, us, ts = _grid_points(traj)
    ev = hamiltonian(value, transition, spec, xs, us, ts,
                     hamil_through_value=hamil_through_value)
    return dk.mean_(dk.l2norm(ev.grad_u_H, axis=1))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HjbConfig:
    alpha_cost: float = 1.0
    alpha_hjb: float = 1.0
    alpha_final: float = 0.01
    alpha_hamil: float = 0.01
    epochs: int = 2_000
    batch: int = 64
    K: int = 50
    lr: float = 0.01
    lr_final: float = 1e-4
    transition: str = "analytic"  # "analytic" or a checkpoint path
    seed: int = 0
    controller_hidden: tuple[int, ...] = (64, 64)
    value_hidden: tuple[int, ...] = (64, 64, 64)
    hamil_through_value: bool = True
    resample_each_epoch: bool = True
    rho: InitialStateDist | None = None  # None: the system default

    def __post_init__(self):
        for name in ("alpha_cost", "alpha_hjb", "alpha_final", "alpha_hamil"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def build_transition(spec: SystemSpec, source: str):
    """'analytic' or a path to a dynamics-net checkpoint."""
    if source == "analytic":
        return AnalyticTransition(spec)
    net, _meta = netzoo.load(source)
    return LearnedTransition(net, spec.d, spec.m)


def train_controller(
    spec: SystemSpec,
    cfg: HjbConfig,
    log_every: int = 0,
) -> tuple[netzoo.Mlp, netzoo.Mlp, list[dict]]:
    """Joint Adam on controller and value parameters; deterministic per seed.

    Per epoch: sample a batch of initial states from rho, roll out in
    closed loop under the configured transition, form the weighted total
    loss, and take one optimizer step.  Returns the trained controller and
    value networks plus the per-epoch log (one dict per epoch with the four
    loss components, lr, cumulative NFE and wall time).
    """
    transition = build_transition(spec, cfg.transition)
    rho = cfg.rho if cfg.rho is not None else default_rho(spec)
    controller = netzoo.controller_net(
        spec.d, spec.action_box.lo, spec.action_box.hi,
        hidden=cfg.controller_hidden, seed=cfg.seed,
    )
    value = netzoo.value_net(spec.d, hidden=cfg.value_hidden, seed=cfg.seed + 1)

    c_params = controller.params()
    v_params = value.params()
    n_c = len(c_params)
    adam = optim.Adam(c_params + v_params)
    schedule = optim.exponential_to(cfg.lr, cfg.lr_final, cfg.epochs)
    rng = np.random.default_rng(cfg.seed + 2)
    x0_fixed = rho.sample(rng, cfg.batch)

    log: list[dict] = []
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        x0 = rho.sample(rng, cfg.batch) if cfg.resample_each_epoch else x0_fixed
        lr = schedule(epoch)
        tape = dk.Tape()
        with tape:
            cl = [tape.leaf(p) for p in c_params]
            vl = [tape.leaf(p) for p in v_params]
            ctrl = lambda x: netzoo.forward(controller, x, params=cl)
            val = MlpValue(value, spec.t0, spec.tf, params=vl)
            traj = rollout(spec, transition, ctrl, x0, K=cfg.K)
            # hjb and hamil share one Hamiltonian evaluation over the grid
            xs, us, ts = _grid_points(traj)
            ev = hamiltonian(val, transition, spec, xs, us, ts,
                             hamil_through_value=cfg.hamil_through_value)
            parts = {
                "loss_cost": loss_cost(traj, spec),
                "loss_hjb": dk.mean_(dk.absval(ev.dV_dt + ev.H)),
                "loss_final": loss_final(val, traj, spec),
                "loss_hamil": dk.mean_(dk.l2norm(ev.grad_u_H, axis=1)),
            }
            total = dk.tensor(0.0)
            for name, alpha in (
                ("loss_cost", cfg.alpha_cost),
                ("loss_hjb", cfg.alpha_hjb),
                ("loss_final", cfg.alpha_final),
                ("loss_hamil", cfg.alpha_hamil),
            ):
                if alpha != 0.0:
                    total = total + alpha * parts[name]

        values = {k: v.item() for k, v in parts.items()}
        for name, v in values.items():
            if not np.isfinite(v):
                raise TrainingDiverged(f"{name} became {v} at epoch {epoch}")
        total_v = total.item()
        if not np.isfinite(total_v):
            raise TrainingDiverged(f"total loss became {total_v} at epoch {epoch}")

        grads = dk.grad(total, cl + vl)
        flat = [grads[l].data for l in cl + vl]
        new = adam.step(c_params + v_params, flat, lr)
        c_params, v_params = new[:n_c], new[n_c:]

        log.append({
            "epoch": epoch,
            "lr": lr,
            "loss_total": total_v,
            **values,
            "nfe_cumulative": transition.nfe.count,
            "wall_time_s": time.perf_counter() - t_start,
        })
        if log_every and (epoch % log_every == 0 or epoch == cfg.epochs - 1):
            print(
                f"[hjb] epoch {epoch + 1:5d}/{cfg.epochs} lr={lr:.5f} "
                f"total={total_v:.4f} cost={values['loss_cost']:.4f} "
                f"hjb={values['loss_hjb']:.4f} final={values['loss_final']:.4f} "
                f"hamil={values['loss_hamil']:.4f} nfe={transition.nfe.count}"
            )

    return controller.with_params(c_params), value.with_params(v_params), log


LOG_COLUMNS = [
    "epoch", "lr", "loss_total", "loss_cost", "loss_hjb", "loss_final",
    "loss_hamil", "nfe_cumulative", "wall_time_s",
]


def write_training_log(log: list[dict], path, header: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in log:
            w.writerow([
                row["epoch"], repr(row["lr"]), repr(row["loss_total"]),
                repr(row["loss_cost"]), repr(row["loss_hjb"]),
                repr(row["loss_final"]), repr(row["loss_hamil"]),
                row["nfe_cumulative"], f"{row['wall_time_s']:.3f}",
            ])
