"""Sobolev system identification: fit f_theta to sampled transitions.

The loss is the batch mean of the L2 norm of the value residual plus (when
gradient supervision is on) the Frobenius norm of the stacked
[d f/d x, d f/d u] Jacobian residual.  The Jacobian of the network is the
exact taped input-Jacobian, so the supervision term trains second-order
structure, not a finite-difference surrogate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import diffkit as dk
from . import netzoo, optim
from .diffkit import Tensor
from .dynzoo import Dataset, SystemSpec, sample_dataset

TEST_SEED_OFFSET = 90001  # held-out draws never share a stream with training


class TrainingDiverged(Exception):
    """Loss became non-finite; carries the epoch where it happened."""


@dataclass(frozen=True)
class SysIdConfig:
    activation: str = "sine"
    grad_supervision: bool = True
    n_train: int = 20_000
    n_test: int = 10_000
    epochs: int = 5_000  # one minibatch optimizer step per epoch
    batch: int = 256
    lr: float = 1e-3
    lr_decay: float = 0.5  # applied every 20% of the run
    hidden: tuple[int, ...] = (64, 64, 64)
    omega0: float = 8.0
    jac_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.n_train < self.batch:
            raise ValueError("dataset smaller than one batch")


@dataclass(frozen=True)
class SysIdReport:
    """Held-out error statistics of ||f_theta(x,u) - f(x,u)||_2."""

    system: str
    activation: str
    grad_supervision: bool
    mean: float
    std: float
    median: float
    iqr: float
    epochs: int
    n_train: int
    seed: int

    def row(self) -> list:
        return [
            self.system, self.activation, int(self.grad_supervision),
            repr(self.mean), repr(self.std), repr(self.median), repr(self.iqr),
            self.epochs, self.n_train, self.seed,
        ]


REPORT_COLUMNS = [
    "system", "activation", "grad_supervision", "mean", "std", "median", "iqr",
    "epochs", "N", "seed",
]


def sysid_loss(
    net: netzoo.Mlp,
    x: np.ndarray,
    u: np.ndarray,
    xdot: np.ndarray,
    jac_target: np.ndarray | None = None,
    grad_supervision: bool = False,
    params=None,
    jac_weight: float = 1.0,
) -> Tensor:
    """Training loss on one batch; taped when params are leaf tensors.

    With gradient supervision the Jacobian target must stack the state and
    action derivatives as (B, d, d+m).
    """
    z = np.concatenate([x, u], axis=1)
    if grad_supervision:
        if jac_target is None:
            raise ValueError("gradient supervision enabled but no Jacobian targets")
        pred, jac = netzoo.forward_with_jacobian(net, z, params=params)
        loss = dk.mean_(dk.l2norm(pred - xdot, axis=-1))
        loss = loss + jac_weight * dk.mean_(dk.fronorm(jac - jac_target))
        return loss
    pred = netzoo.forward(net, z, params=params)
    return dk.mean_(dk.l2norm(pred - xdot, axis=-1))


def heldout_errors(net: netzoo.Mlp, data: Dataset) -> np.ndarray:
    """Per-sample L2 errors of the predicted transitions (no tape)."""
    z = np.concatenate([data.x, data.u], axis=1)
    pred = netzoo.forward(net, z).data
    return np.linalg.norm(pred - data.xdot, axis=1)


def heldout_jac_errors(net: netzoo.Mlp, data: Dataset) -> np.ndarray:
    """Per-sample Frobenius errors of the stacked input-Jacobian."""
    z = np.concatenate([data.x, data.u], axis=1)
    jac = netzoo.input_jacobian(net, z).data
    target = np.concatenate([data.jac_x, data.jac_u], axis=2)
    return np.linalg.norm((jac - target).reshape(len(data), -1), axis=1)


def _report(spec: SystemSpec, cfg: SysIdConfig, errors: np.ndarray) -> SysIdReport:
    q25, q75 = np.percentile(errors, [25, 75])
    return SysIdReport(
        system=spec.name,
        activation=cfg.activation,
        grad_supervision=cfg.grad_supervision,
        mean=float(errors.mean()),
        std=float(errors.std()),
        median=float(np.median(errors)),
        iqr=float(q75 - q25),
        epochs=cfg.epochs,
        n_train=cfg.n_train,
        seed=cfg.seed,
    )


def train_sysid(
    spec: SystemSpec,
    cfg: SysIdConfig,
    train_data: Dataset | None = None,
    log_every: int = 0,
) -> tuple[netzoo.Mlp, SysIdReport, list[float]]:
    """Adam on the Sobolev loss; deterministic per seed.

    Returns the trained network, the held-out report (fresh uniform samples
    drawn with a fixed seed offset) and the per-epoch loss history.
    """
    if train_data is None:
        train_data = sample_dataset(spec, cfg.n_train, seed=cfg.seed)
    test_data = sample_dataset(spec, cfg.n_test, seed=cfg.seed + TEST_SEED_OFFSET)

    net = netzoo.dynamics_net(
        spec.d, spec.m, hidden=cfg.hidden, activation=cfg.activation,
        omega0=cfg.omega0, seed=cfg.seed,
    )
    jac_full = (
        np.concatenate([train_data.jac_x, train_data.jac_u], axis=2)
        if cfg.grad_supervision
        else None
    )

    params = net.params()
    adam = optim.Adam(params)
    schedule = optim.step_decay(cfg.lr, cfg.lr_decay, max(1, cfg.epochs // 5))
    rng = np.random.default_rng(cfg.seed + 1)
    order = rng.permutation(len(train_data))
    cursor = 0
    losses: list[float] = []

    for epoch in range(cfg.epochs):
        if cursor + cfg.batch > len(order):
            order = rng.permutation(len(train_data))
            cursor = 0
        idx = order[cursor:cursor + cfg.batch]
        cursor += cfg.batch

        tape = dk.Tape()
        with tape:
            leaves = [tape.leaf(p) for p in params]
            loss = sysid_loss(
                net, train_data.x[idx], train_data.u[idx], train_data.xdot[idx],
                jac_target=jac_full[idx] if jac_full is not None else None,
                grad_supervision=cfg.grad_supervision,
                params=leaves, jac_weight=cfg.jac_weight,
            )
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"sysid loss became {value} at epoch {epoch}")
        grads = dk.grad(loss, leaves)
        params = adam.step(params, [grads[l].data for l in leaves], schedule(epoch))
        losses.append(value)
        if log_every and (epoch % log_every == 0 or epoch == cfg.epochs - 1):
            print(f"[sysid] epoch {epoch + 1:5d}/{cfg.epochs}  loss={value:.6f}")

    net = net.with_params(params)
    report = _report(spec, cfg, heldout_errors(net, test_data))
    return net, report, losses


def ablation_harness(
    spec: SystemSpec,
    cfg: SysIdConfig,
    activations=("relu", "tanh", "sine"),
    supervisions=(False, True),
    seeds=(0,),
    log_every: int = 0,
) -> list[SysIdReport]:
    """Grid of {activation} x {grad supervision} x {seed} sharing datasets.

    Every cell with the same seed trains on the identical dataset, so the
    comparison isolates the architecture and the loss.
    """
    reports = []
    for seed in seeds:
        base = replace(cfg, seed=seed)
        data = sample_dataset(spec, base.n_train, seed=seed)
        for act in activations:
            for sup in supervisions:
                cell = replace(base, activation=act, grad_supervision=sup)
                _, rep, _ = train_sysid(spec, cell, train_data=data, log_every=log_every)
                reports.append(rep)
                if log_every:
                    print(
                        f"[ablation] {spec.name} {act:5s} grad={int(sup)} seed={seed}"
                        f"  mean={rep.mean:.6f} median={rep.median:.6f}"
                    )
    return reports


def write_reports_csv(reports, path, header: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for rep in reports:
            w.writerow(rep.row())
