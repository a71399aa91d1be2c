import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from hjbctrl import diffkit as dk
from hjbctrl import dynzoo as dz
from hjbctrl import netzoo as nz
from hjbctrl import rollout as ro

from conftest import rel_err


def zero_controller(m):
    return lambda x: dk.tensor(np.zeros((x.shape[0], m)), checked=False)


def constant_controller(u):
    u = np.asarray(u, dtype=np.float64)
    return lambda x: dk.tensor(np.tile(u, (x.shape[0], 1)), checked=False)


# -- rk4_step -------------------------------------------------------------------


def test_rk4_zero_field_is_identity():
    f = lambda x, u: 0.0 * x
    x = dk.tensor(np.array([[1.0, -2.0]]))
    out = ro.rk4_step(f, x, None, 0.1)
    assert np.array_equal(out.data, x.data)


def test_rk4_exponential_oracle():
    # xdot = x from 1.0 over h=0.1: RK4 equals the 4th-order Taylor polynomial
    f = lambda x, u: x
    out = ro.rk4_step(f, dk.tensor(np.array([[1.0]])), None, 0.1).data[0, 0]
    taylor4 = 1 + 0.1 + 0.1**2 / 2 + 0.1**3 / 6 + 0.1**4 / 24
    assert abs(out - taylor4) < 1e-12
    assert abs(out - np.exp(0.1)) < 1e-7  # truncation error ~ h^5/120


def test_rk4_counts_four_evals():
    nfe = ro.NfeCounter()
    ro.rk4_step(lambda x, u: x, dk.tensor(np.ones((1, 1))), None, 0.1, nfe=nfe)
    assert nfe.count == 4
    nfe.reset()
    assert nfe.count == 0


def test_rk4_rejects_bad_step():
    with pytest.raises(ValueError):
        ro.rk4_step(lambda x, u: x, dk.tensor(np.ones((1, 1))), None, 0.0)


def test_rk4_nonfinite_aborts():
    f = lambda x, u: dk.tensor(np.full_like(x.data, np.inf), checked=False)
    with pytest.raises(dk.NumericError):
        ro.rk4_step(f, dk.tensor(np.ones((1, 2))), None, 0.1)


def test_dubins_full_circle_returns_to_start():
    spec = dz.make_system("dubins")
    tr = ro.AnalyticTransition(spec)
    u = dk.tensor(np.array([[1.0, 1.0]]))  # psi rate 1 -> period 2*pi
    x = dk.tensor(np.array([[0.3, -0.2, 0.1]]))
    h = 1e-3
    steps = int(round(2 * np.pi / h))
    y = x
    for _ in range(steps):
        y = ro.rk4_step(tr, y, u, h)
    # land on the remainder of the period with one fractional step
    rem = 2 * np.pi - steps * h
    if rem > 1e-12:
        y = ro.rk4_step(tr, y, u, rem)
    assert np.max(np.abs(y.data[:, :2] - x.data[:, :2])) < 1e-6


def test_rk4_convergence_order_on_dubins():
    spec = dz.make_system("dubins", {"tf": 1.0})
    tr = ro.AnalyticTransition(spec)
    ctrl = constant_controller([0.9, 0.7])
    x0 = np.array([[0.0, 0.0, 0.2]])
    ref = ro.rollout(spec, tr, ctrl, x0, K=4096).states[-1].data

    errs = []
    for K in [10, 20, 40]:
        end = ro.rollout(spec, tr, ctrl, x0, K=K).states[-1].data
        errs.append(np.max(np.abs(end - ref)))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.5


# -- rollout --------------------------------------------------------------------


def test_zero_controller_constant_trajectory_zero_cost():
    spec = dz.make_system("dubins")
    tr = ro.AnalyticTransition(spec)
    x0 = np.array([[1.0, 2.0, 0.5], [-1.0, 0.0, -0.3]])
    traj = ro.rollout(spec, tr, zero_controller(2), x0, K=20)
    assert np.allclose(traj.states_array, x0[:, None, :])
    assert np.allclose(traj.running_cost_integral.data, 0.0)


def test_initial_states_preserved_and_grid_uniform():
    spec = dz.make_system("dubins")
    tr = ro.AnalyticTransition(spec)
    x0 = np.array([[0.0, 0.0, 0.0]])
    traj = ro.rollout(spec, tr, constant_controller([0.5, 0.1]), x0, K=25)
    assert np.array_equal(traj.states[0].data, x0)
    hs = np.diff(traj.times)
    assert np.allclose(hs, (spec.tf - spec.t0) / 25)


def test_single_step_rollout_equals_rk4_plus_quadrature():
    spec = dz.make_system("dubins")
    tr = ro.AnalyticTransition(spec)
    x0 = np.array([[0.2, -0.1, 0.4]])
    u = [0.7, -0.5]
    traj = ro.rollout(spec, tr, constant_controller(u), x0, K=1)
    h = spec.tf - spec.t0
    want = ro.rk4_step(tr, dk.tensor(x0), dk.tensor(np.array([u])), h).data
    assert np.allclose(traj.states[-1].data, want)
    l0 = spec.running_cost(x0, np.array([u]), 0.0).data
    assert np.allclose(traj.running_cost_integral.data, h * l0)


def test_rollout_rejects_wrong_dim():
    spec = dz.make_system("dubins")
    with pytest.raises(ValueError):
        ro.rollout(spec, ro.AnalyticTransition(spec), zero_controller(2),
                   np.zeros((2, 5)), K=3)


def test_rollout_gradient_matches_fd():
    spec = dz.make_system("dubins", {"tf": 1.5})
    tr = ro.AnalyticTransition(spec)
    net = nz.controller_net(3, spec.action_box.lo, spec.action_box.hi,
                            hidden=(6,), seed=1)
    x0 = np.array([[-1.0, 0.5, 0.2]])

    def terminal_cost_of(params):
        ctrl = lambda x: nz.forward(net, x, params=params)
        traj = ro.rollout(spec, tr, ctrl, x0, K=10)
        return spec.terminal_cost(traj.states[-1])

    tape = dk.Tape()
    with tape:
        leaves = [tape.leaf(p) for p in net.params()]
        cost = dk.sum_(terminal_cost_of(leaves))
    grads = dk.grad(cost, leaves)

    p0 = net.params()
    h = 1e-6
    checked = 0
    for li in [0, 2]:
        idx = (0, 0) if p0[li].ndim == 2 else (0,)
        pp = [p.copy() for p in p0]
        pm = [p.copy() for p in p0]
        pp[li][idx] += h
        pm[li][idx] -= h

        def value(ps):
            ctrl = lambda x: nz.forward(net.with_params(ps), x)
            traj = ro.rollout(spec, tr, ctrl, x0, K=10, count_nfe=False)
            return float(spec.terminal_cost(traj.states[-1]).data[0])

        want = (value(pp) - value(pm)) / (2 * h)
        got = grads[leaves[li]].data[idx]
        if abs(want) > 1e-8:
            assert abs(got - want) / abs(want) < 1e-3
            checked += 1
    assert checked >= 1


def test_nfe_accounting():
    spec = dz.make_system("dubins")
    tr = ro.AnalyticTransition(spec)
    ctrl = constant_controller([0.5, 0.0])
    x0 = np.zeros((4, 3))
    traj = ro.rollout(spec, tr, ctrl, x0, K=30)
    assert traj.nfe == 4 * 30
    assert tr.nfe.count == 4 * 30
    for _ in range(4):
        ro.rollout(spec, tr, ctrl, x0, K=30)
    assert tr.nfe.count == 4 * 30 * 5
    before = tr.nfe.count
    ro.rollout(spec, tr, ctrl, x0, K=30, count_nfe=False)
    assert tr.nfe.count == before


def test_learned_transition_dim_check_and_counting():
    spec = dz.make_system("dubins")
    net = nz.dynamics_net(3, 2, hidden=(8,), seed=0)
    lt = ro.LearnedTransition(net, 3, 2)
    with pytest.raises(ValueError):
        ro.LearnedTransition(net, 4, 2)
    base = ro.learned_nfe_total()
    ro.rollout(spec, lt, constant_controller([0.3, 0.1]), np.zeros((2, 3)), K=5)
    assert lt.nfe.count == 20
    assert ro.learned_nfe_total() - base == 20


def test_identical_code_path_for_analytic_and_injected_learned():
    spec = dz.make_system("dubins")
    analytic = ro.AnalyticTransition(spec)

    class Injected:
        nfe = ro.NfeCounter()

        def __call__(self, x, u):
            return spec.f(x, u)

    ctrl = constant_controller([0.8, -0.4])
    x0 = np.array([[0.1, 0.2, -0.3], [1.0, -1.0, 2.0]])
    t1 = ro.rollout(spec, analytic, ctrl, x0, K=40)
    t2 = ro.rollout(spec, Injected(), ctrl, x0, K=40)
    assert np.array_equal(t1.states_array, t2.states_array)
    assert np.array_equal(t1.controls_array, t2.controls_array)


def test_controls_stay_inside_action_box():
    spec = dz.make_system("dubins")
    net = nz.controller_net(3, spec.action_box.lo, spec.action_box.hi, seed=3)
    traj = ro.rollout(spec, ro.AnalyticTransition(spec), net,
                      np.random.default_rng(0).uniform(-2, 2, (8, 3)), K=15)
    us = traj.controls_array
    assert np.all(us[:, :, 0] >= 0.0) and np.all(us[:, :, 0] <= 1.0)
    assert np.all(np.abs(us[:, :, 1]) <= 1.0)


def test_rollout_abort_names_step():
    spec = dz.make_system("dubins")

    class Exploding:
        nfe = ro.NfeCounter()
        calls = 0

        def __call__(self, x, u):
            Exploding.calls += 1
            if Exploding.calls > 10:
                return dk.tensor(np.full_like(x.data, np.nan), checked=False)
            return spec.f(x, u)

    with pytest.raises(dk.NumericError, match="step 2"):
        ro.rollout(spec, Exploding(), constant_controller([0.5, 0.5]),
                   np.zeros((1, 3)), K=5)


# -- export ----------------------------------------------------------------------


def test_export_reintegrates_to_cost_integral(tmp_path):
    spec = dz.make_system("dubins", {"obstacles": [[[-1.0, 0.0], 0.5]]})
    tr = ro.AnalyticTransition(spec)
    ctrl = constant_controller([0.9, 0.3])
    x0 = np.array([[-2.0, 0.5, 0.0], [-3.0, -1.0, 1.0]])
    traj = ro.rollout(spec, tr, ctrl, x0, K=40)
    paths = ro.export_trajectories(traj, spec, tmp_path, prefix="t", header="test",
                                   manifest={"seed": 0})
    assert len(paths) == 2
    h = (spec.tf - spec.t0) / 40
    for b, path in enumerate(paths):
        with open(path) as fh:
            comment = fh.readline()
            assert comment.startswith("#")
            rows = list(csv.DictReader(fh))
        assert len(rows) == 41
        rates = [float(r["running_cost"]) for r in rows if r["running_cost"] != ""]
        assert len(rates) == 40
        assert abs(sum(rates) * h - traj.running_cost_integral.data[b]) < 1e-8
    man = json.loads((tmp_path / "t_manifest.json").read_text())
    assert man["nfe"] == traj.nfe and man["system"] == "dubins"
