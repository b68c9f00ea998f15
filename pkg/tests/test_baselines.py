from dataclasses import replace
import json

import numpy as np
import pytest

from odetwin.baselines import (CELL_KINDS, RecurrentCellParams, RecurrentResNet, cell_loss_grad, cell_rollout,
                               cell_split_errors, cell_step, init_cell, resnet_predict, resnet_step, rollout,
                               train_baseline, train_cell)
from odetwin.nn import MlpField, MlpParams, init_params
from odetwin.odesolve import step_euler
from odetwin.training import HP_TRAIN, LORENZ96_TRAIN, LossSpec, TrainConfig
from odetwin.trajectory import Trajectory


def constant_net(shape, c):
    p = init_params(shape, 0)
    ws = tuple(np.zeros_like(w) for w in p.weights)
    bs = p.biases[:-1] + (np.asarray(c, dtype=float),)
    return MlpParams(ws, bs)


def test_resnet_zero_field_is_identity():
    h = np.array([0.3, -1.2])
    assert np.array_equal(resnet_step(constant_net([2, 5, 2], [0.0, 0.0]), h), h)


def test_resnet_step_is_unit_euler_step():
    p = init_params([3, 8, 2], 4)
    h = np.array([0.4, -0.7])
    u = 1.7
    fld = MlpField(p, drive=lambda t: u)
    assert np.array_equal(resnet_step(p, h, u), step_euler(fld, h, 0.0, 1.0))


def test_resnet_constant_output_telescopes():
    c = np.array([0.25, -0.5])
    h0 = np.array([1.0, 2.0])
    traj = rollout(RecurrentResNet(constant_net([2, 4, 2], c)), h0, n_steps=10)
    np.testing.assert_allclose(traj.states[-1], h0 + 10 * c, rtol=1e-15)
    one = rollout(RecurrentResNet(constant_net([2, 4, 2], c)), h0, n_steps=1)
    assert np.array_equal(one.states[1], resnet_step(constant_net([2, 4, 2], c), h0))
    with pytest.raises(ValueError):
        rollout(RecurrentResNet(constant_net([2, 4, 2], c)), h0, n_steps=0)


def test_resnet_dimension_mismatch():
    with pytest.raises(ValueError):
        resnet_step(init_params([2, 4, 3], 0), np.zeros(2))


def test_zero_gru_with_zero_input_stays_zero():
    p = RecurrentCellParams("gru", np.zeros((12, 3)), np.zeros((12, 4)), np.zeros(12), np.zeros((3, 4)), np.zeros(3))
    h, _, _ = cell_step(p, np.zeros(3), np.zeros(4))
    assert not h.any()
    assert not cell_rollout(p, np.zeros(3), 20).any()


def test_cell_rollout_deterministic():
    p = init_cell("lstm", 3, 6, 11)
    x0 = np.array([0.1, -0.2, 0.3])
    assert np.array_equal(cell_rollout(p, x0, 15), cell_rollout(p, x0, 15))
    assert np.array_equal(init_cell("lstm", 3, 6, 11).to_vector(), p.to_vector())
    traj = rollout(p, x0, n_steps=15, times=np.arange(16) * 0.02)
    assert traj.times[-1] == pytest.approx(0.3) and np.array_equal(traj.states, cell_rollout(p, x0, 15))


@pytest.mark.parametrize("kind", CELL_KINDS)
@pytest.mark.parametrize("loss", [LossSpec("l1"), LossSpec("soft_dtw")])
def test_cell_bptt_matches_finite_differences(kind, loss):
    r = np.random.default_rng(0)
    p = init_cell(kind, 3, 5, 1)
    p = RecurrentCellParams(kind, p.w_x, p.w_h, 0.2 * r.standard_normal(p.b.shape), p.w_out, p.b_out)
    truth = r.standard_normal((8, 2, 3))
    _, g = cell_loss_grad(p, truth, loss)
    theta = p.to_vector()

    def f(th):
        return cell_loss_grad(RecurrentCellParams.from_vector(kind, th, 3, 5), truth, loss)[0]

    h = 1e-6
    fd = np.array([(f(theta + h * e) - f(theta - h * e)) / (2 * h) for e in np.eye(theta.size)])
    assert np.max(np.abs(g - fd)) <= 1e-4 * np.max(np.abs(fd))


def test_cell_params_roundtrip(tmp_path):
    p = init_cell("gru", 6, 4, 0)
    assert p.n_params == 3 * 4 * 6 + 3 * 4 * 4 + 3 * 4 + 6 * 4 + 6
    q = RecurrentCellParams.from_vector("gru", p.to_vector(), 6, 4)
    assert np.array_equal(q.to_vector(), p.to_vector())
    path = tmp_path / "cell.json"
    p.save(path)
    doc = json.loads(path.read_text())
    assert doc["cell_kind"] == "gru" and doc["hidden"] == 4
    assert np.array_equal(RecurrentCellParams.from_dict(doc).to_vector(), p.to_vector())
    with pytest.raises(ValueError):
        RecurrentCellParams("transformer", p.w_x, p.w_h, p.b, p.w_out, p.b_out)
    with pytest.raises(ValueError):
        RecurrentCellParams("lstm", p.w_x, p.w_h, p.b, p.w_out, p.b_out)


def teacher_trajectory(kind):
    t = init_cell(kind, 3, 8, 99)
    t = RecurrentCellParams(kind, t.w_x, t.w_h, 0.3 * np.ones_like(t.b), 0.2 * t.w_out, t.b_out)
    xs = cell_rollout(t, np.random.default_rng(1).standard_normal(3), 120)
    return Trajectory(np.arange(121) * 0.02, xs)


@pytest.mark.parametrize("kind", CELL_KINDS)
def test_cell_teacher_student(kind):
    cfg = TrainConfig(loss=LossSpec("l1"), epochs=500, noise_reg_sigma=0.0, window=10, patience=500)
    report = train_cell(kind, teacher_trajectory(kind), cfg, hidden=8, n_train=100)
    assert report.loss_curve[-1] < 0.1 * report.loss_curve[0]
    errs = cell_split_errors(report.params, teacher_trajectory(kind), 100, 10)
    assert errs["interp_l1"] < 0.5


def test_zero_epochs_echo_init():
    ref = teacher_trajectory("rnn")
    report = train_baseline("rnn", "lorenz96", ref, replace(LORENZ96_TRAIN, epochs=0), hidden=8, n_train=100)
    assert report.loss_curve == []
    assert np.array_equal(report.params.to_vector(), report.init_params.to_vector())
    assert report.summary()["n_params"] == report.params.n_params


def test_resnet_hp_training_improves(hp_refs):
    ref, drive = hp_refs["ref"], hp_refs["sine"]
    report = train_baseline("resnet", "hp", ref, replace(HP_TRAIN, epochs=100), drive=drive)
    assert report.status == "completed" and report.loss_curve[-1] < report.loss_curve[0]
    pred = resnet_predict(report.params, drive, ref.times, ref.states[0])
    assert pred.shape == ref.states.shape and np.all(np.isfinite(pred))
    zero = train_baseline("resnet", "hp", ref, replace(HP_TRAIN, epochs=0), drive=drive)
    assert not zero.params.weights[-1].any()


def test_train_baseline_rejects_wrong_task():
    ref = teacher_trajectory("rnn")
    with pytest.raises(ValueError):
        train_baseline("resnet", "lorenz96", ref, LORENZ96_TRAIN)
    with pytest.raises(ValueError):
        train_baseline("gru", "hp", ref, LORENZ96_TRAIN)
    with pytest.raises(ValueError):
        train_baseline("mlp", "hp", ref, LORENZ96_TRAIN)
