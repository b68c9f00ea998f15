from dataclasses import replace
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odetwin.analogue import (CrossbarProgram, HardwareSpec, HwInferenceSpec, calibrate_clamp, clamped_relu,
                              crossbar_matvec, hw_infer, map_weights, noise_sweep, quantize_conductance)
from odetwin.nn import MlpField, MlpParams, init_params, mlp_forward
from odetwin.odesolve import integrate

US = 1e-6
QUIET = HardwareSpec(prog_noise_rel_std=0.0, yield_fraction=1.0, clamp_limit=None)


def one_layer(w, b=None):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return MlpParams((w,), (np.zeros(w.shape[0]) if b is None else np.asarray(b, float),))


def test_quantize_examples():
    spec = HardwareSpec()
    assert quantize_conductance(spec.g_min, spec) == spec.g_min
    assert quantize_conductance(spec.g_max, spec) == spec.g_max
    assert quantize_conductance(50 * US, spec) == pytest.approx(20 * US + 24 * 80 * US / 63, rel=1e-12)
    assert quantize_conductance(50 * US, spec) == pytest.approx(50.476 * US, abs=1e-3 * US)


def test_quantize_tie_goes_down():
    spec = HardwareSpec()
    step = spec.level_step
    assert quantize_conductance(spec.g_min + 2.5 * step, spec) == pytest.approx(spec.g_min + 2 * step)


def test_quantize_rejects_out_of_range():
    spec = HardwareSpec()
    with pytest.raises(ValueError):
        quantize_conductance(10 * US, spec)
    with pytest.raises(ValueError):
        quantize_conductance(np.array([50 * US, 101 * US]), spec)


@given(st.floats(20e-6, 100e-6), st.integers(2, 300))
def test_quantize_idempotent_and_nearest(g, levels):
    spec = HardwareSpec(levels=levels)
    q = quantize_conductance(g, spec)
    assert quantize_conductance(q, spec) == q
    assert abs(q - g) <= 0.5 * spec.level_step * (1 + 1e-9)


def test_spec_validation():
    with pytest.raises(ValueError):
        HardwareSpec(g_min=1e-4, g_max=2e-5)
    with pytest.raises(ValueError):
        HardwareSpec(levels=1)
    with pytest.raises(ValueError):
        HardwareSpec(yield_fraction=0.0)
    with pytest.raises(ValueError):
        HardwareSpec(clamp_limit=0.0)


def test_map_weights_examples():
    prog = map_weights(one_layer(np.zeros((2, 3))), replace(QUIET, levels=None))
    assert np.allclose(prog.layers[0].g_plus, 60 * US) and np.allclose(prog.layers[0].g_minus, 60 * US)
    # 60 uS sits exactly between two of the 64 levels; the tie goes down for both devices
    layer = map_weights(one_layer(np.zeros((2, 3))), QUIET).layers[0]
    assert np.array_equal(layer.g_plus, layer.g_minus)
    assert layer.g_plus[0, 0] == pytest.approx(20 * US + 31 * 80 * US / 63)
    assert not layer.decoded_weights().any()
    prog = map_weights(one_layer([[0.5, -2.0]]), replace(QUIET, levels=None))
    layer = prog.layers[0]
    assert layer.g_plus[0, 1] == pytest.approx(20 * US) and layer.g_minus[0, 1] == pytest.approx(100 * US)
    prog = map_weights(one_layer([[2.0, -0.5]]), replace(QUIET, levels=None))
    assert prog.layers[0].g_plus[0, 0] == pytest.approx(100 * US)
    assert prog.layers[0].g_minus[0, 0] == pytest.approx(20 * US)


def test_round_trip_within_one_step(rng):
    p = init_params([5, 12, 3], 0)
    p = MlpParams(p.weights, tuple(0.2 * rng.standard_normal(b.shape) for b in p.biases))
    prog = map_weights(p, QUIET)
    dec = prog.decoded_params()
    for layer, w, wd, b, bd in zip(prog.layers, p.weights, dec.weights, p.biases, dec.biases):
        bound = QUIET.level_step / layer.scale
        assert np.max(np.abs(wd - w)) <= bound * (1 + 1e-9)
        assert np.max(np.abs(bd - b)) <= bound * (1 + 1e-9)


def test_mapping_is_deterministic_and_in_range(rng):
    p = init_params([6, 64, 64, 6], 1)
    spec = HardwareSpec(seed=5)
    a, b = map_weights(p, spec), map_weights(p, spec)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.g_plus, lb.g_plus) and np.array_equal(la.stuck_minus, lb.stuck_minus)
        assert la.g_plus.min() >= spec.g_min and la.g_plus.max() <= spec.g_max
    stuck = sum(l.stuck_plus.sum() + l.stuck_minus.sum() for l in a.layers)
    total = sum(2 * l.g_plus.size for l in a.layers)
    assert abs(stuck / total - 0.028) < 0.006
    other = map_weights(p, replace(spec, seed=6))
    assert not np.array_equal(other.layers[0].g_plus, a.layers[0].g_plus)


def test_matvec_examples(rng):
    prog = map_weights(one_layer([[1.0, -1.0]]), QUIET)
    assert crossbar_matvec(prog.layers[0], [0.5, 0.5], QUIET)[0] == pytest.approx(0.0, abs=1e-15)
    noisy = replace(QUIET, read_noise_rel_std=0.2)
    # multiplicative noise on a zero input: only the 1 V bias line carries current
    p = MlpParams((rng.standard_normal((3, 4)),), (rng.standard_normal(3),))
    layer = map_weights(p, noisy).layers[0]
    out = crossbar_matvec(layer, np.zeros(4), noisy, np.random.default_rng(0))
    gen = np.random.default_rng(0)
    n_plus, n_minus = gen.standard_normal(layer.shape), gen.standard_normal(layer.shape)
    bias_only = (layer.g_plus[:, -1] * (1 + 0.2 * n_plus[:, -1])
                 - layer.g_minus[:, -1] * (1 + 0.2 * n_minus[:, -1])) / layer.scale
    np.testing.assert_allclose(out, bias_only, rtol=1e-12)
    prog = map_weights(p, noisy)
    with pytest.raises(ValueError):
        crossbar_matvec(prog.layers[0], np.zeros(5), noisy)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([16, 64, 256]))
def test_matvec_error_bound(seed, levels):
    r = np.random.default_rng(seed)
    p = MlpParams((r.standard_normal((4, 6)),), (r.standard_normal(4),))
    spec = replace(QUIET, levels=levels)
    layer = map_weights(p, spec).layers[0]
    v = r.standard_normal(6)
    exact = p.weights[0] @ v + p.biases[0]
    bound = spec.level_step / layer.scale * (np.sum(np.abs(v)) + 1.0)
    assert np.max(np.abs(crossbar_matvec(layer, v, spec) - exact)) <= bound * (1 + 1e-9)


def test_ideal_matvec_matches_float(rng):
    p = MlpParams((rng.standard_normal((5, 7)),), (rng.standard_normal(5),))
    spec = QUIET.ideal()
    v = rng.standard_normal(7)
    np.testing.assert_allclose(crossbar_matvec(map_weights(p, spec).layers[0], v, spec),
                               p.weights[0] @ v + p.biases[0], rtol=1e-12, atol=1e-12)


def test_clamped_relu():
    assert clamped_relu(-1.0, 2.0) == 0.0
    assert clamped_relu(7.0, 2.0) == 2.0
    x = np.linspace(0, 2, 9)
    assert np.array_equal(clamped_relu(x, 2.0), x)
    assert clamped_relu(50.0, None) == 50.0


def test_calibrate_clamp():
    p = MlpParams((np.array([[2.0], [-1.0]]), np.ones((1, 2))), (np.zeros(2), np.zeros(1)))
    assert calibrate_clamp(p, np.array([[0.5], [1.5]])) == pytest.approx(1.25 * 3.0)


def test_hw_infer_ideal_matches_software(hp_refs, hp_twin):
    ref, drive = hp_refs["ref"], hp_refs["sine"]
    sw = integrate(MlpField(hp_twin.params, drive), ref.states[0], ref.times)
    hw = hw_infer(map_weights(hp_twin.params, QUIET.ideal()), HwInferenceSpec(initial_state=ref.states[0]),
                  ref.times, drive)
    assert np.max(np.abs(hw.states - sw)) <= 1e-12 * np.max(np.abs(sw))
    assert hw.meta["clamp_saturation_fraction"] == 0.0


def quantization_deviation(hp_refs, hp_twin, levels):
    ref, drive = hp_refs["ref"], hp_refs["sine"]
    sw = integrate(MlpField(hp_twin.params, drive), ref.states[0], ref.times)
    hw = hw_infer(map_weights(hp_twin.params, replace(QUIET, levels=levels)),
                  HwInferenceSpec(initial_state=ref.states[0]), ref.times, drive)
    return float(np.median(np.abs(hw.states - sw)))


def test_quantization_deviation_non_increasing(hp_refs, hp_twin):
    devs = [quantization_deviation(hp_refs, hp_twin, n) for n in (16, 64, 256)]
    assert devs[0] >= devs[1] >= devs[2] > 0


def test_hw_infer_noisy_is_deterministic(hp_refs, hp_twin):
    ref, drive = hp_refs["ref"], hp_refs["sine"]
    spec = HardwareSpec(read_noise_rel_std=0.02, clamp_limit=None, seed=3)
    runs = [hw_infer(map_weights(hp_twin.params, spec), HwInferenceSpec(initial_state=ref.states[0]),
                     ref.times[:100], drive) for _ in range(2)]
    assert np.array_equal(runs[0].states, runs[1].states)
    other = hw_infer(map_weights(hp_twin.params, replace(spec, seed=4)),
                     HwInferenceSpec(initial_state=ref.states[0]), ref.times[:100], drive)
    assert not np.array_equal(runs[0].states, other.states)


def test_hw_infer_batched_and_validation():
    p = init_params([3, 8, 3], 0)
    prog = map_weights(p, QUIET)
    grid = np.linspace(0, 0.5, 6)
    h0 = np.random.default_rng(0).standard_normal((4, 3))
    states, meta = hw_infer(prog, HwInferenceSpec(initial_state=h0), grid)
    assert states.shape == (6, 4, 3)
    single = hw_infer(prog, HwInferenceSpec(initial_state=h0[2]), grid)
    np.testing.assert_allclose(states[:, 2], single.states, rtol=1e-12)
    with pytest.raises(ValueError):
        hw_infer(prog, HwInferenceSpec(), grid)
    with pytest.raises(ValueError):
        HwInferenceSpec(substeps=0)


def test_clamp_saturation_reported():
    p = MlpParams((np.full((2, 1), 10.0), np.ones((1, 2))), (np.zeros(2), np.zeros(1)))
    spec = replace(QUIET, levels=None, clamp_limit=1.0)
    traj = hw_infer(map_weights(p, spec), HwInferenceSpec(initial_state=(1.0,)), np.linspace(0, 0.1, 5))
    assert traj.meta["clamp_saturation_fraction"] == 1.0
    np.testing.assert_allclose(traj.states[:, 0], 1.0 + 2.0 * np.linspace(0, 0.1, 5), rtol=1e-12)


def test_program_json_roundtrip(tmp_path):
    prog = map_weights(init_params([2, 5, 1], 0), HardwareSpec(seed=2))
    path = tmp_path / "prog.json"
    prog.save(path)
    doc = json.loads(path.read_text())
    assert doc["units"] == "siemens" and doc["spec"]["seed"] == 2
    back = CrossbarProgram.load(path)
    for a, b in zip(prog.layers, back.layers):
        assert np.array_equal(a.g_plus, b.g_plus) and np.array_equal(a.stuck_plus, b.stuck_plus)
        assert a.scale == b.scale


def decoded_l1(program, spec):
    """Cheap deterministic sweep metric: mean |decoded - target| weight error."""
    p = init_params([3, 6, 2], 0)
    return float(np.mean(np.abs(program.decoded_params().to_vector() - p.to_vector())))


class ReversedPool:
    def map(self, fn, jobs):
        jobs = list(jobs)
        out = [fn(j) for j in reversed(jobs)]
        return list(reversed(out))


def test_noise_sweep_shape_and_zero_cell():
    p = init_params([3, 6, 2], 0)
    res = noise_sweep(p, QUIET, decoded_l1, repeats=4, seed=1)
    assert res.mean.shape == (3, 3)
    assert res.std[0, 0] == 0.0
    assert res.mean[0, 0] == decoded_l1(map_weights(p, QUIET), QUIET)
    assert res.mean[0, 2] > res.mean[0, 0]
    lines = res.to_csv().splitlines()
    assert lines[0] == "read_noise,prog_noise,mean,std,repeats" and len(lines) == 10


def test_noise_sweep_order_independent():
    p = init_params([3, 6, 2], 0)
    a = noise_sweep(p, QUIET, decoded_l1, repeats=5, seed=2)
    b = noise_sweep(p, QUIET, decoded_l1, repeats=5, seed=2, pool=ReversedPool())
    c = noise_sweep(p, QUIET, decoded_l1, read_levels=(0.02, 0.0, 0.01), prog_levels=(0.0436, 0.02, 0.0),
                    repeats=5, seed=2)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)
    assert np.array_equal(a.mean, c.mean[[1, 2, 0]][:, [2, 1, 0]])


def test_noise_sweep_records_cell_errors():
    def flaky(program, spec):
        if spec.prog_noise_rel_std > 0.03:
            raise FloatingPointError("blow-up")
        return 1.0

    res = noise_sweep(init_params([2, 3, 1], 0), QUIET, flaky, repeats=2)
    assert np.isnan(res.mean[:, 2]).all() and not np.isnan(res.mean[:, :2]).any()
    assert len(res.errors) == 3
    with pytest.raises(ValueError):
        noise_sweep(init_params([2, 3, 1], 0), QUIET, flaky, repeats=0)
