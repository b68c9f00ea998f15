"""Run a trained twin on an emulated memristor crossbar.

Weights become differential conductance pairs in [20, 100] uS with 64
levels; programming error, read noise and stuck devices are then switched
on one by one.  The twin here is the HP model (fast to train); the CLI runs
the same study on Lorenz96.

    python demos/03_analogue_hardware.py
"""

from dataclasses import replace

import numpy as np

from odetwin.analogue import HardwareSpec, HwInferenceSpec, calibrate_clamp, hw_infer, map_weights, noise_sweep
from odetwin.dynamics import HpParams, ReferenceConfig, Waveform, generate_reference
from odetwin.nn import MlpField
from odetwin.odesolve import integrate
from odetwin.training import HP_TRAIN, train_hp_twin

sine, tri = Waveform("sine", 3.0, 2.0), Waveform("triangular", 3.0, 2.0)
ref = generate_reference(HpParams(), ReferenceConfig(501, 1e-3, (0.1,), drive=sine))
held = generate_reference(HpParams(), ReferenceConfig(501, 1e-3, (0.1,), drive=tri))
params = train_hp_twin(ref, sine, HP_TRAIN).params
sw = integrate(MlpField(params, tri), held.states[0], held.times)

inputs = np.column_stack([sine(ref.times), ref.states])
clamp = calibrate_clamp(params, inputs)
print(f"clamp limit set to {clamp:.2f} (1.25 x largest hidden activation on the training data)")

init = HwInferenceSpec(initial_state=held.states[0])


def run(spec):
    traj = hw_infer(map_weights(params, spec), init, held.times, tri)
    return np.mean(np.abs(traj.states - held.states)), np.median(np.abs(traj.states - sw)), traj.meta


base = HardwareSpec(prog_noise_rel_std=0.0, yield_fraction=1.0, clamp_limit=clamp, seed=1)
print(f"\n{'configuration':34s} {'L1 vs truth':>12s} {'median |hw-sw|':>15s}")
print(f"{'software':34s} {np.mean(np.abs(sw - held.states)):12.5f} {0.0:15.2e}")
for label, spec in (
    ("ideal devices", base.ideal()),
    ("16 levels", replace(base, levels=16)),
    ("64 levels", base),
    ("256 levels", replace(base, levels=256)),
    ("64 levels + 4.36% programming", replace(base, prog_noise_rel_std=0.0436)),
    ("... + 2% read noise", replace(base, prog_noise_rel_std=0.0436, read_noise_rel_std=0.02)),
    ("... + 97.2% yield", replace(base, prog_noise_rel_std=0.0436, read_noise_rel_std=0.02, yield_fraction=0.972)),
):
    l1, dev, meta = run(spec)
    print(f"{label:34s} {l1:12.5f} {dev:15.2e}")


def heldout_l1(program, spec):
    traj = hw_infer(program, init, held.times, tri)
    return float(np.mean(np.abs(traj.states - held.states)))


res = noise_sweep(params, base, heldout_l1, repeats=5, seed=0)
print("\nheld-out L1, mean over 5 programming draws (rows: read noise, columns: programming noise)")
print("        " + "".join(f"{p:>10.2%}" for p in res.prog_levels))
for i, r in enumerate(res.read_levels):
    print(f"{r:>7.0%} " + "".join(f"{m:10.5f}" for m in res.mean[i]))
