"""Calibrate a CZ gate and look at where its error comes from.

Run with ``python demos/cz_calibration.py``; takes a few seconds.
"""

import numpy as np

from hybridcz.gates import CZWaitScan, CZSettings, calibrate_t_wait, cz_noise_free_report
from hybridcz.model import DEFAULT_PARAMS

P = DEFAULT_PARAMS

# A fast, strongly coupled operating point and a slow, weakly coupled one.
for name, (g, x) in {"fast": (4.2, 4.4), "slow": (1.5, 1.5)}.items():
    scan = CZWaitScan(P, g, x, 2.25)
    t_wait = calibrate_t_wait(P, g, x, 2.25, scan=scan)
    rep = cz_noise_free_report(P, CZSettings(g, x, 2.25, t_wait), scan)
    print(f"{name}: tau = ({g}, {x}) GHz, t_wait = {t_wait:.4f} ns, gate time = {rep.gate_time:.3f} ns")
    print(f"    1-F = {rep.infidelity:.2e}  (leak {rep.F_leak_deficit:.2e}, "
          f"q-t {rep.F_qt_deficit:.1e}, phase {rep.F_phase_deficit:.1e}), D_CZ = {rep.D_CZ:.1e}")

# D_CZ against the wait time: the calibration picks the first minimum.
g, x = 4.2, 4.4
scan = CZWaitScan(P, g, x, 2.25)
ts = np.array([0.0, 0.4, 0.8, 0.86, 0.9, 1.2, 1.6])
print("\n t_wait [ns]   D_CZ")
for t, d in zip(ts, scan.d_cz(ts)):
    print(f"   {t:5.2f}     {d:.3e}")
