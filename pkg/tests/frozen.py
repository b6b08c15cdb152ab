"""Reference values recorded from trusted runs.

They pin regressions; the physical checks themselves live in the tests.
"""

# noise-free CZ at (4.2, 4.4) GHz, t_ramp = 2.25 ns
BROWN = dict(tau=(4.2, 4.4), t_ramp=2.25, t_wait=0.85945, gate_time=5.35945, infidelity=3.762e-4)
# noise-free CZ at (1.5, 1.5) GHz
PINK = dict(tau=(1.5, 1.5), t_ramp=2.25, t_wait=22.5819, infidelity=1.75e-5)
# calibrated Y_L(pi/2) with A = (27, 3.1) GHz
Y_PLUS = dict(t_g=0.7238, infidelity=2.72e-5)
# Z-CNOT at the brown tuning
ZCNOT_BROWN = dict(gate_time=6.8072, infidelity=4.33e-4)

SIGMA_UEV = 4.14
SIGMA_GHZ = 1.001047
