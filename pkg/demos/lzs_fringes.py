"""Leakage fringes and the Stueckelberg phase along one cut.

Along tau_2g1g = 4.4 GHz the leakage dips sit where the accumulated phase
between the logical state and its leakage partner wraps through zero.
"""

import numpy as np

from hybridcz.gates import lzs_phase_map
from hybridcz.model import DEFAULT_PARAMS

xs = np.linspace(2.6, 5.0, 13)
for channel in ("10", "11"):
    m = lzs_phase_map(DEFAULT_PARAMS, [4.4], xs, 2.25, channel=channel)
    print(f"\n|{channel}> channel\n tau_2x1g   leakage     phase (wrapped)")
    for x, leak, th in zip(xs, m.leakage[0], m.delta_theta[0]):
        wrapped = (th + np.pi) % (2 * np.pi) - np.pi
        bar = "#" * max(0, int(8 + np.log10(leak) * 2))
        print(f"   {x:4.1f}    {leak:9.2e}   {wrapped:+6.2f}  {bar}")
