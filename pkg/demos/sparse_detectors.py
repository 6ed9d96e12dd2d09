"""
Comparing online change detectors on a sparse shift
===================================================

After ``nu`` samples the mean of a 30-dimensional Gaussian stream moves in
only 3 coordinates.  Four stopping rules are calibrated to the same false
alarm rate (average run length 300 on pure noise) and then compared on how
quickly they react:

* ACM, adaptive CUSUM: max over a window of likelihood ratios whose
  post-change mean is learned online with an l1 constraint
* ASR, adaptive Shiryaev-Roberts: same ingredients, summed instead of maxed
* CUSUM with an all-ones post-change guess, which spreads its bet over
  every coordinate
* GLR over a window, which re-estimates the mean from scratch each time

Run with ``python demos/sparse_detectors.py``.
"""

import numpy as np

from temsig.detect import ChangeModel, ProcedureConfig, SparseConstraint, calibrate_threshold, simulate_stop_times

d, nu = 30, 100
change = ChangeModel(nu, support=3, mu=0.8)
sparse = SparseConstraint(3.0)

detectors = {
    "ACM": ProcedureConfig("ACM", w=30, constraint=sparse),
    "ASR": ProcedureConfig("ASR", w=30, constraint=sparse),
    "CUSUM": ProcedureConfig("CUSUM", cusum_mean=np.ones(d)),
    "GLR": ProcedureConfig("GLR", w=30),
}

# %%
# Calibration by bisection on Monte Carlo null runs.  Seeds are shared, so
# every detector is tuned on the same noise.
print(f"{'rule':6s} {'b':>8s} {'ARL':>6s} {'false alarms':>13s} {'delay':>12s}")
for name, cfg in detectors.items():
    cal = calibrate_threshold(cfg, 300, d, runs=300, seed=1)
    st = simulate_stop_times(cfg.with_threshold(cal.b), d, 400, 2000, seed=2, change=change)
    late = st[st > nu] - nu
    print(f"{name:6s} {cal.b:8.3f} {cal.arl:6.0f} {np.mean(st <= nu):13.3f} {late.mean():7.1f} +- {late.std() / np.sqrt(len(late)):.1f}")

# %%
# The learned-mean rules react about three times faster than CUSUM with a
# dense guess, which spends most of its weight on coordinates that never
# move.  A window GLR calibrated on its own is quicker still on this small
# problem, but it re-scans the whole window at every step, while ACM and ASR
# update each candidate recursively from one new sample.
