# %% [markdown]
# Which eps are excluded?
#
# For the elliptic demo the eigenvalues of the normal form move with eps, and
# at some eps a divisor i<k, omega> - eps(lam_i - lam_j) gets too small.  The
# scan covers (0, eps1) with equal cells and flags every cell whose minimum
# divisor dips below the threshold.  The excluded fraction should shrink as
# eps1 goes down.

# %%
import numpy as np

from qpresponse.kam import Schedule
from qpresponse.resonance import measure_trend
from qpresponse.systems import elliptic_demo

spec = elliptic_demo()
sched = Schedule(rho0=spec.rho, tau=spec.freq.tau, K_trunc=spec.K, deg_max=spec.deg_max, m_max=4)
out = measure_trend(spec, [0.1, 0.05, 0.025], 1024, sched, a2=0.5, anchors=17)
for s, fr in zip(out["scans"], out["fractions"]):
    print("eps1=%.3f  flagged cells=%4d  excluded fraction=%.4f" % (s.eps1, int(np.sum(s.flags)), fr))
print("non-increasing:", out["nonincreasing"])
print("largest a1 with R(delta) <= delta exp(-a1/delta^0.5): %.4f" % out["a1"])

# %%
# first few excluded intervals at eps1 = 0.1
rows = [r for r in out["scans"][0].rows() if r["flagged"]]
for r in rows[:5]:
    print("(%.5f, %.5f)  k=%s" % (r["eps_lo"], r["eps_hi"], r["worst_k"]))
