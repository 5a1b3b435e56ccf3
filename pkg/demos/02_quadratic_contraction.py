# %% [markdown]
# Quadratic convergence of the iteration
#
# Adding h(z) = (z2^2, z1 z2) makes the problem nonlinear.  Each step removes
# the constant forcing p_m to quadratic order, so eps^(2^m+1) |p_m| should
# collapse like a double exponential.

# %%
import numpy as np

from qpresponse.kam import Schedule, solve
from qpresponse.oracles import residual
from qpresponse.systems import elliptic_demo

spec = elliptic_demo(quadratic=True)
eps = 1e-2
sched = Schedule(rho0=spec.rho, tau=spec.freq.tau, K_trunc=spec.K, deg_max=spec.deg_max, m_max=5, p_tol=0.0)
rep = solve(spec, eps, sched, require_convergence=False, conjugacy_samples=8)

# the last row is the state reached after the final step, nothing was solved there
for row in rep.rows:
    print("m=%d  eps^(2^m+1)|p|=%9.2e  |B|=%9.2e  hom=%8.1e  syl=%8.1e  conj=%8.1e" % (
        row["m"], row["eps_p"], row["B"], *(row.get(k, np.nan) for k in ("hom_residual", "syl_residual", "conjugacy"))))
print("contraction constant C = %.4g" % rep.contraction_constant())
print("residual: %.2e" % residual(spec, rep.response, eps, 64))

# %%
led = rep.ledger.summary()
print("ledger:", led)
