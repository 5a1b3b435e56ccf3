# %% [markdown]
# Linear forced rotation
#
# x' = eps (A x + v(theta)),  theta' = omega, with A = [[0, 1], [-1, 0]] and
# v = (cos theta_1, 0).  The averaged field has an elliptic equilibrium at the
# origin, so classical hyperbolic averaging says nothing here.  Because the
# system is linear the response can also be solved mode by mode, which gives
# an independent answer to compare against.

# %%
import numpy as np

from qpresponse.kam import Schedule, solve
from qpresponse.oracles import linear_fourier_oracle, residual
from qpresponse.systems import elliptic_demo

spec = elliptic_demo()
eps = 1e-3
sched = Schedule(rho0=spec.rho, tau=spec.freq.tau, K_trunc=spec.K, deg_max=spec.deg_max)
rep = solve(spec, eps, sched)
print("converged:", rep.converged, "after", rep.m_final, "steps,", rep.reason)
print("A_inf eigenvalues:", np.round(np.linalg.eigvals(rep.A_inf), 6))

# %%
A = np.array([[0.0, 1.0], [-1.0, 0.0]])
ref = linear_fourier_oracle(A, spec.f.coeff((0, 0)), eps, spec.freq)
print("max coefficient gap vs oracle: %.2e" % np.abs(rep.response.c - ref.truncate(rep.response.K).c).max())
print("invariance residual on 64^2 grid: %.2e" % residual(spec, rep.response, eps, 64))

# %%
# The response is close to eps (sin theta_1, -cos theta_1) ... up to O(eps^2)
th = np.array([[0.3, 1.1], [2.0, 4.0]])
print(rep.response.evaluate(th).real / eps)
