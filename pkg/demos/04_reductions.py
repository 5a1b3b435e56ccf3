# %% [markdown]
# Bringing other systems into the standard form
#
# Three reductions: general exponents (a, b), a second-order system
# x'' = eps^a F + eps^b G, and a degenerate equilibrium with a homogeneous
# leading term.  Each maps to a first-order system the iteration can run on.

# %%
import numpy as np

from qpresponse.fourier import Frequency
from qpresponse.kam import Schedule, solve
from qpresponse.reductions import degenerate_scale, plan_exponents, second_order_reduce
from qpresponse.taylor import TaylorFourierField

for a, b in ((1, 2), (0.5, 1), (1, 1.5)):
    p = plan_exponents(a, b)
    print("a=%g b=%g -> delta=%g, exponents (%g, %g), %s" % (a, b, p.delta, p.a0, p.b0, p.branch))

# %%
# x'' = eps (-diag(1, 4) x - 0.1 x1' e1 + cos(theta) e1) + eps^2 (0, x1^2)
freq = Frequency((1.0,), 0.5, 1.0)
K = 4
const = lambda v: np.r_[np.zeros(K), 1.0, np.zeros(K)][None, :] * np.asarray(v, float)[:, None]
cos = np.zeros((2, 2 * K + 1))
cos[0, K - 1] = cos[0, K + 1] = 0.5
F = TaylorFourierField({(0, 0, 0, 0): cos.astype(complex), (1, 0, 0, 0): const([-1, 0]).astype(complex),
                        (0, 1, 0, 0): const([0, -4]).astype(complex), (0, 0, 1, 0): const([-0.1, 0]).astype(complex)},
                       4, 1, K, (2,))
G = TaylorFourierField.from_polynomial({(2, 0, 0, 0): np.array([0.0, 1.0])}, 4, 1, K)
red = second_order_reduce(F, [(0.0, G)], 1.0, 2.0, freq)
print("doubled spectrum:", np.round(np.sort_complex(red.doubled), 10))
spec = red.spec
sched = Schedule(rho0=spec.rho, tau=freq.tau, K_trunc=spec.K, deg_max=spec.deg_max)
rep = solve(spec, 1e-3, sched)
print("reduced system converged:", rep.converged, "in", rep.m_final, "steps")

# %%
# x' = eps^3 (x^3 + h) with a cubic leading term: tau = eps^(1/3) blows up the origin
phi = TaylorFourierField.from_polynomial({(3,): np.array([1.0])}, 1, 1, 3)
hc = np.zeros((1, 7), complex)
hc[0, 3], hc[0, 2], hc[0, 4] = 1, 0.25, 0.25
h = TaylorFourierField({(4,): hc}, 1, 1, 3, (1,))
fc = np.zeros((1, 7), complex)
fc[0, 3], fc[0, 2], fc[0, 4] = 1, 0.5, 0.5
f = TaylorFourierField({(0,): fc, (1,): hc * 0.5}, 1, 1, 3, (1,))
ds = degenerate_scale(phi, h, f, 3, freq, x_init=np.array([-0.5]))
print("scaled equilibrium:", ds.x_star, " exponents:", (ds.spec.a, ds.spec.b))
