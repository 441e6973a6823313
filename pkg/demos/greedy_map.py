"""
Greedy MAP inference
====================

"""

# Pick k items maximizing det(L_Y); a tied rank-K kernel supports k <= K.  The greedy rule adds the item with the
# largest marginal gain det(L_{Y+i}) / det(L_Y); every gain is refreshed
# from running rank-one updates, so no inverse is ever formed.
import numpy as np
import ndpp
from ndpp.inference import GreedyState

rng = np.random.default_rng(1)
p = ndpp.NdppParams(v=rng.uniform(size=(2000, 12)), d=rng.standard_normal((12, 12)))
kernel = ndpp.to_inference_kernel(p)

res = ndpp.greedy_map(kernel, 10)
print("greedy items:", res.items)
print("log det:", res.log_det, " time: %.1f ms" % res.wall_ms)

# The gains are exactly the determinant ratios.
state = GreedyState(kernel)
prev = 0.0
for a in res.items[:4]:
    g = state.gain(a)
    state.add(a)
    sign, now = np.linalg.slogdet(kernel.minor(state.chosen))
    print(f"item {a:5d}  gain {g:10.4f}  ratio {np.exp(now - prev):10.4f}")
    prev = now

# Cheaper and more expensive alternatives, scored against local search.
ref = ndpp.local_search(kernel, 10)
for name, r in [("greedy", res),
                ("stochastic", ndpp.stochastic_greedy(kernel, 10, seed=0)),
                ("mcmc", ndpp.mcmc_map(kernel, 10, seed=0))]:
    print(f"{name:10s} relative error {ndpp.relative_logdet_error(r, ref):.4f}")

# On a tiny kernel the exhaustive answer is available too.
small = ndpp.to_inference_kernel(ndpp.NdppParams(v=rng.uniform(size=(10, 3)),
                                                 d=rng.standard_normal((3, 3))))
print("exact:", ndpp.exact_map(small, 3).items, " greedy:", ndpp.greedy_map(small, 3).items)
