"""
Low-rank nonsymmetric kernels and their likelihood
===================================================

"""

# A kernel is L = V V^T + B C B^T where C = D - D^T is skew-symmetric.
# The skew part lets two items be *more* likely together than apart,
# which a symmetric kernel can never express.
import numpy as np
import ndpp

rng = np.random.default_rng(0)
m, k = 8, 2
p = ndpp.NdppParams(v=0.5 * rng.uniform(size=(m, k)),
                    b=rng.uniform(size=(m, k)),
                    d=np.array([[0.0, 2.0], [0.0, 0.0]]),
                    tied=False)
L = p.materialize()
print("L is nonsymmetric:", not np.allclose(L, L.T))

# Pair probabilities relative to the product of singletons.
i, j = 0, 1
pair = np.linalg.det(L[np.ix_([i, j], [i, j])])
print("det(L_ij) / (L_ii L_jj) =", pair / (L[i, i] * L[j, j]))

# The normalizer log det(I + L) never needs the M x M matrix; it is
# computed from a 2K x 2K system.  Compare with the dense value here.
print("log det(I + L):", ndpp.log_normalizer(p),
      "dense:", np.linalg.slogdet(np.eye(m) + L)[1])

# Mean log-likelihood of a few baskets and the gradient used for training.
baskets = [(0, 1), (2, 3, 4), (5,)]
report, grads = ndpp.objective_and_grad(p, baskets, mu=np.ones(m))
print("objective:", report.objective)
print("gradient shapes:", grads.gv.shape, grads.gb.shape, grads.gd.shape)

# The normalizer scales linearly with the catalog size.
import time
for m_big in (10_000, 20_000, 40_000):
    big = ndpp.NdppParams(v=0.1 * rng.uniform(size=(m_big, 25)),
                          d=rng.standard_normal((25, 25)))
    t0 = time.perf_counter()
    ndpp.log_normalizer(big)
    print(f"M={m_big:6d}  {1000 * (time.perf_counter() - t0):.1f} ms")
