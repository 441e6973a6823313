"""
Next-item prediction for a partial basket
=========================================

"""

# Conditioning on the items already in the cart gives every other item a
# score det(L_{J+i}) / det(L_J).  The highest score is the suggestion.
import numpy as np
import ndpp

# Six items in three complementary pairs: (0,1), (2,3), (4,5).
s = np.array([[0.0, 1.0], [-1.0, 0.0]])
L = np.kron(np.eye(3), np.eye(2) + 2.0 * s) + 0.05
kernel = ndpp.kernel_from_matrix(L)

for cart in ([0], [2], [4], [0, 2]):
    scores = ndpp.condition_singletons(kernel, cart)
    best = int(np.argmax(scores))
    print(f"cart {cart} -> suggest {best}  scores {np.round(scores, 3)}")

# Mean percentile rank over baskets: hold out one item, rank it among the
# items not in the cart.  100 means it always came first.
data = ndpp.BasketDataset(6, [(0, 1), (2, 3), (4, 5)] * 20)
value, ci = ndpp.mpr(kernel, data, seed=0)
print("MPR %.1f  (95%% CI %.1f to %.1f)" % (value, *ci))
