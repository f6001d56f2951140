"""
One score, three ways to compute it
===================================

An MEI score sums K small Tucker contractions, one per embedding partition.
The same number falls out of a block-diagonal bilinear form and out of a
single sparse Tucker core built as a direct sum. Fixed cores turn the model
into familiar ones.
"""

# %%
import numpy as np

from mei.model import make_fixed_core
from mei.scoring import (block_diagonal_score, direct_sum_core, matching_matrix, mei_score,
                         sparse_tucker_score)

rng = np.random.default_rng(0)
K, C = 3, 4
H, T, R = rng.uniform(-1, 1, (3, K, C))
cores = [rng.uniform(-1, 1, (C, C, C)) for _ in range(K)]

# %%
# partition by partition
print("sum of local Tucker scores:", mei_score(H, T, R, cores))

# each relation partition turns its core into a C x C matching matrix
blocks = [matching_matrix(cores[k], R[k]) for k in range(K)]
print("block-diagonal bilinear form:", block_diagonal_score(H.ravel(), T.ravel(), blocks))

# one big (KC)^3 core that is zero outside the diagonal blocks
print("sparse Tucker:", sparse_tucker_score(H.ravel(), T.ravel(), R.ravel(), cores))
big = direct_sum_core(cores)
print(f"direct-sum core: {big.size} entries, {np.count_nonzero(big)} non-zero")

# %%
# Fixed 2x2x2 cores. With r = (a, b) ComplEx's matching block is a scaled
# rotation and SimplE's swaps the two halves of each entity partition.
a, b = 0.6, -0.3
for name in ("complex", "simple", "cp"):
    print(name)
    print(matching_matrix(make_fixed_core(name), [a, b]))

# %%
# a 1x1x1 core of value 1 is the plain trilinear product
h, t, r = rng.normal(size=(3, 8))
w = make_fixed_core("distmult")
print(mei_score(h[:, None], t[:, None], r[:, None], [w]), np.sum(h * t * r))
