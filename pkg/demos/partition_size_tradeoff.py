"""
How big should a partition be?
==============================

Parameter efficiency is the number of relation-specific bilinear degrees
of freedom per stored parameter. It peaks near C = sqrt(|E| + |R|).
"""

# %%
import numpy as np

from mei.efficiency import efficiency, efficiency_report, optimal_partition_size, param_count

graphs = {"WN18": (40943, 18), "FB15k-237": (14541, 237)}

for name, (E, R) in graphs.items():
    C = optimal_partition_size(E, R)
    print(f"{name}: sqrt(|E|+|R|) = {np.sqrt(E + R):.2f}, best integer C = {C}")

# %%
# efficiency along C for FB15k-237; D cancels, so K = 1 is enough
E, R = graphs["FB15k-237"]
for C in (10, 40, 80, 121, 122, 123, 200, 400):
    print(f"C={C:4d}  P={efficiency(E, R, C, 1, C):.4f}")

# %%
# same embedding size, different splits
for K, C in ((1, 120), (3, 40), (12, 10), (120, 1)):
    shared = param_count(E, R, K * C, K, C, shared_core=True)
    separate = param_count(E, R, K * C, K, C, shared_core=False)
    print(f"{K:3d} x {C:3d}: shared core {shared:,}  one core per partition {separate:,}")

# %%
print(efficiency_report(E, R, 120, 3, 40, shared_core=True).to_text())
