"""Stages, component matrices and lifting.

A base matrix is split into components by K, coupled L times along a
diagonal band and every nonzero is replaced by a z x z circulant.
"""

import numpy as np

from rmcsc.protomatrix import (
    DesignPlan,
    build_code,
    circulant,
    code_rate_and_length,
    expand_coupled_protograph,
    format_rate,
    hardware_sharing_savings,
)

# the two parameter groups used throughout
for args in [(7, 23, 23, 12, [6, 2, 3]), (7, 35, 29, 16, [8, 3, 4])]:
    plan = DesignPlan.from_schedule(*args)
    for st in plan.stages:
        n, r = code_rate_and_length(plan, st.index)
        print(f"gamma={plan.gamma} kappa={plan.kappa} stage {st.index}: memory {st.memory:2d}  "
              f"window {st.window}  n={n}  rate {format_rate(r)}")

# one circulant: identity shifted left once, raised to a power
print(circulant(1, 4))

# a tiny coupled protograph, memory 1, three replicas
K = np.array([[0, 1, 0], [1, 0, 1]])
P = expand_coupled_protograph([(K == k).astype(int) for k in range(2)], L=3)
print(P)

# lifting it with random powers
T = np.random.default_rng(0).integers(0, 5, K.shape)
code = build_code(K, T, z=5, L=3)
print("lifted:", code.H.shape, "edges", code.H.nnz)

# nested stage bases share hardware
b0 = np.array([[1, 1, 0, 0], [1, 0, 1, 0]])
b1 = np.array([[1, 1, 1, 0], [1, 1, 1, 0]])
b2 = np.ones((2, 4), int)
print("edge savings from nesting:", round(hardware_sharing_savings([b0, b1, b2]), 4))
