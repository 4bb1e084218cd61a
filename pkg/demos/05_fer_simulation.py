"""Frame error rate of a small lifted code on AWGN and BSC."""

import numpy as np

from rmcsc.mc2 import StageContext, init_lift_state
from rmcsc.protomatrix import build_code
from rmcsc.simlab import ChannelSpec, decode, channel_transmit, fer_csv, simulate_fer

# cycle-4-free lifting of a random memory-1 partition
rng = np.random.default_rng(0)
K = rng.integers(0, 2, (3, 6))
ctx = StageContext(3, 6, 7, 4, np.ones((3, 6), bool), np.zeros((3, 6), bool), (0, 1), K=K)
x, report = init_lift_state(ctx, rng=1)
code = build_code(K, ctx.matrix_from_x(x, "lift"), 7, 4)
print("code:", code.H.shape, "init report:", report)

# one noisy frame
llr = channel_transmit(np.zeros(code.n, int), ChannelSpec("awgn", 1.0), rng=3)
est, ok, iters = decode(code, llr)
print("decoded:", ok, "in", iters, "iterations; bit errors", int(est.sum()))

grid = [ChannelSpec("awgn", db) for db in (0.0, 1.0, 2.0)]
print(fer_csv(simulate_fer(code, grid, min_errors=50, max_frames=20_000, seed=7)))

grid = [ChannelSpec("bsc", p) for p in (0.08, 0.05, 0.03)]
print(fer_csv(simulate_fer(code, grid, min_errors=50, max_frames=20_000, seed=7)))
