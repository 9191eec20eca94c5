"""Two-party logistic regression on MNIST digits 0 and 1.

Trains under secret sharing and compares every iteration against the
plaintext fixed-point oracle.
"""

import time

import numpy as np

from lutmpc import datasets
from lutmpc.csp_offline import Dealer
from lutmpc.ml_train import (TrainConfig, accuracy, batch_schedule, encode_features,
                             encode_labels, init_weights, oracle_step, share_dataset, train)

sp = datasets.mnist01()
cfg = TrainConfig(model="lr", epochs=5)
X, Y = encode_features(sp.X_train, cfg), encode_labels(sp.y_train, cfg)
dealer = Dealer(cfg.seed)

traj = {0: [], 1: []}
t0 = time.perf_counter()
res = train(None, *share_dataset(X, Y, dealer), dealer, cfg,
            on_iter=lambda p, i, w: traj[p].append(w[0].copy()))
print(f"trained {res.iterations} iterations in {time.perf_counter() - t0:.2f}s")

prev, worst = init_weights(cfg, X.shape[1]), 0
for it, rows in enumerate(batch_schedule(len(X), cfg)):
    w = (traj[0][it] + traj[1][it]).view(np.int64)
    worst = max(worst, int(np.abs(w - oracle_step(prev, X[rows], Y[rows], cfg, "nearest")[0]).max()))
    prev = [w]
print(f"largest deviation from the oracle: {worst} LSB")
print(f"test accuracy: {accuracy(res.weights, encode_features(sp.X_test, cfg), sp.y_test, cfg):.4f}")
print(f"rounds (party 0): {res.stats[0].rounds}, tables used: {res.tables_used}")
