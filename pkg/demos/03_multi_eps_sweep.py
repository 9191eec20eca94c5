"""Reusable tables: accuracy and storage as the per-table budget shrinks.

Each table answers r = 10 noisy queries. A smaller total budget means more
noise per lookup.
"""

import math

from lutmpc import datasets
from lutmpc.csp_offline import LookupMode
from lutmpc.ml_train import TrainConfig, accuracy, encode_features, train_plain_data

sp = datasets.mnist01()
Xt = None
for eps_t in (math.inf, 0.01, 0.001, 0.0005):
    mode = (LookupMode.multi(epsilon=math.inf, r_multi=10) if math.isinf(eps_t)
            else LookupMode.multi(epsilon_total=eps_t, r_multi=10))
    cfg = TrainConfig(model="lr", epochs=5, mode=mode)
    res = train_plain_data(sp.X_train, sp.y_train, cfg)
    Xt = encode_features(sp.X_test, cfg)
    print(f"eps_T={eps_t:<7} eps/query={mode.epsilon:.2e} "
          f"tables={res.tables_used['sigmoid']:>4} "
          f"accuracy={accuracy(res.weights, Xt, sp.y_test, cfg):.4f}")
