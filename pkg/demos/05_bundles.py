"""Offline bundles: the dealer writes one file set per party, then the
parties train from their own bundle only.

Uses a small synthetic dataset because single-use tables cost about 2.6 MB
per sigmoid lookup on disk.
"""

import os
import tempfile

from lutmpc import datasets
from lutmpc.csp_offline import provision, read_bundle, write_bundle
from lutmpc.ml_train import (TrainConfig, accuracy, encode_features, encode_labels,
                             offline_program, train)

sp = datasets.toy_separable(n_train=64)
cfg = TrainConfig(model="lr", batch_size=16, lr_shift=4, epochs=1)
X, Y = encode_features(sp.X_train, cfg), encode_labels(sp.y_train, cfg)

with tempfile.TemporaryDirectory() as tmp:
    bundles = provision({"X": X, "Y": Y}, offline_program(cfg), cfg.mode, cfg.seed)
    paths = []
    for i, b in enumerate(bundles):
        paths.append(os.path.join(tmp, f"p{i}"))
        write_bundle(b, paths[i])
    size = sum(os.path.getsize(os.path.join(dp, f)) for dp, _, fs in os.walk(tmp) for f in fs)
    print(f"bundles written: {size / 1e6:.1f} MB for {bundles[0].manifest['tables']['sigmoid']['tables']} "
          "sigmoid tables per party")
    b0, b1 = (read_bundle(p) for p in paths)
    res = train(None, (b0.data["X"], b1.data["X"]), (b0.data["Y"], b1.data["Y"]), (b0, b1), cfg)
print(f"test accuracy: {accuracy(res.weights, encode_features(sp.X_test, cfg), sp.y_test, cfg):.4f}")
