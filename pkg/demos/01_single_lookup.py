"""Evaluate sigmoid on secret-shared inputs with single-use tables.

Two parties run in threads over a local socket pair. The dealer derives
the tables on demand, which is fine in-process but never for real parties
(see 05_bundles.py for the deployment path).
"""

import numpy as np

from lutmpc.activations import SIGMOID
from lutmpc.csp_offline import Dealer
from lutmpc.net import loopback_pair, run_parties
from lutmpc.ring64 import decode_fixed, encode_fixed, to_signed, RING_CFG

x = np.array([-3.0, -0.5, 0.0, 0.25, 2.0])
dealer = Dealer(seed=7)
s0, s1 = dealer.share_data(0, encode_fixed(x, RING_CFG).view(np.int64))
look = [dealer.provider(i).lookup(SIGMOID) for i in (0, 1)]

sessions = loopback_pair()


def party(i, share):
    def run(session):
        with session.measure() as m:
            out = look[i](session, share)
        return out, m
    return run


(y0, m0), (y1, _) = run_parties(party(0, s0), party(1, s1), sessions)
y = decode_fixed((y0 + y1), RING_CFG)
print("x        ", x)
print("sigmoid  ", np.round(y, 4))
print("reference", np.round(1 / (1 + np.exp(-x)), 4))
print(f"rounds={m0.rounds} payload_sent={m0.payload_sent} bytes for {x.size} queries")
for s in sessions:
    s.close()
