import numpy as np

from tsnsim.harness import build
from tsnsim.kernel import MS
from tsnsim.scenario import build_case_study

# How far apart do the two switches really switch over?  Each seed draws new
# clock offsets within +-500 ns; the commit lands on the same local instant.
skews, delays = [], []
for seed in range(1, 51):
    sim = build(build_case_study("transactional", seed=seed))
    sim.run()
    for txn in sim.controller.transactions:
        instants = [g for a in sim.agents.values() for s, g, _ in a.applied if s == txn.txn_id]
        if len(instants) == 2:
            skews.append(abs(instants[0] - instants[1]))
        trigger = next(r.trigger for r in sim.script if r.name == txn.txn_id)
        delays.append(txn.execute_at - trigger)

skews = np.array(skews)
print("transactions with two participants:", skews.size)
print("skew ns  min/mean/max:", skews.min(), skews.mean().round(1), skews.max())
print("trigger -> execute ms:", sorted(set((np.array(delays) / MS).tolist())))

# Control-message latency only affects when the transaction finishes, never
# whether the switches agree.
ph = sim.controller.log_rows()
print("\n".join(ph[:5]))
