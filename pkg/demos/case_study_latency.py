import numpy as np

from tsnsim import build_case_study, run_scenario
from tsnsim.kernel import MS

# Two switches, three real-time flows towards node3, one full-size frame per
# millisecond each.  Flows start at 100, 200 and 300 ms.
sc = build_case_study("transactional", seed=1)
print(sc.baselines())

for mode in ("transactional", "non-transactional"):
    sc = build_case_study(mode, seed=1)
    sim = run_scenario(sc, out_dir=f"out/{mode}")
    print()
    print(mode)
    for row in sim.reconfiguration_report():
        print(" ", row["name"], "at", row["trigger_ns"] / MS, "ms ->", row["outcome"])
    for flow_id, series in sim.series().items():
        lat = series.latencies / 1000  # us
        t = series.recv_times / MS
        # latency levels and the time each one first appears
        levels, first = np.unique(lat, return_index=True)
        order = np.argsort(first)
        steps = ", ".join(f"{levels[i]:.3f} us from {t[first[i]]:.3f} ms" for i in order)
        print(f"  {flow_id}: {steps}")

# The detailed window around the third and fourth update.
sim = run_scenario(build_case_study("non-transactional", seed=1))
for flow_id in ("flow1", "flow2"):
    s = sim.series()[flow_id]
    window = (s.recv_times >= 200 * MS) & (s.recv_times < 210 * MS)
    print(flow_id, list(zip((s.recv_times[window] / MS).round(3).tolist(), s.latencies[window].tolist())))
