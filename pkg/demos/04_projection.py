"""Speed and energy projection against GPU implementations.

This is a declared linear cost model calibrated to published figures, not a
measurement; every number printed here follows from the shipped constants.

    python demos/04_projection.py
"""

from odetwin.projection import check_quoted, load_constants, project_task

doc = load_constants()
print(doc["banner"].upper())
for task in doc["tasks"]:
    rep = project_task(doc, task)
    print(f"\n{task}: {doc['tasks'][task]['description']}")
    print(f"  {'platform':14s} {'latency (us)':>13s} {'energy (uJ)':>12s} {'speedup':>8s} {'energy x':>9s}")
    for plat, c in rep["costs"].items():
        r = rep["ratios"].get(plat, {"speedup": 1.0, "energy_factor": 1.0})
        print(f"  {plat:14s} {c['latency_s'] * 1e6:13.1f} {c['energy_j'] * 1e6:12.2f} "
              f"{r['speedup']:8.2f} {r['energy_factor']:9.1f}")

rows = check_quoted(doc)
print(f"\nquoted figures reproduced: {sum(r['ok'] for r in rows)}/{len(rows)}")
