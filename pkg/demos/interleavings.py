from tsnsim.explore import explore, two_transactions_world

# Two controllers reconfigure the same two switches at the same instant.  The
# explorer tries every order in which the control messages can be delivered.
ordered = explore(lambda: two_transactions_world(mac_ordered=True))
print("MAC-ordered locking")
print("  states:", ordered.states, "terminal:", ordered.terminals)
for outcome, n in ordered.outcomes.items():
    print("  ", outcome, n)
print("  deadlocks:", len(ordered.deadlocks), "violations:", len(ordered.violations))

# Same setup, but the second controller locks switch2 before switch1.
crossed = explore(lambda: two_transactions_world(mac_ordered=False))
print("crossed locking")
for outcome, n in crossed.outcomes.items():
    print("  ", outcome, n)
for prefix, problem in crossed.violations:
    print("  ", problem, "after", len(prefix), "deliveries")
