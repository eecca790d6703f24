"""A syringe pump that cannot overdose, no matter who asks for what.

The shipped pump scenario holds one bolus request from t = 9 s onward.  The
command shaper between the request and the pump enforces four budgets —
episode length, recovery gap, episodes per window, and ramp rate — so the
single held request becomes a safe duty cycle.  The run is fully logical:
exact, deterministic, and instant.

Run:  python3 demos/02_shaped_bolus.py
"""

from realtick.harness import check_safety, dispatch_points, run_logical, stress_runs
from realtick.scenario import load_scenario

sc = load_scenario("scenarios/pump.json")
print(f"scenario {sc.name!r}: grain {sc.grain_ms} ms, horizon {sc.horizon} s,")
p = sc.params
print(f"budgets: bolus <= {p.max_stress_duration} s, gap >= {p.min_relax_gap} s, "
      f"<= {p.max_stress_count} per {p.count_window} s\n")

run = run_logical(sc)

print("what the pump was told (mode 1 = bolus running):")
prev_emitted, prev_denied = None, False
for rec in run.log.records:
    if rec.kind != "dispatch":
        continue
    d = rec.detail
    if d["emitted"] != prev_emitted:
        print(f"  t = {str(rec.ltime):>3} s  pump mode -> {d['emitted']}")
        prev_emitted = d["emitted"]
    if d["denied"] and not prev_denied:
        print(f"  t = {str(rec.ltime):>3} s  request held back ({d['reason']} budget)")
    prev_denied = d["denied"]

runs = stress_runs(dispatch_points(run.log))
print("\nbolus episodes:", ", ".join(
    f"[{r.start}, {r.end})" for r in runs if r.end is not None))

pump = run.devices["pump"]
print(f"volume delivered: {pump.volume_ml} ml "
      f"({float(pump.volume_ml):.3f} ml) — an exact rational, not a float")

print("\nsafety check over the whole trace:")
print(check_safety(run.log, p).summary())
