"""A pacemaker that wants to sprint and a shaper that makes it breathe.

Every pace draws an acknowledgement from the heart model, and each
acknowledgement renews a request for the 500 ms stress period (120 bpm).
The shaper ramps the pacing period down one unit per period tick, holds the
stress rate for at most 30 s, then steers back to the safe 750 ms and
enforces a recovery gap — indefinitely, without ever being asked twice.

Run:  python3 demos/03_paced_heart.py
"""

from dataclasses import replace
from fractions import Fraction

from realtick.harness import check_safety, dispatch_points, run_logical, stress_runs
from realtick.scenario import load_scenario

sc = load_scenario("scenarios/pacemaker.json")
sc = replace(sc, mode="logical", horizon=Fraction(12_000))  # 120 s at 10 ms
p = sc.params

print(f"scenario {sc.name!r}: grain {sc.grain_ms} ms, horizon 120 s (logical)")
print(f"safe period 750 ms, stress band [{p.stress_low}, {p.stress_high}] units, "
      f"ramp {p.max_delta_per_period} unit per period\n")

run = run_logical(sc)

paces = [rec for rec in run.log.records if rec.kind == "pace"]
print(f"{len(paces)} paces delivered; the first few intervals (ms):")
times = [rec.ltime * sc.grain_ms for rec in paces]
gaps = [b - a for a, b in zip(times, times[1:])]
print(" ", ", ".join(str(g) for g in gaps[:10]), "...")

print("\npacing period over time (one line per change of direction):")
pts = dispatch_points(run.log)
last_dir = 0
for (t, e, _), (t2, e2, _) in zip(pts, pts[1:]):
    d = (e2 > e) - (e2 < e)
    if d != last_dir:
        print(f"  t = {float(t2 * sc.grain_ms) / 1000:>7.2f} s  period {e2 * sc.grain_ms} ms "
              f"({'ramping down' if d < 0 else 'recovering' if d > 0 else 'holding'})")
        last_dir = d

runs = stress_runs(pts)
print("\nstress episodes (logical units of 10 ms):")
for r in runs:
    span = f"[{r.start}, {r.end})" if r.end is not None else f"[{r.start}, ...)"
    length = f" length {r.end - r.start}" if r.end is not None else ""
    print(f"  {span}{length}")

print("\nsafety check over the whole trace:")
print(check_safety(run.log, p).summary())
