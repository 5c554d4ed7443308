"""How much does keeping the sampler count at two save?

Each steered step costs two extractor forwards and four guidance branches.
The ablation mode adds the two extra passes a four-sampler design would run.
"""
from steercompose.cli import run_bench
from steercompose.compositor import expected_forwards
from steercompose.config import RunConfig
from steercompose.steering import infusion_window

# --- Closed form ---
for alpha in (0.0, 0.2, 0.5, 1.0):
    steered = sum(infusion_window(i, 20, alpha) for i in range(20))
    two, four = expected_forwards(20, steered, 2), expected_forwards(20, steered, 4)
    print(f"alpha={alpha:.1f}: {steered:2d} steered steps, {two} vs {four} forwards, ratio {two / four:.3f}")

# --- Measured ---
report = run_bench(RunConfig(weights="builtin:toy16"), repeats=10, size=16)
for name in ("2-sampler", "4-sampler"):
    r = report[name]
    print(f"{name}: {r['composition_forwards']} forwards, median {1000 * r['median_s']:.0f} ms per image")
print("forward ratio", report["forward_ratio"])
