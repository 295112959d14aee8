"""Track a benchmark with sector positions on the bundled synthetic market.

Trains the robust tracker by policy gradient, then replays the holdout path.
Writes the training curve to ``tracking_error.svg`` in the working directory.
"""

from perturb_lq.experiments import TrackExperiment, run_tracking
from perturb_lq.plotting import emit_plot

exp = TrackExperiment(iters=2000)
res = run_tracking(exp)
hist = res.history
tp = res.tracking

print(f"{tp.problem.m} sectors, horizon {tp.problem.T}, penalty {res.lam:.2f}")
print("features:", {k: round(float(v), 6) for k, v in tp.features.items() if k.startswith("sigma")})
err = hist["normalized_error"]
print(f"normalized error {err.iloc[0]:.3e} -> {err.iloc[-1]:.3e} over {len(hist) - 1} steps")
print()
print(res.compare.to_string(index=False))

emit_plot({"policy gradient": err.abs()}, "tracking_error.svg", title="tracking: normalized error",
          ylabel="(C - C*) / C", logy=True)
