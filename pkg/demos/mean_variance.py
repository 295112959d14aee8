"""Mean-variance allocation: policy gradient vs the classical and box-constrained optima.

Run with ``python3 demos/mean_variance.py``.
"""

from perturb_lq.experiments import MvConfig, run_mv

cfg = MvConfig()
res = run_mv(cfg)
hist = res.history

print(f"horizon {cfg.T}, {len(cfg.excess)} risky assets, fixed step {cfg.eta}")
hit = hist.index[hist["normalized_error"].abs() < 1e-3]
print("normalized error < 1e-3 at iteration", int(hist.loc[hit[0], "iteration"]) if len(hit) else "never")
for it in (0, 10, 50, 100, len(hist) - 1):
    row = hist.iloc[it]
    print(f"  iter {int(row['iteration']):4d}  cost {row['cost']:.6f}  error {row['normalized_error']:.3e}")

print()
print(res.compare.to_string(index=False))
# the 10%-20% band is binding, so the constrained optimum costs more
