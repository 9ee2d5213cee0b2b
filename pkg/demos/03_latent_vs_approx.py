"""
Conditional versus approximate inference on one data set
========================================================

Generate one desk-scale data set (5x5 fine grid, 3x3 coarse grid, m=50)
and fit both methods from the same starting state. Shortened chains keep
the run to a few minutes; the full comparison is `rpareto benchmark
--config configs/desk.json`.
"""

from pathlib import Path

from rpareto import harness

root = Path(__file__).resolve().parents[1]
cfg = harness.ExperimentConfig.load(root / "configs" / "desk.json")
cfg = harness.ExperimentConfig.from_dict({**cfg.to_dict(), "inference": {
    **cfg.to_dict()["inference"], "n_mcmc": 600, "burn_in": 150, "n_init": 300}})

ds = harness.generate_dataset(cfg)
start = harness.starting_values(cfg, ds.observations, ds.sites)
print(f"{ds.m} observations, start c={start.c:.2f} beta={start.beta:.2f} alpha={start.alpha:.2f}")
truth = cfg.truth()
for method in harness.METHODS:
    res = harness.run_method(cfg, ds.observations, ds.sites, method, start)
    s = res.summary
    print(f"{method:12s} median c={s['c']['median']:.2f} beta={s['beta']['median']:.2f} "
          f"alpha={s['alpha']['median']:.2f}  (truth {truth.c}, {truth.beta}, {truth.alpha}); "
          f"acceptance {res.diagnostics['acceptance_rate']:.2f}")
