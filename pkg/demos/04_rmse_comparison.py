"""Cost-matched RMSE comparison through the experiment harness.

Standard SMC with 2000 particles against AS-SMC and AS-SMC2 with 200 outer
particles of 10 inner points each, on the 25-dimensional plane and banana
models.  Results land in demos/results/; the same runs can be made from the
shell with ``activesmc run demos/configs/<name>.json``.
"""

from pathlib import Path

from activesmc.harness import compare, load_config, run_experiment

here = Path(__file__).parent
out = here / "results"
for model in ("plane", "banana"):
    paths = []
    for alg in ("smc", "as-smc", "as-smc2"):
        cfg = load_config(here / "configs" / f"{model}-{alg}.json")
        summary = run_experiment(cfg, out, threads=4)
        paths.append(out / cfg.run_name / "result.json")
        print(f"{cfg.run_name:16s} mean RMSE {summary['mean_rmse']:.4f}")
    print(f"\n{model}: RMSE quartiles over the 25 parameters")
    for row in compare(paths, out / f"{model}-compare.csv"):
        print(f"  {row['algorithm']:8s} min {row['rmse_min']:.4f}  median {row['rmse_median']:.4f}  "
              f"max {row['rmse_max']:.4f}  likelihood evals {row['mean_evals']:.0f}")
    print()
