"""The evidence estimate is unbiased on the natural scale.

Each sampler's Z estimate averages to the true evidence, even though the
log of the estimate is biased downwards.  The plane model has a closed-form
evidence, so the ratio Z_hat / Z should average to one.
"""

import math

import numpy as np

from activesmc import SmcSettings, make_model, pilot_adaptive_schedule, plane_log_evidence
from activesmc.assmc import run_assmc
from activesmc.assmc2 import run_assmc2
from activesmc.baseline import run_standard_smc
from activesmc.smc_core import RngStream

toy = make_model("plane", RngStream(0).generator("data"), d=3, n_obs=10)
target = toy.target(pilot_adaptive_schedule(toy, 1000, 0.5, RngStream(0, ("pilot",))).temperatures)
ref = plane_log_evidence(toy)
print(f"true log Z = {ref:.6f}")

samplers = {
    "standard SMC": lambda r: run_standard_smc(target, SmcSettings(n_particles=200), r),
    "AS-SMC": lambda r: run_assmc(target, SmcSettings(n_particles=200, n_inner=10), r),
    "AS-SMC2": lambda r: run_assmc2(target, SmcSettings(n_particles=200, n_inner=10), r),
}
for name, run in samplers.items():
    logz = np.array([run(r).log_z[-1] for r in range(200)])
    ratio = np.exp(logz - ref)
    se = ratio.std(ddof=1) / math.sqrt(len(ratio))
    print(f"{name:13s} mean Z/Z_true {ratio.mean():.4f} +- {se:.4f}   mean log-ratio {np.mean(logz - ref):+.4f}")
