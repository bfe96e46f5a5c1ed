"""How detection delay grows with the false-alarm budget.

With A = ln(beta), the delay of a single-batch detector should grow like
kappa * ln(beta) / I, where kappa accounts for the changed batch being
visible only part of the time.

Run: python3 demos/03_efficiency.py   (about ten seconds)
"""
from ipidcd import (
    BatchPartition,
    ChangeSpec,
    DistributionFamily,
    IpidModel,
    SingleBatchDetector,
    efficiency_report,
    multiplicative_grid,
    theoretical_delay_bound,
)

part = BatchPartition(24, (6, 12, 18, 24))
model = IpidModel(DistributionFamily.poisson(), part, (2.0, 5.0, 10.0, 4.0))
det = SingleBatchDetector(model, multiplicative_grid(model, [2.0]), 0.0)
change = ChangeSpec.single_batch(2, 10.0)

rep = efficiency_report(det, change, [1e2, 1e3, 1e4], reps=500, mtfa_reps=300, seed=1,
                        horizon_factor=20)
print(f"kappa={rep.kappa:g}  I={rep.I:.4f}  theory slope={rep.theory_slope:.3f}")
for b, m, d in zip(rep.betas, rep.mtfa, rep.delay):
    bound = theoretical_delay_bound(model.family, part, 2, 10.0, 5.0, b)
    print(f"beta={b:>7g}  MTFA={m.mean:>9.1f} (cens {m.censored_fraction:.0%})  "
          f"delay={d.mean:6.2f}  first-order bound={bound:6.2f}")
print(f"fitted slope {rep.slope_fit:.3f}; verdict {'PASS' if rep.passed else 'FAIL'}", *rep.notes)
