"""A daily cycle split into four batches, sampled and refitted.

Run: python3 demos/01_model_and_sampling.py
"""
import numpy as np

from ipidcd import BatchPartition, ChangeSpec, DistributionFamily, IpidModel, batch_of, mle_fit, sample

day = BatchPartition(6598, (1500, 3000, 4500, 6598))
model = IpidModel(DistributionFamily.poisson(), day, (0.1, 0.3, 0.5, 0.2))

print("batch sizes:", day.sizes.tolist())
for k in (1, 1500, 1501, 6598, 6599):
    print(f"  sample {k:>5} -> batch {batch_of(k, day)}")

# two quiet days, then refit the per-batch rates
history = sample(model, ChangeSpec.none(), 2 * 6598, seed=1)
print("fitted rates:", np.round(mle_fit(model.family, day, history), 3))

# the afternoon batch doubles from the start of day 3
change = ChangeSpec.single_batch(3, 1.0, gamma=2 * 6598 + 1)
stream = sample(model, change, 3 * 6598, seed=2)
days = stream.values.reshape(3, 6598)
print("batch-3 mean per day:", np.round(days[:, 3000:4500].mean(axis=1), 3))
