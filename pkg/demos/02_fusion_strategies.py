"""
Scoring one video with every fusion strategy
============================================
"""

import numpy as np

from mcsf.dataio import generate_synthetic_dataset
from mcsf.model import forward, init_params

ds = generate_synthetic_dataset(n_videos=1, n_frames=300, seed=7)
video = ds["video_1"]
dims = {k: s.dim for k, s in video.streams.items()}
print("steps:", video.n_steps, "dims:", dims)

for strategy, space in [("single", "logit"), ("early", "logit"), ("intermediate", "logit"),
                        ("late", "logit"), ("late", "probability")]:
    d = {"objects": dims["objects"]} if strategy == "single" else dims
    params = init_params(strategy, d, hidden=8, seed=0, late_fusion_space=space)
    p = forward(video, params)
    print(f"{strategy:>12} ({space:<11}) min {p.min():.3f}  mean {p.mean():.3f}  max {p.max():.3f}")

# the probability-space reading squashes a sum of two probabilities,
# so its scores can never drop below sigmoid(0) = 0.5
zero = init_params("late", dims, hidden=8, late_fusion_space="probability")
zero = zero.copy({k: np.zeros_like(v) for k, v in zero.tensors.items()})
print("all-zero late/probability scorer:", forward(video, zero)[:3])
