"""
Training on the synthetic dataset
=================================

The scorer learns to weight features so a small decoder can rebuild the
video, while the mean score is pulled toward 15%.
"""

from mcsf.dataio import generate_synthetic_dataset
from mcsf.training import TrainConfig, train

ds = generate_synthetic_dataset()  # 4 videos, 300 frames, seed 7
result = train(ds, TrainConfig(strategy="late", epochs=50, seed=0))

for epoch in (0, 1, 5, 10, 25, 50):
    obj = result.history[epoch]
    print(f"epoch {epoch:2d}  total {obj.total:.4f}  recon {obj.reconstruction:.4f}  sparsity {obj.sparsity:.5f}")
print("final / initial:", round(result.history[-1].total / result.history[0].total, 3))
