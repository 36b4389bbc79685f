"""
Checking hand-written gradients against central differences
===========================================================
"""

import numpy as np

from mcsf.dataio import ReferenceSummaries, SourceStream, VideoRecord
from mcsf.model import init_params
from mcsf.training import TrainConfig, backward, finite_difference_gradient, gradient_check, init_decoder

rng = np.random.default_rng(0)
T = 12
streams = {"objects": SourceStream("objects", rng.normal(size=(T, 5))),
           "places": SourceStream("places", rng.normal(size=(T, 7)))}
video = VideoRecord("toy", 180, np.arange(T) * 15, streams, ReferenceSummaries(np.ones((1, 180), np.uint8)))

scorer = init_params("intermediate", {"objects": 5, "places": 7}, hidden=4, seed=1)
config = TrainConfig(strategy="intermediate", hidden=4, decoder_hidden=4, m=3)
decoder = init_decoder(5, 4, seed=1)

report = gradient_check(video, scorer, decoder, config)
for name, err in sorted(report.max_rel_error.items(), key=lambda kv: -kv[1])[:5]:
    print(f"{name:32s} max rel err {err:.2e} at {report.argmax[name]}")

# The largest relative errors sit on entries whose gradient is tiny: there the
# ~1e-11 roundoff of the difference quotient dominates the ratio.
a = backward(video, scorer, decoder, config)
n = finite_difference_gradient(video, scorer, decoder, config)
worst = max(np.abs(a[k] - n[k]).max() for k in a)
print(f"largest absolute disagreement over all tensors: {worst:.1e}")
