"""
From step scores to a keyshot summary
=====================================
"""

import numpy as np

from mcsf.dataio import generate_synthetic_dataset
from mcsf.evalsplit import evaluate_video
from mcsf.shotselect import kts_segment, summarize

video = generate_synthetic_dataset(n_videos=1, seed=3)["video_1"]

# planted shot boundaries versus what the variance-based segmentation finds
print("planted  :", video.change_points)
print("recovered:", kts_segment(video.streams["objects"], video.picks, video.n_frames,
                                target_segments=len(video.change_points)))

# an oracle-ish score: how often users picked the frames under each step
p = video.references.masks.mean(axis=0)[video.picks]
summary = summarize(video, p)
print("budget frames:", summary.budget_frames, "selected shots:", summary.selected_shots,
      "frames used:", int(summary.mask.sum()))

for mode in ("avg", "max"):
    print(mode, "F1:", round(evaluate_video(summary, video.references, mode).aggregated, 3))

# random scores for contrast
rand = summarize(video, np.random.default_rng(0).uniform(size=video.n_steps))
print("random avg F1:", round(evaluate_video(rand, video.references, "avg").aggregated, 3))
