import numpy as np
import pytest

from mcsf.dataio import ReferenceSummaries, SourceStream, VideoRecord
from mcsf.model import init_params
from mcsf.training import TrainConfig, init_decoder, primary_lane

FUSION_CONFIGS = [("single", "logit"), ("early", "logit"), ("intermediate", "logit"),
                  ("late", "logit"), ("late", "probability")]


def make_record(streams, n_frames=None, picks=None, masks=None, change_points=None, video_id="v"):
    """Build a VideoRecord from raw (T, d) arrays keyed by source tag."""
    streams = {k: SourceStream(k, np.asarray(v, dtype=np.float64)) for k, v in streams.items()}
    T = next(iter(streams.values())).n_steps
    if picks is None:
        picks = np.arange(T) * 15
    if n_frames is None:
        n_frames = int(picks[-1]) + 15
    if masks is None:
        masks = np.zeros((1, n_frames), dtype=np.uint8)
        masks[0, : max(1, n_frames // 7)] = 1
    return VideoRecord(video_id, n_frames, np.asarray(picks), streams,
                       ReferenceSummaries(np.asarray(masks, dtype=np.uint8)), change_points)


def random_record(rng, T, dims, **kw):
    return make_record({k: rng.normal(size=(T, d)) for k, d in dims.items()}, **kw)


def gradcheck_instances(seed=2024, per_config=20):
    rng = np.random.default_rng(seed)
    for strategy, space in FUSION_CONFIGS:
        for i in range(per_config):
            m = (1, 3)[i % 2]
            T = int(rng.integers(max(m, 2), 17))
            d1, d2 = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            h = int(rng.integers(1, 5))
            rec = make_record({"objects": rng.normal(size=(T, d1)), "places": rng.normal(size=(T, d2))})
            dims = {"objects": d1} if strategy == "single" else {"objects": d1, "places": d2}
            scorer = init_params(strategy, dims, hidden=h, seed=int(rng.integers(1 << 31)),
                                 late_fusion_space=space)
            config = TrainConfig(strategy=strategy, m=m, hidden=h, decoder_hidden=h)
            decoder = init_decoder(scorer.lane_dim(primary_lane(scorer, config)), h, int(rng.integers(1 << 31)))
            yield (strategy, space, i), rec, scorer, decoder, config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
