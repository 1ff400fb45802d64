import numpy as np
import pytest

from protochange.raster_io import ChangeMask, ImagePair, RasterImage


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_image(h, w, bands=3, value=0.5):
    return RasterImage(np.full((h, w, bands), value, dtype=np.float64))


def make_pair(pre_data, post_data):
    return ImagePair(RasterImage(pre_data), RasterImage(post_data))


def vanishing_squares_pair(h, w, squares, side=28, background=0.55, tone=0.70):
    """Pre has bright squares on a flat background; post has them removed."""
    pre = np.full((h, w, 3), background)
    gt = np.zeros((h, w), dtype=bool)
    for i, (r, c) in enumerate(squares):
        pre[r : r + side, c : c + side] = tone + 0.01 * i
        gt[r : r + side, c : c + side] = True
    post = np.full((h, w, 3), background)
    return make_pair(pre, post), ChangeMask(gt)


def f1_against(mask_values, gt_values):
    tp = int((mask_values & gt_values).sum())
    fp = int((mask_values & ~gt_values).sum())
    fn = int((~mask_values & gt_values).sum())
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0
