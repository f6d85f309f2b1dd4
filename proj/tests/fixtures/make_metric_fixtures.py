"""Regenerates metric_fixtures.json with scikit-image / scipy reference values.

Run once; the output is checked in. Luma uses Rec. 601 weights.
"""
import json
import pathlib

import numpy as np
from scipy.spatial import cKDTree
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

rng = np.random.default_rng(20240611)


def luma(img):
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def pattern(h, w):
    y, x = np.mgrid[0:h, 0:w]
    base = 0.5 + 0.4 * np.sin(x / 2.0) * np.cos(y / 3.0)
    return np.stack([base, 1 - base, 0.5 * np.ones_like(base)], axis=-1)


pairs = []
a = rng.random((16, 16, 3)); b = rng.random((16, 16, 3)); pairs.append(("random", a, b))
a = rng.random((20, 24, 3)); b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1); pairs.append(("noisy", a, b))
a = pattern(32, 32); b = np.roll(a, 2, axis=1); pairs.append(("shifted", a, b))
a = pattern(16, 16); b = 1.0 - a; pairs.append(("negative", a, b))
a = np.full((12, 12, 3), 0.4); b = np.full((12, 12, 3), 0.5); pairs.append(("constant", a, b))

out = {"images": [], "chamfer": []}
for name, a, b in pairs:
    out["images"].append({
        "name": name,
        "height": a.shape[0],
        "width": a.shape[1],
        "a": a.tolist(),
        "b": b.tolist(),
        "psnr": float(peak_signal_noise_ratio(a, b, data_range=1.0)),
        "ssim": float(structural_similarity(luma(a), luma(b), data_range=1.0, gaussian_weights=True, sigma=1.5,
                                           use_sample_covariance=False)),
    })

for n, m in [(5, 7), (40, 33), (128, 128)]:
    p = rng.normal(size=(n, 3)); q = rng.normal(size=(m, 3)) + 0.1
    dp, _ = cKDTree(q).query(p); dq, _ = cKDTree(p).query(q)
    out["chamfer"].append({"a": p.tolist(), "b": q.tolist(), "value": float(np.mean(dp ** 2) + np.mean(dq ** 2))})

path = pathlib.Path(__file__).with_name("metric_fixtures.json")
path.write_text(json.dumps(out))
