#!/usr/bin/env python3
"""Generate frozen reference values for the image-quality metric tests.

SSIM comes from scikit-image (gaussian window 11x11, sigma 1.5, population
covariance). VIFp is a NumPy transcription of the canonical pixel-domain
visual information fidelity (4 scales, Gaussian windows 2^(5-s)+1 with
sigma N/5, noise variance 2.0), matching the widely used reference
implementations.

Run from the repo root:  python3 tools/make_fixtures.py
Outputs land in crates/core/tests/fixtures/.
"""

import json
import pathlib

import numpy as np
from scipy.ndimage import correlate
from skimage.metrics import structural_similarity

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures"


def fspecial_gauss(n, sigma):
    lo = -(n // 2) + (0 if n % 2 else 0)
    # MATLAB-style centered grid for odd n: -(n-1)/2 .. (n-1)/2
    half = (n - 1) // 2
    x, y = np.mgrid[-half : half + 1, -half : half + 1]
    g = np.exp(-((x**2 + y**2) / (2.0 * sigma**2)))
    g[g < np.finfo(g.dtype).eps * g.max()] = 0
    s = g.sum()
    if s != 0:
        g /= s
    return g


def filter2_valid(img, win):
    full = correlate(img, win, mode="constant", cval=0.0)
    wh, ww = win.shape
    h, w = img.shape
    r0, c0 = wh // 2, ww // 2
    return full[r0 : h - (wh - 1 - r0), c0 : w - (ww - 1 - c0)]


def vifp(gt, p, sigma_nsq=2.0):
    eps = 1e-10
    num = 0.0
    den = 0.0
    gt = gt.astype(np.float64)
    p = p.astype(np.float64)
    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        win = fspecial_gauss(n, n / 5.0)
        if scale > 1:
            gt = filter2_valid(gt, win)[::2, ::2]
            p = filter2_valid(p, win)[::2, ::2]
        mu1 = filter2_valid(gt, win)
        mu2 = filter2_valid(p, win)
        mu1_sq = mu1 * mu1
        mu2_sq = mu2 * mu2
        mu1_mu2 = mu1 * mu2
        sigma1_sq = filter2_valid(gt * gt, win) - mu1_sq
        sigma2_sq = filter2_valid(p * p, win) - mu2_sq
        sigma12 = filter2_valid(gt * p, win) - mu1_mu2

        sigma1_sq[sigma1_sq < 0] = 0
        sigma2_sq[sigma2_sq < 0] = 0

        g = sigma12 / (sigma1_sq + eps)
        sv_sq = sigma2_sq - g * sigma12

        g[sigma1_sq < eps] = 0
        sv_sq[sigma1_sq < eps] = sigma2_sq[sigma1_sq < eps]
        sigma1_sq[sigma1_sq < eps] = 0

        g[sigma2_sq < eps] = 0
        sv_sq[sigma2_sq < eps] = 0

        sv_sq[g < 0] = sigma2_sq[g < 0]
        g[g < 0] = 0
        sv_sq[sv_sq <= eps] = eps

        num += np.sum(np.log10(1.0 + (g**2.0) * sigma1_sq / (sv_sq + sigma_nsq)))
        den += np.sum(np.log10(1.0 + sigma1_sq / sigma_nsq))
    return num / den


def make_pair(rng, kind):
    h = w = 64
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = 0.5 * np.sin(xx / rng.uniform(4, 12)) * np.cos(yy / rng.uniform(4, 12))
    if kind == "noise":
        a = base + rng.uniform(-0.1, 0.1, (h, w))
        b = a + rng.normal(0.0, rng.uniform(0.02, 0.25), (h, w))
    elif kind == "blur":
        a = base + rng.uniform(-0.2, 0.2, (h, w))
        k = np.ones((3, 3)) / 9.0
        b = correlate(a, k, mode="nearest")
    else:  # contrast
        a = base + rng.uniform(-0.15, 0.15, (h, w))
        b = a * rng.uniform(0.6, 1.3) + rng.uniform(-0.1, 0.1)
    a = np.clip(a, -1, 1).astype(np.float32)
    b = np.clip(b, -1, 1).astype(np.float32)
    return a, b


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20231107)
    entries = []
    kinds = ["noise", "blur", "contrast"]
    for i in range(10):
        a, b = make_pair(rng, kinds[i % 3])
        (OUT / f"pair_{i:02d}_a.bin").write_bytes(a.tobytes())
        (OUT / f"pair_{i:02d}_b.bin").write_bytes(b.tobytes())
        s = structural_similarity(
            a.astype(np.float64),
            b.astype(np.float64),
            win_size=11,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            data_range=1.0,
        )
        v = vifp(a, b)
        entries.append(
            {
                "index": i,
                "kind": kinds[i % 3],
                "shape": [64, 64],
                "ssim": float(s),
                "vifp": float(v),
            }
        )
        print(f"pair {i:02d} [{kinds[i % 3]:8s}] ssim={s:.6f} vifp={v:.6f}")
    payload = {
        "peak": 1.0,
        "note": "reference values: scikit-image SSIM and NumPy pixel-domain VIF",
        "pairs": entries,
    }
    (OUT / "metrics_reference.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {OUT}/metrics_reference.json")


if __name__ == "__main__":
    main()
