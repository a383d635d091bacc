"""
Three ways to compare a template against a search region
========================================================

Plain cross-correlation collapses all channels into one similarity map;
the depthwise variant keeps one map per channel; the learnable fusion op
replaces the fixed kernel with trained ones. Planting the template
inside a noisy search region shows all three peaking at the right spot.
"""

import numpy as np

from asymfuse import ConvKernel, FusionWeights, acm_forward, depthwise_corr, xcorr

rng = np.random.default_rng(7)

C, eta, omega = 4, 5, 5
H, W = 17, 17
planted_at = (9, 3)  # top-left corner of the template inside the search map

template = rng.uniform(0.0, 1.0, size=(C, eta, omega)).astype(np.float32)
search = rng.normal(0.0, 0.15, size=(C, H, W)).astype(np.float32)
r, c = planted_at
search[:, r : r + eta, c : c + omega] += template


def peak(mapping):
    flat = int(np.argmax(mapping))
    return tuple(int(i) for i in np.unravel_index(flat, mapping.shape))


# 1. All-channel cross-correlation: one map, position of best overall match.
sim = xcorr(search, template)[0]
print(f"xcorr map {sim.shape}, peak at {peak(sim)} (planted at {planted_at})")

# 2. Depthwise: each channel votes separately; summing the votes recovers
# the plain map exactly.
per_channel = depthwise_corr(search, template)
print(f"depthwise map {per_channel.shape}, "
      f"summed-peak at {peak(per_channel.sum(axis=0))}")
print(f"channel sum equals xcorr: "
      f"{np.abs(per_channel.astype(np.float64).sum(axis=0) - sim).max():.2e}")

# 3. Learnable fusion seeded to imitate correlation: theta_z kills the
# template term, theta_x holds the template itself as its single kernel, so
# the search-side convolution IS the correlation.
weights = FusionWeights(
    theta_z=ConvKernel(np.zeros((1, C, eta, omega), np.float32)),
    theta_x=ConvKernel(template[np.newaxis]),
)
fused = acm_forward(template, search, weights, apply_relu=False)
print(f"fusion-as-correlation map {fused.shape}, peak at {peak(fused[0])}")
print(f"matches xcorr to {np.abs(fused[0] - sim).max():.2e}")
