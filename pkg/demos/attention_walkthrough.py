"""Attention modules on a toy feature map.

Shows the relative-shift masks, the gamma = 0 starting point, and why the
positional terms matter: content attention alone commutes with any
shuffle of pixel positions, the positional terms do not.
"""
import numpy as np

from mbanet.attention import (
    ChannelAttention,
    SpatialAttentionRPE,
    build_reindex_mask,
    cam_forward,
    channel_attention_map,
    sam_rpe_forward,
)
from mbanet.tensor_core import Tensor

np.set_printoptions(precision=3, suppress=True)
rng = np.random.default_rng(7)

print("height mask for a 2 x 3 map (rows: positions h*W + w, columns: shift + H - 1)")
print(build_reindex_mask("height", 2, 3).matrix.astype(int))

x = Tensor(rng.normal(size=(1, 16, 3, 3)))

# Fresh modules start as identities because gamma is zero.
cam = ChannelAttention()
sam = SpatialAttentionRPE(16, 3, 3).initialize(0).eval()
print("\nCAM output == input at init:", np.array_equal(cam_forward(x, cam).data, x.data))
print("SAM output == input at init:", np.array_equal(sam_rpe_forward(x, sam).data, x.data))

a_c = channel_attention_map(x).data[0]
print("channel map", a_c.shape, "row sums", a_c.sum(axis=1)[:4], "...")

# Turn the modules on and look at what a pixel shuffle does.
sam.gamma.data[:] = 1.0
perm = rng.permutation(9)


def shuffle(arr):
    return arr.reshape(1, 16, 9)[:, :, perm].reshape(1, 16, 3, 3)


def equivariance_gap(module):
    lhs = sam_rpe_forward(Tensor(shuffle(x.data)), module).data
    rhs = shuffle(sam_rpe_forward(x, module).data)
    return float(np.abs(lhs - rhs).max())


plain = SpatialAttentionRPE(16, 3, 3, rpe=False).initialize(0).eval()
plain.gamma.data[:] = 1.0
print("\nshuffle gap without positions:", f"{equivariance_gap(plain):.2e}")
sam.r_h.data = rng.normal(size=sam.r_h.shape).astype(np.float32)
sam.r_w.data = rng.normal(size=sam.r_w.shape).astype(np.float32)
print("shuffle gap with positions:   ", f"{equivariance_gap(sam):.2e}")
