"""Fast numerical self-test of the installed package.

Each check belongs to a category and either passes or records why not.
The checks reach the kernels through their modules at call time, so a
patched kernel is exercised exactly as the network would use it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from mbanet import attention, evaluation, reference
from mbanet.tensor_core import Tensor, check_gradients, matmul
from mbanet.tensor_core import functional as F
from mbanet.training import TrainConfig, lr_at

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    category: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.category}: {self.name}" + (f" ({self.detail})" if self.detail else "")


def _t(arr, grad=True):
    return Tensor(arr, requires_grad=grad, dtype=np.float64)


def _grad_ok(fn, inputs):
    worst = max(check_gradients(fn, inputs).values())
    return worst < GRAD_TOL, f"max relative error {worst:.2e}"


def _gradient_checks(rng):
    a, b = _t(rng.normal(size=(2, 3, 4))), _t(rng.normal(size=(2, 4, 3)))
    x = _t(rng.normal(size=(2, 3, 5, 5)))
    w = _t(rng.normal(size=(4, 3, 3, 3)))
    scale, shift = _t(rng.uniform(0.5, 1.5, 3)), _t(rng.normal(size=3))
    logits = _t(rng.normal(size=(3, 5)))

    def bn():
        return F.batch_norm(x, scale, shift, np.zeros(3), np.ones(3), training=True)

    return {
        "matmul": lambda: _grad_ok(lambda: matmul(a, b), [a, b]),
        "softmax_rows": lambda: _grad_ok(lambda: F.softmax_rows(logits), [logits]),
        "log_softmax": lambda: _grad_ok(lambda: F.log_softmax(logits), [logits]),
        "batch_norm": lambda: _grad_ok(bn, [x, scale, shift]),
        "conv2d": lambda: _grad_ok(lambda: F.conv2d(x, w, stride=2, padding=1), [x, w]),
        "max_pool2d": lambda: _grad_ok(lambda: F.max_pool2d(x), [x]),
    }


def _attention_fixture(rng, h=2, w=3, training=False):
    sam = attention.SpatialAttentionRPE(8, h, w).initialize(1).astype(np.float64)
    sam.gamma.data[:] = 0.5
    for bn in (sam.w_k.bn, sam.w_q.bn, sam.w_v.bn, sam.bn_h, sam.bn_w):
        bn.running_mean[:] = rng.normal(0, 0.2, bn.channels)
        bn.running_var[:] = rng.uniform(0.5, 2.0, bn.channels)
    return sam


def build_checks(seed: int = 0) -> list[tuple[str, str, Callable]]:
    rng = np.random.default_rng(seed)
    checks = [("gradients", name, fn) for name, fn in _gradient_checks(rng).items()]

    def attention_grads():
        sam = _attention_fixture(rng)
        x = _t(rng.normal(size=(2, 8, 2, 3)))
        return _grad_ok(lambda: attention.sam_rpe_forward(x, sam, True),
                        [x, sam.gamma, sam.w_q.weight, sam.r_h, sam.r_w])

    checks.append(("gradients", "sam_rpe_forward", attention_grads))

    def rows_sum_to_one():
        worst = 0.0
        for magnitude in (1.0, 1e2, 1e4):
            p = F.softmax_rows(Tensor(rng.normal(size=(6, 7)) * magnitude, dtype=np.float64)).data
            worst = max(worst, float(np.abs(p.sum(axis=1) - 1.0).max()))
            if (p < 0).any():
                return False, "negative probability"
        return worst < 1e-6, f"max |row sum - 1| {worst:.1e}"

    def shift_invariant():
        z = rng.normal(size=(4, 5))
        a = F.softmax_rows(Tensor(z, dtype=np.float64)).data
        b = F.softmax_rows(Tensor(z + 37.0, dtype=np.float64)).data
        gap = float(np.abs(a - b).max())
        return gap < 1e-12, f"max gap {gap:.1e}"

    def attention_maps_normalized():
        x = Tensor(rng.normal(size=(2, 8, 3, 3)) * 1e4, dtype=np.float64)
        sam = attention.SpatialAttentionRPE(8, 3, 3).initialize(2)
        worst = max(float(np.abs(attention.channel_attention_map(x).data.sum(-1) - 1).max()),
                    float(np.abs(attention.spatial_attention_map(x, sam, False).data.sum(-1) - 1).max()))
        return worst < 1e-6, f"max |row sum - 1| {worst:.1e}"

    checks += [
        ("softmax", "rows sum to one", rows_sum_to_one),
        ("softmax", "shift invariance", shift_invariant),
        ("softmax", "attention maps normalized", attention_maps_normalized),
    ]

    def cam_identity():
        x = Tensor(rng.normal(size=(2, 8, 3, 2)))
        return bool(np.array_equal(attention.cam_forward(x, attention.ChannelAttention()).data, x.data)), ""

    def sam_identity():
        x = Tensor(rng.normal(size=(2, 8, 3, 2)))
        sam = attention.SpatialAttentionRPE(8, 3, 2).initialize(0)
        return all(np.array_equal(attention.sam_rpe_forward(x, sam, t).data, x.data) for t in (True, False)), ""

    checks += [("gamma-zero identity", "cam_forward", cam_identity),
               ("gamma-zero identity", "sam_rpe_forward", sam_identity)]

    def masks():
        for axis in ("height", "width"):
            for h in range(1, 6):
                for w in range(1, 6):
                    if not np.array_equal(attention.build_reindex_mask(axis, h, w).matrix,
                                          reference.reindex_tensor(axis, h, w)):
                        return False, f"{axis} mask differs at H={h} W={w}"
        return True, "H, W <= 5"

    checks.append(("re-index mask", "matches triple loop", masks))

    def cam_oracle():
        x = rng.normal(size=(1, 8, 2, 3))
        cam = attention.ChannelAttention().astype(np.float64)
        cam.gamma.data[:] = 0.7
        gap = float(np.abs(attention.cam_forward(Tensor(x, dtype=np.float64), cam).data - reference.cam(x, 0.7)).max())
        return gap < 1e-5, f"max gap {gap:.1e}"

    def sam_oracle():
        worst = 0.0
        for h, w in ((1, 1), (2, 2), (3, 2)):
            sam = _attention_fixture(rng, h, w)
            x = rng.normal(size=(1, 8, h, w))
            out = attention.sam_rpe_forward(Tensor(x, dtype=np.float64), sam, False).data
            worst = max(worst, float(np.abs(out - reference.sam_rpe(x, reference.sam_rpe_params(sam))).max()))
        return worst < 1e-5, f"max gap {worst:.1e}"

    checks += [("attention oracle", "cam_forward", cam_oracle), ("attention oracle", "sam_rpe_forward", sam_oracle)]

    def map_oracle():
        for _ in range(20):
            g_labels = rng.integers(0, 4, 9)
            q_labels = rng.choice(g_labels, 4)
            ranking = np.stack([rng.permutation(9) for _ in range(4)])
            ranked = [[g_labels[i] for i in row] for row in ranking]
            aps = [reference.average_precision(r, q) for r, q in zip(ranked, q_labels)]
            if evaluation.mean_ap(ranking, q_labels, g_labels) != sum(aps) / len(aps):
                return False, "mAP differs from brute force"
            if evaluation.rank1(ranking, q_labels, g_labels) != reference.rank1(ranked, q_labels):
                return False, "rank-1 differs from brute force"
        return evaluation.mean_ap(np.array([[0, 1, 2, 3]]), [1], np.array([5, 6, 7, 1])) == 0.25, ""

    def ranking_oracle():
        q, g = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
        return evaluation.cosine_rank(q, g).tolist() == reference.cosine_ranking(q, g), ""

    checks += [("metrics", "mAP and rank-1 oracle", map_oracle), ("metrics", "cosine ranking oracle", ranking_oracle)]

    def schedule():
        cfg = TrainConfig()
        got = [lr_at(e, cfg)["new"] for e in (0, 10, 40, 60)]
        return got == [8e-6, 8e-4, 4e-4, 2e-4], str(got)

    checks.append(("schedule", "learning-rate checkpoints", schedule))
    return checks


def run_selfcheck(seed: int = 0) -> list[CheckResult]:
    results = []
    for category, name, fn in build_checks(seed):
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(category, name, bool(passed), detail))
    return results
