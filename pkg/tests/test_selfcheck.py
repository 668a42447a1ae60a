import numpy as np

from mbanet.cli import main
from mbanet.selfcheck import run_selfcheck
from mbanet.tensor_core import functional as F
from mbanet.tensor_core.tensor import Tensor


def test_fresh_build_passes(capsys):
    results = run_selfcheck()
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
    assert len({r.category for r in results}) >= 6
    assert main(["selfcheck"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_corrupted_softmax_fails_by_name(monkeypatch, capsys):
    def unnormalized(a):
        return Tensor(np.exp(a.data - a.data.max(axis=-1, keepdims=True)))

    monkeypatch.setattr(F, "softmax_rows", unnormalized)
    failed = {f"{r.category}: {r.name}" for r in run_selfcheck() if not r.passed}
    assert "softmax: rows sum to one" in failed
    assert main(["selfcheck"]) == 3
    assert "FAIL  softmax: rows sum to one" in capsys.readouterr().out
