import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dozerformer import _kernels  # noqa: E402
from dozerformer.masks import SparsityParams  # noqa: E402
from dozerformer.model import DozerformerConfig  # noqa: E402

KERNEL_SETS = [_kernels.NUMPY_KERNELS] + ([_kernels.NUMBA_KERNELS] if _kernels.NUMBA_KERNELS else [])


@pytest.fixture(params=KERNEL_SETS, ids=lambda k: k.name)
def kernel_set(request, monkeypatch):
    """Run a test once per kernel backend."""
    monkeypatch.setattr(_kernels, "kernels", request.param)
    _clear_caches()
    yield request.param
    _clear_caches()


def _clear_caches():
    from dozerformer import masks, model
    for fn in (masks.local_self_mask, masks.stride_self_mask, masks.local_cross_mask,
               masks.stride_cross_mask, masks.vary_cross_mask, model._masks_for):
        fn.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return DozerformerConfig(I=8, L=4, O=4, D=2, p=4, c=2, heads=2, enc_layers=2, dec_layers=1,
                             sparsity=SparsityParams(w=1, interval=2, v=1), kernels=(3, 5), dropout=0.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
