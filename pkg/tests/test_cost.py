import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasthdr import ops
from fasthdr.auct import AuctConfig
from fasthdr.cost import bench_inference, count_macs, count_params, layer_costs
from fasthdr.model import ModelConfig, build_model, predict_image

DEFAULT = ModelConfig()


def test_base_network_macs_at_4k_exact():
    base = [l for l in layer_costs(DEFAULT, 2160, 3840) if l.name.startswith("auct.base")]
    assert sum(l.macs for l in base) == 17152 * 3840 * 2160
    assert 17152 == 3 * 128 + 128 * 128 + 128 * 3


def test_full_model_macs_at_4k():
    macs = count_macs(DEFAULT, 2160, 3840)
    assert macs == 478_668_937_984  # frozen regression value
    assert macs <= 503e9


def test_single_conv1x1_is_nine_macs():
    cfg = ModelConfig(auct=AuctConfig(n_layers=2, base_channels=3), use_le=False)
    first = layer_costs(cfg, 1, 1, "auct")[0]
    assert (first.cout, first.cin, first.k, first.h_out, first.w_out) == (3, 3, 1, 1, 1)
    assert first.macs == 9


def test_param_count_in_budget_and_stable():
    m = build_model(DEFAULT, 0)
    assert count_params(m) == 369_340 == build_model(DEFAULT, 1).num_parameters()
    assert 300_000 <= count_params(m) <= 700_000


def _instrumented_macs(monkeypatch, cfg, h, w, stage):
    calls = []
    real1, real3 = ops.conv1x1, ops.conv3x3

    def conv1x1(x, wt, b):
        y = real1(x, wt, b)
        calls.append(wt.shape[0] * wt.shape[1] * y.shape[-2] * y.shape[-1])
        return y

    def conv3x3(x, wt, b, stride=1):
        y = real3(x, wt, b, stride)
        calls.append(wt.shape[0] * wt.shape[1] * 9 * y.shape[-2] * y.shape[-1])
        return y

    monkeypatch.setattr(ops, "conv1x1", conv1x1)
    monkeypatch.setattr(ops, "conv3x3", conv3x3)
    model = build_model(cfg, 0)
    predict_image(model, np.random.default_rng(0).random((3, h, w), dtype=np.float32), stage=stage, workers=1)
    monkeypatch.undo()
    return sum(calls)


@pytest.mark.parametrize("h,w,stage", [(67, 101, "full"), (128, 96, "full"), (64, 80, "auct")])
def test_analytic_count_matches_instrumented_forward(monkeypatch, h, w, stage):
    assert count_macs(DEFAULT, h, w, stage) == _instrumented_macs(monkeypatch, DEFAULT, h, w, stage)


def test_small_config_matches_instrumented_forward(monkeypatch):
    cfg = ModelConfig.from_dict({**DEFAULT.to_dict(), "auct.base_channels": 16, "auct.cond_channels": 8,
                                 "auct.n_blocks": 2, "le.width": 8})
    assert count_macs(cfg, 45, 38) == _instrumented_macs(monkeypatch, cfg, 45, 38, "full")


def test_additive_over_layers():
    layers = layer_costs(DEFAULT, 256, 320)
    assert count_macs(DEFAULT, 256, 320) == sum(l.macs for l in layers)
    auct_only = count_macs(DEFAULT, 256, 320, "auct")
    le_part = sum(l.macs for l in layers if l.name.startswith("le."))
    assert auct_only + le_part == count_macs(DEFAULT, 256, 320)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 300).map(lambda v: 16 * v), w=st.integers(1, 300).map(lambda v: 16 * v))
def test_full_resolution_terms_quadruple(h, w):
    """Doubling both extents quadruples every term whose size is exactly divisible, i.e. all of them here."""
    small = {l.name: l.macs for l in layer_costs(DEFAULT, h, w)}
    big = {l.name: l.macs for l in layer_costs(DEFAULT, 2 * h, 2 * w)}
    for name, v in small.items():
        if name.startswith("auct.heads"):
            assert big[name] == v  # heads act on the 1x1 condition vector
        elif name.startswith(("auct.base", "le.")):
            assert big[name] == 4 * v


def test_bench_returns_positive_times():
    model = build_model(DEFAULT, 0)
    res = bench_inference(model, 64, 72, runs=1, warmup=0)
    assert len(res.times) == 1 and np.isfinite(res.median) and res.median > 0
    with pytest.raises(ValueError):
        bench_inference(model, 64, 64, runs=0)
