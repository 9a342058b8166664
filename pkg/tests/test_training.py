from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasthdr import checkpoint as ckpt_io
from fasthdr import ops
from fasthdr.autograd import Tensor, backward
from fasthdr.data import PairedDataset, make_batch, synth_dataset
from fasthdr.errors import NonFiniteError, UsageError
from fasthdr.model import ModelConfig, build_model
from fasthdr.training import (CHECKPOINT_NAME, CURVE_NAME, PRESETS, Adam, TrainConfig, Trainer, adam_update,
                              load_config, lr_schedule, parse_config_text, train)

SMALL = ModelConfig.from_dict({**ModelConfig().to_dict(), "auct.base_channels": 16, "auct.cond_channels": 8,
                               "auct.n_blocks": 2, "le.width": 8})
QUICK = replace(PRESETS["desk"], crop=32, batch=2, total_iters=6, log_every=0)


@pytest.fixture(scope="module")
def dataset():
    return PairedDataset(synth_dataset(3, 48, seed=4))


# --- loss -------------------------------------------------------------------

def test_l1_loss_examples():
    t = np.zeros((3, 4, 4), np.float32)
    assert ops.l1_loss(Tensor(t), t).item() == 0.0
    assert ops.l1_loss(Tensor(t + 0.5), t, 1.0).item() == pytest.approx(0.5)
    assert ops.l1_loss(Tensor(t + 0.5), t, 1e-5).item() == pytest.approx(5e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), same=st.booleans())
def test_l1_loss_non_negative_and_zero_iff_equal(seed, same):
    rng = np.random.default_rng(seed)
    a = rng.random((2, 3, 3)).astype(np.float32)
    b = a.copy() if same else a + rng.uniform(1e-3, 1, a.shape).astype(np.float32) * rng.choice([-1, 1], a.shape)
    loss = ops.l1_loss(Tensor(a), b).item()
    assert loss >= 0
    assert (loss == 0) == same


# --- Adam -------------------------------------------------------------------

def test_adam_first_step_closed_form():
    m, v = np.zeros(3, np.float32), np.zeros(3, np.float32)
    theta = adam_update(np.zeros(3, np.float32), np.ones(3), m, v, 1, 0.1)
    np.testing.assert_allclose(theta, -0.1 / (1 + 1e-8), rtol=1e-6)
    np.testing.assert_allclose(m, 0.1, rtol=1e-6)
    np.testing.assert_allclose(v, 0.001, rtol=1e-6)


def test_adam_zero_gradient_leaves_params():
    theta = np.array([1.5, -2.0], np.float32)
    out = adam_update(theta, np.zeros(2), np.zeros(2, np.float32), np.zeros(2, np.float32), 1, 0.1)
    assert np.array_equal(out, theta)


def test_adam_converges_on_quadratic():
    x = Tensor(np.array([0.0], np.float32), requires_grad=True)
    opt = Adam([("x", x)])
    for _ in range(500):
        x.zero_grad()
        d = ops.sub(x, 3.0)
        backward(ops.sum(ops.mul(d, d)))
        opt.step(0.05)
    assert abs(x.data.item() - 3.0) < 1e-3


def test_adam_state_round_trip():
    x = Tensor(np.ones(4, np.float32), requires_grad=True)
    opt = Adam([("x", x)])
    x.grad = np.arange(4, dtype=np.float32)
    opt.step(0.01)
    other = Adam([("x", Tensor(np.ones(4, np.float32), requires_grad=True))])
    other.load_state({k: v.copy() for k, v in opt.state().items()})
    assert other.t == 1 and np.array_equal(other.m["x"], opt.m["x"])
    with pytest.raises(ValueError):
        other.load_state({"t": np.array([1.0])})


# --- schedule and config ----------------------------------------------------

def test_lr_schedule_large_preset():
    cfg = PRESETS["full"]
    assert lr_schedule(0, cfg) == 4e-6
    assert lr_schedule(499_999, cfg) == 4e-6
    assert lr_schedule(500_000, cfg) == pytest.approx(1e-6)
    assert (cfg.crop, cfg.batch, cfg.loss_weight, cfg.total_iters) == (480, 16, 1e-5, 1_000_000)


def test_lr_schedule_desk_preset():
    cfg = PRESETS["desk"]
    assert cfg.decay_at == 1500
    assert [lr_schedule(i, cfg) for i in (0, 1499, 1500, 1999)] == [1e-3, 1e-3, 2.5e-4, 2.5e-4]
    assert (cfg.crop, cfg.batch, cfg.loss_weight) == (64, 4, 1.0)


def test_parse_config_text():
    cfg, mcfg = parse_config_text("""
        # desk run
        preset = full
        total_iters = 10
        lr0 = 1e-4
        decay_iter = none
        auct.base_channels = 32
        use_le = false
    """)
    assert cfg.total_iters == 10 and cfg.lr0 == 1e-4 and cfg.crop == 480 and cfg.decay_at == 7
    assert mcfg.auct.base_channels == 32 and mcfg.use_le is False


@pytest.mark.parametrize("text,match", [
    ("foo = 1", "unknown key"),
    ("crop 64", "key = value"),
    ("preset = huge", "unknown preset"),
    ("batch = two", "bad value"),
    ("auct.nonsense = 3", "config"),
    ("batch = 0", "config"),
])
def test_parse_config_rejects(text, match):
    with pytest.raises(UsageError, match=match):
        parse_config_text(text)


def test_load_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("batch = 3\nle.width = 8\n", encoding="utf-8")
    cfg, mcfg = load_config(p)
    assert cfg.batch == 3 and mcfg.le.width == 8
    with pytest.raises(UsageError):
        load_config(tmp_path / "missing.cfg")


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch=0)
    with pytest.raises(ValueError):
        TrainConfig(lr0=0)


# --- loop -------------------------------------------------------------------

def test_one_step_on_frozen_batch_decreases_loss():
    ds = PairedDataset(synth_dataset(8, 64, seed=0))
    model = build_model(ModelConfig(), 0)
    sdr, cond, hdr = make_batch(ds, 4, 64, np.random.default_rng(0))
    opt = Adam(model.named_parameters())
    model.eval()  # frozen batch: no dropout noise, BN uses its running statistics

    def loss():
        model.zero_grad()
        return ops.l1_loss(model(Tensor(sdr), cond), hdr)

    before = loss()
    backward(before)
    opt.step(1e-4)
    after = loss().item()
    assert after < before.item()


def test_zero_iterations_checkpoint_equals_init(tmp_path, dataset):
    train(dataset, SMALL, replace(QUICK, total_iters=0), tmp_path)
    ck = ckpt_io.load(tmp_path / CHECKPOINT_NAME)
    init = build_model(SMALL, QUICK.seed).state_dict()
    assert ck.meta["iteration"] == 0
    assert all(np.array_equal(ck.tensors[k], v) for k, v in init.items())


def test_training_writes_curve_and_is_deterministic(tmp_path, dataset):
    a = train(dataset, SMALL, QUICK, tmp_path / "a")
    b = train(dataset, SMALL, QUICK, tmp_path / "b")
    assert a.history == b.history
    rows = (tmp_path / "a" / CURVE_NAME).read_text().splitlines()
    assert len(rows) == QUICK.total_iters
    for i, row in enumerate(rows):
        it, loss = row.split()
        assert int(it) == i and float(loss) >= 0
    sa, sb = a.model.state_dict(), b.model.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_resume_matches_uninterrupted(tmp_path, dataset):
    full = train(dataset, SMALL, QUICK, tmp_path / "full")
    train(dataset, SMALL, QUICK, tmp_path / "part", stop_at=3)
    resumed = train(dataset, SMALL, QUICK, tmp_path / "part", resume=tmp_path / "part" / CHECKPOINT_NAME)
    assert resumed.iteration == full.iteration == QUICK.total_iters
    assert resumed.history == full.history[3:]
    sf, sr = full.model.state_dict(), resumed.model.state_dict()
    assert all(np.array_equal(sf[k], sr[k]) for k in sf)
    assert (tmp_path / "full" / CURVE_NAME).read_text() == (tmp_path / "part" / CURVE_NAME).read_text()


def test_resume_rejects_other_model(tmp_path, dataset):
    train(dataset, SMALL, replace(QUICK, total_iters=1), tmp_path)
    other = ModelConfig.from_dict({**SMALL.to_dict(), "le.width": 12})
    with pytest.raises(UsageError):
        train(dataset, other, QUICK, tmp_path / "x", resume=tmp_path / CHECKPOINT_NAME)


def test_non_finite_loss_aborts_with_last_good_checkpoint(tmp_path, dataset, monkeypatch):
    real = ops.l1_loss
    calls = {"n": 0}

    def flaky(pred, target, weight=1.0):
        calls["n"] += 1
        out = real(pred, target, weight)
        if calls["n"] == 4:
            out.data = np.array(np.nan, np.float32)
        return out

    monkeypatch.setattr(ops, "l1_loss", flaky)
    with pytest.raises(NonFiniteError, match="iteration 3"):
        train(dataset, SMALL, QUICK, tmp_path)
    ck = ckpt_io.load(tmp_path / CHECKPOINT_NAME)
    assert ck.meta["iteration"] == 3
    assert len((tmp_path / CURVE_NAME).read_text().splitlines()) == 3
    assert all(np.all(np.isfinite(v)) for v in ck.tensors.values())


def test_periodic_checkpoints(tmp_path, dataset):
    train(dataset, SMALL, replace(QUICK, checkpoint_every=2), tmp_path, stop_at=5)
    assert ckpt_io.load(tmp_path / CHECKPOINT_NAME).meta["iteration"] == 5


def test_trainer_log_lines(tmp_path, dataset):
    lines = []
    train(dataset, SMALL, replace(QUICK, log_every=2), log=lines.append)
    assert [l.split()[1] for l in lines] == ["2", "4", "6"]
    assert all(l.startswith("iter ") and " loss " in l and " lr " in l for l in lines)


def test_trainer_batch_order_fixed_by_seed(dataset):
    t1 = Trainer(build_model(SMALL, 0), dataset, QUICK)
    t2 = Trainer(build_model(SMALL, 0), dataset, QUICK)
    b1 = make_batch(dataset, 2, 32, t1.rng)
    b2 = make_batch(dataset, 2, 32, t2.rng)
    assert np.array_equal(b1[0], b2[0])
