"""Training configuration, Adam, the learning-rate schedule and the training loop."""
from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import checkpoint as ckpt_io
from . import ops
from .autograd import Tensor, backward
from .data import PairedDataset, make_batch
from .errors import NonFiniteError, UsageError
from .model import ModelConfig, Pipeline, build_model

CHECKPOINT_NAME = "checkpoint.fhdr"
CURVE_NAME = "loss_curve.txt"


@dataclass(frozen=True)
class TrainConfig:
    crop: int = 64
    batch: int = 4
    loss_weight: float = 1.0
    lr0: float = 1e-3
    decay_iter: Optional[int] = None  # None: 75% of total_iters
    decay_factor: float = 4.0
    total_iters: int = 2000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0  # 0: only at the end
    log_every: int = 100

    def __post_init__(self):
        if self.crop < 1 or self.batch < 1:
            raise ValueError("crop and batch must be >= 1")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.lr0 <= 0 or self.decay_factor <= 0 or self.loss_weight <= 0:
            raise ValueError("lr0, decay_factor and loss_weight must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("Adam needs beta1, beta2 in [0, 1) and eps > 0")

    @property
    def decay_at(self) -> int:
        return int(0.75 * self.total_iters) if self.decay_iter is None else self.decay_iter

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS: Dict[str, TrainConfig] = {
    "desk": TrainConfig(),
    "full": TrainConfig(crop=480, batch=16, loss_weight=1e-5, lr0=4e-6, decay_iter=500_000,
                         total_iters=1_000_000, checkpoint_every=10_000, log_every=1000),
}


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """``lr0`` before ``decay_at``, ``lr0 / decay_factor`` from then on."""
    return cfg.lr0 if iteration < cfg.decay_at else cfg.lr0 / cfg.decay_factor


def _parse_value(raw: str, type_name: str):
    raw = raw.strip()
    if type_name.startswith("Optional") and raw.lower() in ("none", ""):
        return None
    if "int" in type_name:
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if "float" in type_name:
        return float(raw)
    return raw


def parse_config_text(text: str, base: TrainConfig = PRESETS["desk"],
                      model: ModelConfig = ModelConfig()) -> Tuple[TrainConfig, ModelConfig]:
    """Parse ``key = value`` lines. ``preset`` selects the starting point; model keys use
    ``auct.*``, ``le.*`` and ``use_le``. Unknown keys are an error."""
    train_types = {f.name: str(f.type) for f in fields(TrainConfig)}
    train_over: Dict[str, object] = {}
    model_over: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {line!r}")
        if key == "preset":
            if value not in PRESETS:
                raise UsageError(f"config line {lineno}: unknown preset {value!r} (choose from {sorted(PRESETS)})")
            base = PRESETS[value]
        elif key in train_types:
            try:
                train_over[key] = _parse_value(value, train_types[key])
            except ValueError:
                raise UsageError(f"config line {lineno}: bad value for {key}: {value!r}") from None
        elif key == "use_le" or key.startswith(("auct.", "le.")):
            model_over[key] = value
        else:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
    try:
        cfg = replace(base, **train_over)
        mcfg = ModelConfig.from_dict({**model.to_dict(), **model_over}) if model_over else model
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"config: {e}") from None
    return cfg, mcfg


def load_config(path) -> Tuple[TrainConfig, ModelConfig]:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise UsageError(f"{path}: {e.strerror}") from None
    return parse_config_text(text)


class Adam:
    """Bias-corrected Adam over a model's named parameters."""

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        for k, p in self.params.items():
            if p.grad is None:
                continue
            p.data = adam_update(p.data, p.grad, self.m[k], self.v[k], self.t, lr,
                                 self.beta1, self.beta2, self.eps)

    def state(self) -> Dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        out["t"] = np.array([self.t], np.float32)
        return out

    def load_state(self, state: Dict[str, np.ndarray]):
        expected = set(self.state())
        if set(state) != expected:
            raise ValueError("optimizer state does not match the model parameters")
        for k in self.m:
            self.m[k][...] = state[f"m.{k}"]
            self.v[k][...] = state[f"v.{k}"]
        self.t = int(state["t"][0])


def adam_update(theta, g, m, v, t: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> np.ndarray:
    """One Adam step; ``m`` and ``v`` are updated in place, the new ``theta`` is returned."""
    g = np.asarray(g, np.float32)
    m *= np.float32(beta1)
    m += np.float32(1 - beta1) * g
    v *= np.float32(beta2)
    v += np.float32(1 - beta2) * g * g
    m_hat = m / np.float32(1 - beta1 ** t)
    v_hat = v / np.float32(1 - beta2 ** t)
    return (theta - np.float32(lr) * m_hat / (np.sqrt(v_hat) + np.float32(eps))).astype(np.float32)


class Trainer:
    def __init__(self, model: Pipeline, dataset: PairedDataset, cfg: TrainConfig):
        self.model = model
        self.dataset = dataset
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.adam = Adam(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.eps)
        self.iteration = 0
        self.history: List[Tuple[int, float]] = []

    def step(self) -> float:
        cfg = self.cfg
        lr = lr_schedule(self.iteration, cfg)
        sdr, cond, hdr = make_batch(self.dataset, cfg.batch, cfg.crop, self.rng)
        dropout_seed = int(self.rng.integers(0, 2**31))
        self.model.train()
        self.model.zero_grad()
        pred = self.model(Tensor(sdr), cond, dropout_seed=dropout_seed)
        loss = ops.l1_loss(pred, hdr, cfg.loss_weight)
        value = float(loss.item())
        if not np.isfinite(value):
            raise NonFiniteError(f"non-finite loss at iteration {self.iteration}")
        backward(loss)
        for name, p in self.model.named_parameters():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for {name} at iteration {self.iteration}")
        self.adam.step(lr)
        self.history.append((self.iteration, value))
        self.iteration += 1
        return value

    def checkpoint(self) -> ckpt_io.Checkpoint:
        return ckpt_io.from_model(self.model, self.adam.state(), iteration=self.iteration,
                                  seed=self.cfg.seed, rng_state=self.rng.bit_generator.state,
                                  train_config=self.cfg.to_dict())

    def restore(self, ckpt: ckpt_io.Checkpoint):
        self.model.load_state_dict(ckpt.tensors)
        self.adam.load_state(ckpt.optimizer)
        self.iteration = int(ckpt.meta["iteration"])
        self.rng.bit_generator.state = ckpt.meta["rng_state"]


def _write_curve(path, history, start_iter: int):
    """Rewrite the curve keeping rows before ``start_iter`` and appending ``history``."""
    kept = []
    if start_iter > 0 and os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            for line in f:
                parts = line.split()
                if len(parts) == 2 and int(parts[0]) < start_iter:
                    kept.append(line.rstrip("\n"))
    with open(path, "w", encoding="utf-8") as f:
        for line in kept:
            f.write(line + "\n")
        for it, loss in history:
            f.write(f"{it} {loss:.9g}\n")


def train(dataset: PairedDataset, model_cfg: ModelConfig, cfg: TrainConfig, out_dir: Optional[str] = None,
          resume: Optional[str] = None, log: Optional[Callable[[str], None]] = None,
          stop_at: Optional[int] = None) -> Trainer:
    """Optimise a fresh (or resumed) model for ``cfg.total_iters`` iterations.

    ``stop_at`` ends the run early at that iteration (the checkpoint then
    records where to resume). On a non-finite loss the last good state is
    written before the error propagates.
    """
    if log is None:
        log = lambda msg: print(msg, file=sys.stderr)  # noqa: E731
    model = build_model(model_cfg, cfg.seed)
    trainer = Trainer(model, dataset, cfg)
    start = 0
    if resume is not None:
        ck = ckpt_io.load(resume)
        if ck.model_config != model_cfg:
            raise UsageError("resume checkpoint was trained with a different model configuration")
        trainer.restore(ck)
        start = trainer.iteration
    end = cfg.total_iters if stop_at is None else min(stop_at, cfg.total_iters)
    ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME) if out_dir else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    try:
        while trainer.iteration < end:
            loss = trainer.step()
            it = trainer.iteration
            if cfg.log_every and (it % cfg.log_every == 0 or it == end):
                log(f"iter {it} loss {loss:.6g} lr {lr_schedule(it - 1, cfg):.3g}")
            if ckpt_path and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                ckpt_io.save(trainer.checkpoint(), ckpt_path)
                _write_curve(os.path.join(out_dir, CURVE_NAME), trainer.history, start)
    except NonFiniteError:
        if ckpt_path:
            ckpt_io.save(trainer.checkpoint(), ckpt_path)
            _write_curve(os.path.join(out_dir, CURVE_NAME), trainer.history, start)
        raise
    if ckpt_path:
        ckpt_io.save(trainer.checkpoint(), ckpt_path)
        _write_curve(os.path.join(out_dir, CURVE_NAME), trainer.history, start)
    return trainer
