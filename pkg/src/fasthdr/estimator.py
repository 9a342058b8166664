"""scikit-learn style wrapper: fit on SDR/HDR image pairs, predict HDR images."""
from __future__ import annotations

from dataclasses import replace
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from . import checkpoint as ckpt_io
from . import metrics
from .auct import AuctConfig
from .data import PairedDataset, PairedSample
from .le import LeConfig
from .model import ModelConfig, Pipeline, predict_image
from .training import PRESETS, train
from .validation import check_images, check_pairs


class SdrToHdrRegressor(RegressorMixin, BaseEstimator):
    """SDR (BT.709 gamma) to HDR (BT.2020 PQ) translation.

    ``X`` and ``y`` are N x 3 x H x W arrays (or lists of 3 x H x W arrays)
    in [0, 1]. ``score`` is the mean PSNR in dB, not R^2.
    """

    def __init__(self, base_channels: int = 128, cond_channels: int = 32, n_blocks: int = 4,
                 le_width: int = 16, use_le: bool = True, iterations: int = 2000, lr: float = 1e-3,
                 batch_size: int = 4, crop: int = 64, loss_weight: float = 1.0, random_state: int = 0,
                 tile: Optional[int] = None, halo: Optional[int] = None, verbose: bool = False):
        self.base_channels = base_channels
        self.cond_channels = cond_channels
        self.n_blocks = n_blocks
        self.le_width = le_width
        self.use_le = use_le
        self.iterations = iterations
        self.lr = lr
        self.batch_size = batch_size
        self.crop = crop
        self.loss_weight = loss_weight
        self.random_state = random_state
        self.tile = tile
        self.halo = halo
        self.verbose = verbose

    def _model_config(self) -> ModelConfig:
        return ModelConfig(AuctConfig(base_channels=self.base_channels, cond_channels=self.cond_channels,
                                      n_blocks=self.n_blocks),
                           LeConfig(width=self.le_width), self.use_le)

    def _train_config(self):
        return replace(PRESETS["desk"], crop=self.crop, batch=self.batch_size, lr0=self.lr,
                       loss_weight=self.loss_weight, total_iters=self.iterations,
                       seed=self.random_state, log_every=100 if self.verbose else 0)

    def fit(self, X, y):
        xs, ys = check_pairs(X, y)
        samples = [PairedSample(a, b, f"pair{i}") for i, (a, b) in enumerate(zip(xs, ys))]
        cfg = self._model_config()
        trainer = train(PairedDataset(samples, cfg.auct.cond_downscale), cfg, self._train_config(),
                        log=print if self.verbose else (lambda msg: None))
        self.model_ = trainer.model.eval()
        self.loss_curve_ = [loss for _, loss in trainer.history]
        self.n_iter_ = trainer.iteration
        self.n_params_ = self.model_.num_parameters()
        return self

    def _check_fitted(self) -> Pipeline:
        if not hasattr(self, "model_"):
            raise NotFittedError("SdrToHdrRegressor is not fitted yet; call fit or load a checkpoint")
        return self.model_

    def predict(self, X, stage: str = "full") -> List[np.ndarray] | np.ndarray:
        model = self._check_fitted()
        xs = check_images(X)
        out = [predict_image(model, x, stage=stage, tile=self.tile, halo=self.halo) for x in xs]
        if isinstance(X, np.ndarray):
            return np.stack(out)
        return out

    def score(self, X, y, sample_weight=None) -> float:
        xs, ys = check_pairs(X, y)
        preds = self.predict(xs)
        values = np.array([metrics.psnr(p, t) for p, t in zip(preds, ys)])
        return float(np.average(values, weights=sample_weight))

    def save(self, path):
        ckpt_io.save(ckpt_io.from_model(self._check_fitted(), iteration=getattr(self, "n_iter_", 0),
                                        seed=self.random_state), path)

    @classmethod
    def load(cls, path) -> "SdrToHdrRegressor":
        model = ckpt_io.load_model(path)
        c = model.cfg
        est = cls(base_channels=c.auct.base_channels, cond_channels=c.auct.cond_channels,
                  n_blocks=c.auct.n_blocks, le_width=c.le.width, use_le=c.use_le)
        est.model_ = model
        est.n_params_ = model.num_parameters()
        return est
