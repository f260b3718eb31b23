"""Training loops for the classifier, auxiliary regressor, VAE and GAN.

Networks train on standardized inputs: conditions are z-scored per
attribute, responses are log1p-compressed and divided by the dataset's
pixel scale. Photon counts are recovered at inference with expm1. All
randomness flows from the seed in TrainConfig; identical (seed, config,
data) reproduce every logged loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataio import NormStats, SampleSet
from .detector import argmax_coords_batch
from .errors import ValidationError
from .models import (AuxRegressorNet, ClassifierNet, GanModel, VaeModel,
                     build_classifier, build_gan, build_regressor, build_vae)
from .metrics import classification_report
from .nn import Adam, Tensor, ops

GAN_BETA1 = 0.5


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr_classifier: float = 1e-3
    lr_regressor: float = 1e-3
    lr_vae: float = 1e-3
    lr_gan: float = 2e-4
    lambda_aux: float = 1.0
    beta_kl: float = 1.0
    seed: int = 0
    pixel_scale: float | None = None  # None: use the dataset's stored scale

    def __post_init__(self):
        if self.lambda_aux < 0 or self.beta_kl < 0:
            raise ValidationError("lambda_aux and beta_kl must be non-negative")
        if self.pixel_scale is not None and self.pixel_scale <= 0:
            raise ValidationError("pixel_scale must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr_classifier": self.lr_classifier, "lr_regressor": self.lr_regressor,
                "lr_vae": self.lr_vae, "lr_gan": self.lr_gan,
                "lambda_aux": self.lambda_aux, "beta_kl": self.beta_kl,
                "seed": self.seed, "pixel_scale": self.pixel_scale}


@dataclass
class TrainLog:
    model: str
    seed: int
    config: dict
    epochs: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add_epoch(self, epoch: int, losses: dict, seconds: float):
        self.epochs.append({"epoch": epoch, "losses": losses, "seconds": seconds})

    def loss_series(self, key: str) -> list[float]:
        return [e["losses"][key] for e in self.epochs]

    def to_dict(self) -> dict:
        return {"model": self.model, "seed": self.seed, "config": self.config,
                "epochs": self.epochs, "extra": self.extra}


def encode_conditions(particles: np.ndarray, norm: NormStats) -> np.ndarray:
    mean = np.asarray(norm.cond_mean, dtype=np.float32)
    std = np.maximum(np.asarray(norm.cond_std, dtype=np.float32), np.float32(1e-6))
    return ((np.asarray(particles, dtype=np.float32) - mean) / std).astype(np.float32)


def normalize_responses(counts: np.ndarray, pixel_scale: float) -> np.ndarray:
    return np.log1p(np.asarray(counts, dtype=np.float32)) * np.float32(1.0 / pixel_scale)


def denormalize_responses(normalized: np.ndarray, pixel_scale: float) -> np.ndarray:
    return np.expm1(np.asarray(normalized, dtype=np.float32) * np.float32(pixel_scale))


def _derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(tag,)).generate_state(1, np.uint64)[0])


def _minibatches(indices: np.ndarray, batch_size: int):
    for start in range(0, indices.size, batch_size):
        yield indices[start:start + batch_size]


def _check_finite(value: float, what: str):
    if not np.isfinite(value):
        raise RuntimeError(f"training diverged: {what} is not finite")


def _pixel_scale(data: SampleSet, cfg: TrainConfig) -> float:
    return cfg.pixel_scale if cfg.pixel_scale is not None else data.norm.pixel_scale


def train_classifier(data: SampleSet, cfg: TrainConfig) -> tuple[ClassifierNet, TrainLog]:
    """Fit the zero/non-zero gate with binary cross-entropy."""
    conds = encode_conditions(data.particles, data.norm)
    targets = (~data.labels).astype(np.float32)  # 1 = non-zero response
    train_idx = data.train_idx
    if targets[train_idx].min() == targets[train_idx].max():
        raise ValidationError("classifier training requires both classes in the training split")

    net = build_classifier(_derived_seed(cfg.seed, 10))
    opt = Adam(net.parameters(), lr=cfg.lr_classifier)
    rng = np.random.default_rng(_derived_seed(cfg.seed, 11))
    log = TrainLog(model="classifier", seed=cfg.seed, config=cfg.to_dict())

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = train_idx[rng.permutation(train_idx.size)]
        total, count = 0.0, 0
        for batch in _minibatches(order, cfg.batch_size):
            x = Tensor(conds[batch])
            t = targets[batch][:, None]
            loss = ops.bce(net(x), t)
            _check_finite(loss.item(), "classifier loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * batch.size
            count += batch.size
        log.add_epoch(epoch, {"bce": total / count}, time.perf_counter() - t0)

    probs = predict_classifier(net, conds[data.val_idx])
    report = classification_report(probs, (~data.labels[data.val_idx]).astype(int))
    log.extra["validation"] = report.to_dict()
    return net, log


def predict_classifier(net: ClassifierNet, conds_std: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    out = np.empty(conds_std.shape[0], dtype=np.float32)
    with nn.no_grad():
        for start in range(0, conds_std.shape[0], batch_size):
            chunk = conds_std[start:start + batch_size]
            out[start:start + batch_size] = net(Tensor(chunk)).data[:, 0]
    return out


def pretrain_regressor(data: SampleSet, cfg: TrainConfig) -> tuple[AuxRegressorNet, TrainLog]:
    """Fit the shower-maximum coordinate readout on non-zero responses.

    Targets are argmax (row, col) in pixel units, precomputed once over the
    raw counts; the caller freezes the result before GAN training.
    """
    scale = _pixel_scale(data, cfg)
    nz_train = data.nonzero_indices(data.train_idx)
    nz_val = data.nonzero_indices(data.val_idx)
    if nz_train.size == 0:
        raise ValidationError("regressor training requires non-zero responses")

    x_train = normalize_responses(np.asarray(data.responses[nz_train]), scale)
    y_train = argmax_coords_batch(np.asarray(data.responses[nz_train]))
    net = build_regressor(_derived_seed(cfg.seed, 20))
    opt = Adam(net.parameters(), lr=cfg.lr_regressor)
    rng = np.random.default_rng(_derived_seed(cfg.seed, 21))
    log = TrainLog(model="regressor", seed=cfg.seed, config=cfg.to_dict())

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(nz_train.size)
        total, count = 0.0, 0
        for batch in _minibatches(order, cfg.batch_size):
            x = Tensor(x_train[batch].reshape(-1, 1, 44, 44))
            loss = ops.mse(net.forward(x, train=True, rng=rng), y_train[batch])
            _check_finite(loss.item(), "regressor loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * batch.size
            count += batch.size
        log.add_epoch(epoch, {"mse": total / count}, time.perf_counter() - t0)

    if nz_val.size > 0:
        x_val = normalize_responses(np.asarray(data.responses[nz_val]), scale)
        y_val = argmax_coords_batch(np.asarray(data.responses[nz_val]))
        pred = predict_regressor(net, x_val)
        log.extra["validation"] = {"mae_pixels": float(np.mean(np.abs(pred - y_val)))}
    return net, log


def predict_regressor(net: AuxRegressorNet, x_norm: np.ndarray, batch_size: int = 512) -> np.ndarray:
    out = np.empty((x_norm.shape[0], 2), dtype=np.float32)
    with nn.no_grad():
        for start in range(0, x_norm.shape[0], batch_size):
            chunk = x_norm[start:start + batch_size].reshape(-1, 1, 44, 44)
            out[start:start + batch_size] = net.forward(Tensor(chunk), train=False).data
    return out


def train_vae(data: SampleSet, cfg: TrainConfig) -> tuple[VaeModel, TrainLog]:
    """Fit the conditional VAE on non-zero responses.

    Loss is MSE reconstruction in normalized space plus beta_kl times the
    KL of the encoded Gaussian against the standard normal, with the usual
    reparameterized latent draw.
    """
    scale = _pixel_scale(data, cfg)
    nz_train = data.nonzero_indices(data.train_idx)
    if nz_train.size == 0:
        raise ValidationError("VAE training requires non-zero responses")

    conds = encode_conditions(data.particles, data.norm)
    x_train = normalize_responses(np.asarray(data.responses[nz_train]), scale)
    c_train = conds[nz_train]
    vae = build_vae(_derived_seed(cfg.seed, 30))
    opt = Adam(vae.parameters(), lr=cfg.lr_vae)
    rng = np.random.default_rng(_derived_seed(cfg.seed, 31))
    log = TrainLog(model="vae", seed=cfg.seed, config=cfg.to_dict())

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(nz_train.size)
        sums = {"total": 0.0, "recon": 0.0, "kl": 0.0}
        count = 0
        for batch in _minibatches(order, cfg.batch_size):
            x_raw = x_train[batch].reshape(-1, 1, 44, 44)
            x = Tensor(x_raw)
            c = Tensor(c_train[batch])
            mu, logvar = vae.encoder(x, c)
            eps = Tensor(rng.standard_normal(mu.shape).astype(np.float32))
            z = mu + nn.exp(logvar * 0.5) * eps
            xhat = vae.decoder(z, c, train=True)
            recon = ops.mse(xhat, x_raw)
            kl = ops.kl_diag_gauss(mu, logvar)
            loss = recon + cfg.beta_kl * kl
            _check_finite(loss.item(), "VAE loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["total"] += loss.item() * batch.size
            sums["recon"] += recon.item() * batch.size
            sums["kl"] += kl.item() * batch.size
            count += batch.size
        log.add_epoch(epoch, {k: v / count for k, v in sums.items()}, time.perf_counter() - t0)
    return vae, log


def train_gan(data: SampleSet, cfg: TrainConfig,
              regressor: AuxRegressorNet | None = None) -> tuple[GanModel, TrainLog]:
    """Adversarial training on non-zero responses, 1:1 alternating updates.

    When a pretrained regressor is given it stays frozen and adds
    lambda_aux * MSE between the coordinates read off the generated image
    and the argmax of the real sample whose condition drove the generation.
    Training noise is standard normal; the inference noise scale is a
    calibration concern, not a training one.
    """
    scale = _pixel_scale(data, cfg)
    nz_train = data.nonzero_indices(data.train_idx)
    if nz_train.size == 0:
        raise ValidationError("GAN training requires non-zero responses")

    conds = encode_conditions(data.particles, data.norm)
    x_train = normalize_responses(np.asarray(data.responses[nz_train]), scale)
    c_train = conds[nz_train]
    coords = argmax_coords_batch(np.asarray(data.responses[nz_train]))

    if regressor is not None:
        regressor.freeze()

    gan = build_gan(_derived_seed(cfg.seed, 40))
    opt_g = Adam(gan.generator.parameters(), lr=cfg.lr_gan, beta1=GAN_BETA1)
    opt_d = Adam(gan.discriminator.parameters(), lr=cfg.lr_gan, beta1=GAN_BETA1)
    rng = np.random.default_rng(_derived_seed(cfg.seed, 41))
    log = TrainLog(model="gan" if regressor is None else "gan+aux",
                   seed=cfg.seed, config=cfg.to_dict())

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(nz_train.size)
        sums = {"d_loss": 0.0, "g_adv": 0.0, "g_aux": 0.0}
        count = 0
        for batch in _minibatches(order, cfg.batch_size):
            bsz = batch.size
            x = Tensor(x_train[batch].reshape(-1, 1, 44, 44))
            c = Tensor(c_train[batch])
            ones = np.ones((bsz, 1), dtype=np.float32)
            zeros = np.zeros((bsz, 1), dtype=np.float32)

            noise = Tensor(rng.standard_normal((bsz, 10)).astype(np.float32))
            fake = gan.generator.forward(noise, c, train=True, rng=rng)

            d_real = gan.discriminator.forward(x, c, train=True, rng=rng)
            d_fake = gan.discriminator.forward(fake.detach(), c, train=True, rng=rng)
            d_loss = ops.bce(d_real, ones) + ops.bce(d_fake, zeros)
            _check_finite(d_loss.item(), "discriminator loss")
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            d_out = gan.discriminator.forward(fake, c, train=True, rng=rng)
            g_adv = ops.bce(d_out, ones)
            if regressor is not None:
                pred = regressor.forward(fake, train=False)
                g_aux = ops.mse(pred, coords[batch])
                g_loss = g_adv + cfg.lambda_aux * g_aux
                aux_val = g_aux.item()
            else:
                g_loss = g_adv
                aux_val = 0.0
            _check_finite(g_loss.item(), "generator loss")
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()

            sums["d_loss"] += d_loss.item() * bsz
            sums["g_adv"] += g_adv.item() * bsz
            sums["g_aux"] += aux_val * bsz
            count += bsz
        log.add_epoch(epoch, {k: v / count for k, v in sums.items()}, time.perf_counter() - t0)
    return gan, log
