"""The five network architectures of the fast-simulation pipeline.

Shapes are fixed by the 44x44 response grid and the 9-attribute condition
vector. Padding per network is the unique assignment that makes the
documented layer widths come out: stride-2 "same" convolutions halve the
encoder/discriminator trace 44 -> 22 -> 11 (-> 6), while the generator and
all output heads use "valid" convolutions to land exactly on 44.
"""

from __future__ import annotations

import math

import numpy as np

from .detector import GRID_SIZE, N_ATTRIBUTES
from .errors import ShapeError
from .nn import Parameter, Tensor, ops

COND_DIM = N_ATTRIBUTES
LATENT_DIM = 10
LEAKY_SLOPE = 0.2
DROPOUT_P = 0.2


def _glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Dense:
    def __init__(self, prefix: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = Parameter(f"{prefix}.weight", _glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self.bias = Parameter(f"{prefix}.bias", np.zeros(n_out, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)

    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def state_items(self):
        return [(p.name, p.data) for p in self.params()]


class Conv2d:
    def __init__(self, prefix: str, c_in: int, c_out: int, k: int,
                 stride: int, padding: str, rng: np.random.Generator):
        fan_in = c_in * k * k
        fan_out = c_out * k * k
        self.weight = Parameter(f"{prefix}.weight",
                                _glorot_uniform(rng, (c_out, c_in, k, k), fan_in, fan_out))
        self.bias = Parameter(f"{prefix}.bias", np.zeros(c_out, dtype=np.float32))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def state_items(self):
        return [(p.name, p.data) for p in self.params()]


class BatchNorm2d:
    def __init__(self, prefix: str, channels: int):
        self.prefix = prefix
        self.gamma = Parameter(f"{prefix}.weight", np.ones(channels, dtype=np.float32))
        self.beta = Parameter(f"{prefix}.bias", np.zeros(channels, dtype=np.float32))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta,
                             self.running_mean, self.running_var, train=train)

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def state_items(self):
        return [(self.gamma.name, self.gamma.data), (self.beta.name, self.beta.data),
                (f"{self.prefix}.running_mean", self.running_mean),
                (f"{self.prefix}.running_var", self.running_var)]


class _Net:
    """Common parameter bookkeeping for the concrete networks."""

    def __init__(self):
        self._modules = []

    def parameters(self) -> list[Parameter]:
        out = []
        for m in self._modules:
            out.extend(m.params())
        return out

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for m in self._modules:
            out.extend(m.state_items())
        return out

    def load_state(self, arrays: dict[str, np.ndarray]):
        for name, current in self.state_items():
            if name not in arrays:
                raise ShapeError(f"missing parameter {name!r} in weights")
            value = np.asarray(arrays[name], dtype=np.float32)
            if value.shape != current.shape:
                raise ShapeError(f"parameter {name!r}: expected shape {current.shape}, got {value.shape}")
            current[...] = value

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False


def _check_cond(cond: Tensor):
    if cond.ndim != 2 or cond.shape[1] != COND_DIM:
        raise ShapeError(f"condition vector must be [B,{COND_DIM}], got {cond.shape}")


def _check_image(x: Tensor):
    if x.ndim != 4 or x.shape[1:] != (1, GRID_SIZE, GRID_SIZE):
        raise ShapeError(f"response input must be [B,1,{GRID_SIZE},{GRID_SIZE}], got {x.shape}")


class ClassifierNet(_Net):
    """Zero vs non-zero response gate on the 9 standardized attributes."""

    kind = "classifier"

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Dense("classifier.0", COND_DIM, 124, rng)
        self.fc2 = Dense("classifier.1", 124, 64, rng)
        self.fc3 = Dense("classifier.2", 64, 1, rng)
        self._modules = [self.fc1, self.fc2, self.fc3]

    def forward(self, cond: Tensor) -> Tensor:
        _check_cond(cond)
        h = ops.relu(self.fc1(cond))
        h = ops.relu(self.fc2(h))
        return ops.sigmoid(self.fc3(h))

    __call__ = forward


class EncoderNet(_Net):
    """Response image + condition -> latent Gaussian (mu, logvar)."""

    kind = "encoder"
    FLAT = 6 * 6 * 128

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d("encoder.0", 1, 32, 4, 2, "same", rng)
        self.conv2 = Conv2d("encoder.1", 32, 64, 4, 2, "same", rng)
        self.conv3 = Conv2d("encoder.2", 64, 128, 4, 2, "same", rng)
        self.fc = Dense("encoder.3", self.FLAT + COND_DIM, 32, rng)
        self.fc_mu = Dense("encoder.4", 32, LATENT_DIM, rng)
        self.fc_logvar = Dense("encoder.5", 32, LATENT_DIM, rng)
        self._modules = [self.conv1, self.conv2, self.conv3, self.fc, self.fc_mu, self.fc_logvar]

    def forward(self, x: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        _check_image(x)
        _check_cond(cond)
        h = ops.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        h = ops.leaky_relu(self.conv2(h), LEAKY_SLOPE)
        h = ops.leaky_relu(self.conv3(h), LEAKY_SLOPE)
        h = ops.concat(ops.flatten(h), cond)
        h = ops.leaky_relu(self.fc(h), LEAKY_SLOPE)
        return self.fc_mu(h), self.fc_logvar(h)

    __call__ = forward


class DecoderNet(_Net):
    """Latent + condition -> non-negative normalized response image."""

    kind = "decoder"

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.fc = Dense("decoder.0", LATENT_DIM + COND_DIM, 4608, rng)
        self.conv1 = Conv2d("decoder.1", 128, 128, 4, 1, "same", rng)
        self.bn1 = BatchNorm2d("decoder.2", 128)
        self.conv2 = Conv2d("decoder.3", 128, 64, 4, 1, "same", rng)
        self.bn2 = BatchNorm2d("decoder.4", 64)
        self.conv3 = Conv2d("decoder.5", 64, 32, 4, 1, "same", rng)
        self.bn3 = BatchNorm2d("decoder.6", 32)
        self.head = Conv2d("decoder.7", 32, 1, 5, 1, "valid", rng)
        self._modules = [self.fc, self.conv1, self.bn1, self.conv2, self.bn2,
                         self.conv3, self.bn3, self.head]

    def forward(self, z: Tensor, cond: Tensor, train: bool) -> Tensor:
        _check_cond(cond)
        if z.ndim != 2 or z.shape[1] != LATENT_DIM:
            raise ShapeError(f"latent must be [B,{LATENT_DIM}], got {z.shape}")
        h = self.fc(ops.concat(z, cond))
        h = ops.reshape(h, (z.shape[0], 128, 6, 6))
        for conv, bn in ((self.conv1, self.bn1), (self.conv2, self.bn2), (self.conv3, self.bn3)):
            h = ops.upsample_nearest2x(h)
            h = ops.leaky_relu(bn(conv(h), train), LEAKY_SLOPE)
        return ops.relu(self.head(h))

    __call__ = forward


class GeneratorNet(_Net):
    """Noise + condition -> non-negative normalized response image."""

    kind = "generator"

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Dense("generator.0", LATENT_DIM + COND_DIM, 256, rng)
        self.fc2 = Dense("generator.1", 256, 21632, rng)
        self.conv1 = Conv2d("generator.2", 128, 128, 3, 1, "valid", rng)
        self.bn1 = BatchNorm2d("generator.3", 128)
        self.conv2 = Conv2d("generator.4", 128, 64, 3, 1, "valid", rng)
        self.bn2 = BatchNorm2d("generator.5", 64)
        self.head = Conv2d("generator.6", 64, 1, 3, 1, "valid", rng)
        self._modules = [self.fc1, self.fc2, self.conv1, self.bn1, self.conv2, self.bn2, self.head]

    def forward(self, noise: Tensor, cond: Tensor, train: bool,
                rng: np.random.Generator | None = None) -> Tensor:
        _check_cond(cond)
        if noise.ndim != 2 or noise.shape[1] != LATENT_DIM:
            raise ShapeError(f"noise must be [B,{LATENT_DIM}], got {noise.shape}")
        h = ops.concat(noise, cond)
        h = ops.leaky_relu(ops.dropout(self.fc1(h), DROPOUT_P, train, rng), LEAKY_SLOPE)
        h = ops.leaky_relu(ops.dropout(self.fc2(h), DROPOUT_P, train, rng), LEAKY_SLOPE)
        h = ops.reshape(h, (noise.shape[0], 128, 13, 13))
        for conv, bn in ((self.conv1, self.bn1), (self.conv2, self.bn2)):
            h = ops.upsample_nearest2x(h)
            h = ops.leaky_relu(bn(conv(h), train), LEAKY_SLOPE)
        return ops.relu(self.head(h))

    __call__ = forward


class DiscriminatorNet(_Net):
    """Response image + condition -> probability the pair is real."""

    kind = "discriminator"
    FLAT = 11 * 11 * 16

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d("discriminator.0", 1, 32, 4, 2, "same", rng)
        self.conv2 = Conv2d("discriminator.1", 32, 16, 4, 2, "same", rng)
        self.fc1 = Dense("discriminator.2", self.FLAT + COND_DIM, 128, rng)
        self.fc2 = Dense("discriminator.3", 128, 64, rng)
        self.fc3 = Dense("discriminator.4", 64, 1, rng)
        self._modules = [self.conv1, self.conv2, self.fc1, self.fc2, self.fc3]

    def forward(self, x: Tensor, cond: Tensor, train: bool,
                rng: np.random.Generator | None = None) -> Tensor:
        _check_image(x)
        _check_cond(cond)
        h = ops.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        h = ops.leaky_relu(self.conv2(h), LEAKY_SLOPE)
        h = ops.concat(ops.flatten(h), cond)
        h = ops.dropout(ops.leaky_relu(self.fc1(h), LEAKY_SLOPE), DROPOUT_P, train, rng)
        h = ops.dropout(ops.leaky_relu(self.fc2(h), LEAKY_SLOPE), DROPOUT_P, train, rng)
        return ops.sigmoid(self.fc3(h))

    __call__ = forward


class AuxRegressorNet(_Net):
    """Response image -> (row, col) of the photon-count maximum.

    Same body as the discriminator but without the condition concat: the
    position readout must depend on the image alone.
    """

    kind = "regressor"
    FLAT = 11 * 11 * 16

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d("regressor.0", 1, 32, 4, 2, "same", rng)
        self.conv2 = Conv2d("regressor.1", 32, 16, 4, 2, "same", rng)
        self.fc1 = Dense("regressor.2", self.FLAT, 128, rng)
        self.fc2 = Dense("regressor.3", 128, 64, rng)
        self.fc3 = Dense("regressor.4", 64, 2, rng)
        self._modules = [self.conv1, self.conv2, self.fc1, self.fc2, self.fc3]

    def forward(self, x: Tensor, train: bool,
                rng: np.random.Generator | None = None) -> Tensor:
        _check_image(x)
        h = ops.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        h = ops.leaky_relu(self.conv2(h), LEAKY_SLOPE)
        h = ops.flatten(h)
        h = ops.dropout(ops.leaky_relu(self.fc1(h), LEAKY_SLOPE), DROPOUT_P, train, rng)
        h = ops.dropout(ops.leaky_relu(self.fc2(h), LEAKY_SLOPE), DROPOUT_P, train, rng)
        return ops.relu(self.fc3(h))

    __call__ = forward


class VaeModel:
    kind = "vae"

    def __init__(self, encoder: EncoderNet, decoder: DecoderNet):
        self.encoder = encoder
        self.decoder = decoder

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def state_items(self):
        return self.encoder.state_items() + self.decoder.state_items()

    def load_state(self, arrays):
        self.encoder.load_state(arrays)
        self.decoder.load_state(arrays)


class GanModel:
    kind = "gan"

    def __init__(self, generator: GeneratorNet, discriminator: DiscriminatorNet):
        self.generator = generator
        self.discriminator = discriminator

    def parameters(self):
        return self.generator.parameters() + self.discriminator.parameters()

    def state_items(self):
        return self.generator.state_items() + self.discriminator.state_items()

    def load_state(self, arrays):
        self.generator.load_state(arrays)
        self.discriminator.load_state(arrays)


def _child_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def build_classifier(seed: int) -> ClassifierNet:
    return ClassifierNet(np.random.default_rng(seed))


def build_regressor(seed: int) -> AuxRegressorNet:
    return AuxRegressorNet(np.random.default_rng(seed))


def build_vae(seed: int) -> VaeModel:
    enc_rng, dec_rng = _child_rngs(seed, 2)
    return VaeModel(EncoderNet(enc_rng), DecoderNet(dec_rng))


def build_gan(seed: int) -> GanModel:
    gen_rng, dis_rng = _child_rngs(seed, 2)
    return GanModel(GeneratorNet(gen_rng), DiscriminatorNet(dis_rng))


def build_model(kind: str, seed: int):
    builders = {"classifier": build_classifier, "regressor": build_regressor,
                "vae": build_vae, "gan": build_gan}
    if kind not in builders:
        raise ShapeError(f"unknown model kind {kind!r}")
    return builders[kind](seed)
