"""Convolutional-LSTM adversarial autoencoder.

Encoder: two 3x3 same-padding convolutions (ReLU) over the [time, feature]
grid, an LSTM over the 8 time rows, and a linear projection of the final
hidden state to the latent space. Decoder: dense layer, two transposed
convolutions (ReLU, tanh) and an affine map of the tanh output onto [0, 1].
Discriminator: three dense layers (ReLU, ReLU, sigmoid) on latent codes.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    LSTMWeights, Tensor, adversarial_loss, as_tensor, conv2d, conv2d_transpose, lstm_sequence, mse_loss, ops,
    uniform_fan_in, zeros,
)
from .schema import N_FEATURES, SCHEMA_VERSION

ENCODER_LAYERS = ("enc_conv1", "enc_conv2", "enc_lstm", "enc_fc")
DECODER_LAYERS = ("dec_fc", "dec_tconv1", "dec_tconv2")
DISCRIMINATOR_LAYERS = ("disc_fc1", "disc_fc2", "disc_fc3")
LAYER_ORDER = ENCODER_LAYERS + DECODER_LAYERS + DISCRIMINATOR_LAYERS
GENERATOR_LAYERS = ENCODER_LAYERS + DECODER_LAYERS

SIGN_CONVENTIONS = ("standard", "paper")


@dataclass
class HyperParams:
    ntimes: int = 8
    n_features: int = N_FEATURES
    latent_dim: int = 1000
    lambda_adv: float = 1.0
    conv1_channels: int = 16
    conv2_channels: int = 32
    kernel_size: int = 3
    lstm_hidden: int = 256
    disc_widths: tuple[int, int] = (512, 256)
    adv_sign_convention: str = "standard"

    def __post_init__(self):
        self.disc_widths = tuple(int(w) for w in self.disc_widths)
        if self.n_features != N_FEATURES:
            raise ConfigError(f"model width {self.n_features} does not match the {N_FEATURES}-feature schema")
        if self.latent_dim < 1 or self.ntimes < 2 or self.lstm_hidden < 1:
            raise ConfigError("latent_dim, lstm_hidden must be >= 1 and ntimes >= 2")
        if self.lambda_adv < 0:
            raise ConfigError("lambda_adv must be >= 0")
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd to preserve the time axis")
        if self.adv_sign_convention not in SIGN_CONVENTIONS:
            raise ConfigError(f"adv_sign_convention must be one of {SIGN_CONVENTIONS}")

    @property
    def padding(self) -> int:
        return self.kernel_size // 2


@dataclass
class AaeParams:
    """All learnable tensors, grouped by named layer."""

    hp: HyperParams
    layers: dict[str, dict[str, Tensor]]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.layers) != LAYER_ORDER:
            raise ConfigError(f"layer groups must be exactly {LAYER_ORDER}")

    def parameters(self, names=LAYER_ORDER) -> list[Tensor]:
        return [t for n in names for t in self.layers[n].values()]

    def named_tensors(self):
        for layer in LAYER_ORDER:
            for key, t in self.layers[layer].items():
                yield f"{layer}.{key}", t

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def copy(self) -> "AaeParams":
        return copy.deepcopy(self)

    def encode(self, x) -> Tensor:
        return encode(self, x)

    def decode(self, z) -> Tensor:
        return decode(self, z)

    def discriminate(self, z) -> Tensor:
        return discriminate(self, z)

    def reconstruct(self, x) -> Tensor:
        return decode(self, encode(self, x))


def init_params(hp: HyperParams | None = None, seed: int = 0, zero: bool = False) -> AaeParams:
    """Seeded fan-in uniform initialisation (or all zeros)."""
    hp = hp or HyperParams()
    rng = np.random.default_rng(seed)
    k, t, f = hp.kernel_size, hp.ntimes, hp.n_features
    c1, c2, n = hp.conv1_channels, hp.conv2_channels, hp.lstm_hidden
    d1, d2 = hp.disc_widths

    def p(name, shape, fan_in):
        return zeros(shape, name) if zero else uniform_fan_in(shape, fan_in, rng, name)

    def dense(name, n_in, n_out):
        return {"W": p(f"{name}.W", (n_in, n_out), n_in), "b": p(f"{name}.b", (n_out,), n_in)}

    layers = {
        "enc_conv1": {"W": p("enc_conv1.W", (c1, 1, k, k), k * k), "b": p("enc_conv1.b", (c1,), k * k)},
        "enc_conv2": {"W": p("enc_conv2.W", (c2, c1, k, k), c1 * k * k), "b": p("enc_conv2.b", (c2,), c1 * k * k)},
        "enc_lstm": {
            "W": p("enc_lstm.W", (c2 * f, 4 * n), c2 * f),
            "U": p("enc_lstm.U", (n, 4 * n), n),
            "b": p("enc_lstm.b", (4 * n,), n),
        },
        "enc_fc": dense("enc_fc", n, hp.latent_dim),
        "dec_fc": dense("dec_fc", hp.latent_dim, c2 * t * f),
        # transposed-conv kernels use the conv layout [in_of_decoder_layer, out, k, k]
        "dec_tconv1": {"W": p("dec_tconv1.W", (c2, c1, k, k), c2 * k * k), "b": p("dec_tconv1.b", (c1,), c2 * k * k)},
        "dec_tconv2": {"W": p("dec_tconv2.W", (c1, 1, k, k), c1 * k * k), "b": p("dec_tconv2.b", (1,), c1 * k * k)},
        "disc_fc1": dense("disc_fc1", hp.latent_dim, d1),
        "disc_fc2": dense("disc_fc2", d1, d2),
        "disc_fc3": dense("disc_fc3", d2, 1),
    }
    meta = {"schema_version": SCHEMA_VERSION, "seed": int(seed), "hyperparams": asdict(hp)}
    return AaeParams(hp, layers, meta)


def _bias4(b: Tensor) -> Tensor:
    return ops.reshape(b, (1, b.shape[0], 1, 1))


def _dense(x: Tensor, layer: dict) -> Tensor:
    return ops.add(ops.matmul(x, layer["W"]), layer["b"])


def encode(params: AaeParams, x) -> Tensor:
    """[batch, ntimes, features] -> latent [batch, latent_dim]."""
    hp, L = params.hp, params.layers
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1:] != (hp.ntimes, hp.n_features):
        raise DimensionError(f"encode expects [batch, {hp.ntimes}, {hp.n_features}], got {x.shape}")
    b, t, f = x.shape
    h = ops.reshape(x, (b, 1, t, f))
    h = ops.relu(ops.add(conv2d(h, L["enc_conv1"]["W"], 1, hp.padding), _bias4(L["enc_conv1"]["b"])))
    h = ops.relu(ops.add(conv2d(h, L["enc_conv2"]["W"], 1, hp.padding), _bias4(L["enc_conv2"]["b"])))
    seq = ops.reshape(ops.transpose(h, (0, 2, 1, 3)), (b, t, hp.conv2_channels * f))
    w = LSTMWeights(L["enc_lstm"]["W"], L["enc_lstm"]["U"], L["enc_lstm"]["b"])
    state, _ = lstm_sequence(seq, w)
    return ops.linear(_dense(state, L["enc_fc"]))


def decode(params: AaeParams, z) -> Tensor:
    """latent [batch, latent_dim] -> reconstruction [batch, ntimes, features] in [0, 1]."""
    hp, L = params.hp, params.layers
    z = as_tensor(z)
    if z.ndim != 2 or z.shape[1] != hp.latent_dim:
        raise DimensionError(f"decode expects [batch, {hp.latent_dim}], got {z.shape}")
    b = z.shape[0]
    h = ops.reshape(_dense(z, L["dec_fc"]), (b, hp.conv2_channels, hp.ntimes, hp.n_features))
    h = ops.relu(ops.add(conv2d_transpose(h, L["dec_tconv1"]["W"], 1, hp.padding), _bias4(L["dec_tconv1"]["b"])))
    h = ops.tanh(ops.add(conv2d_transpose(h, L["dec_tconv2"]["W"], 1, hp.padding), _bias4(L["dec_tconv2"]["b"])))
    out = ops.mul(ops.add(h, 1.0), 0.5)
    return ops.reshape(out, (b, hp.ntimes, hp.n_features))


def discriminate(params: AaeParams, z) -> Tensor:
    """latent [batch, latent_dim] -> probability of being a prior sample [batch, 1]."""
    hp, L = params.hp, params.layers
    z = as_tensor(z)
    if z.ndim != 2 or z.shape[1] != hp.latent_dim:
        raise DimensionError(f"discriminate expects [batch, {hp.latent_dim}], got {z.shape}")
    h = ops.relu(_dense(z, L["disc_fc1"]))
    h = ops.relu(_dense(h, L["disc_fc2"]))
    return ops.sigmoid(_dense(h, L["disc_fc3"]))


def sample_prior(batch: int, latent_dim: int = 1000, seed=None) -> Tensor:
    """Standard-normal latent samples; ``seed`` may be an int or a Generator."""
    if batch < 1:
        raise DimensionError("sample_prior: batch must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Tensor(rng.standard_normal((batch, latent_dim)))


def adversarial_terms(d_prior: Tensor, d_encoded: Tensor, convention: str = "standard") -> Tensor:
    """Discriminator loss under the chosen labelling of prior vs encoder samples."""
    if convention == "standard":
        return adversarial_loss(d_prior, d_encoded)
    return adversarial_loss(d_encoded, d_prior)


def total_loss(x, x_hat, d_real, d_fake, lambda_adv: float = 1.0) -> Tensor:
    """``mse(x, x_hat) + lambda_adv * adversarial_loss(d_real, d_fake)``."""
    rec = mse_loss(as_tensor(x_hat), as_tensor(x))
    if lambda_adv == 0:
        return rec
    return ops.add(rec, ops.mul(adversarial_loss(d_real, d_fake), float(lambda_adv)))
