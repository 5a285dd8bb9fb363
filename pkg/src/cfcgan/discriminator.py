"""Patch discriminator on wavelet residuals, with least-squares GAN losses.

Four convolution layers (4x4 kernels, zero-pad 1): strides 2,2,1,1 and
widths 1 -> w0 -> w1 -> w2 -> 1. Batch normalization sits after the middle
two convolutions only; LeakyReLU(0.2) follows layers 1-3. The output is a
2-D map of real-valued patch scores (no sigmoid).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch
from .tensor import BatchNormState, Tensor, batch_norm, conv2d, leaky_relu

KERNEL = 4
PAD = 1
STRIDES = (2, 2, 1, 1)
LRELU_SLOPE = 0.2


def _out_side(side: int, stride: int) -> int:
    return (side + 2 * PAD - KERNEL) // stride + 1


def score_map_shape(h: int, w: int) -> tuple[int, int]:
    """Spatial size of the patch score map for an h x w input."""
    for s in STRIDES:
        h, w = _out_side(h, s), _out_side(w, s)
    return h, w


def min_input_side() -> int:
    """Smallest input side that keeps every layer output at least 1."""
    side = 1
    for s in reversed(STRIDES):
        side = (side - 1) * s + KERNEL - 2 * PAD
    return side


class Discriminator:
    def __init__(self, widths: tuple[int, int, int] = (64, 128, 256), seed: int = 0,
                 dtype=np.float64):
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        w0, w1, w2 = widths
        self.widths = (w0, w1, w2)

        def conv_init(out_ch, in_ch):
            w = 0.02 * rng.standard_normal((out_ch, in_ch, KERNEL, KERNEL))
            return (Tensor(w.astype(dtype), requires_grad=True),
                    Tensor(np.zeros(out_ch, dtype), requires_grad=True))

        self.w1, self.b1 = conv_init(w0, 1)
        self.w2, self.b2 = conv_init(w1, w0)
        self.bn2 = BatchNormState.create(w1, dtype)
        self.w3, self.b3 = conv_init(w2, w1)
        self.bn3 = BatchNormState.create(w2, dtype)
        self.w4, self.b4 = conv_init(1, w2)

    def forward(self, r: Tensor, mode: str = "eval") -> Tensor:
        n, c, h, w = r.data.shape
        if c != 1:
            raise ShapeMismatch(f"discriminator expects single-channel input, got {c}")
        floor = min_input_side()
        if h < floor or w < floor:
            raise ShapeMismatch(
                f"discriminator input {h}x{w} too small; minimum is {floor}x{floor}")
        t = leaky_relu(conv2d(r, self.w1, self.b1, stride=STRIDES[0], pad=PAD), LRELU_SLOPE)
        t = conv2d(t, self.w2, self.b2, stride=STRIDES[1], pad=PAD)
        t = leaky_relu(batch_norm(t, self.bn2, mode), LRELU_SLOPE)
        t = conv2d(t, self.w3, self.b3, stride=STRIDES[2], pad=PAD)
        t = leaky_relu(batch_norm(t, self.bn3, mode), LRELU_SLOPE)
        return conv2d(t, self.w4, self.b4, stride=STRIDES[3], pad=PAD)

    def named_parameters(self):
        yield "disc.conv1.w", self.w1
        yield "disc.conv1.b", self.b1
        yield "disc.conv2.w", self.w2
        yield "disc.conv2.b", self.b2
        yield "disc.bn2.gamma", self.bn2.gamma
        yield "disc.bn2.beta", self.bn2.beta
        yield "disc.conv3.w", self.w3
        yield "disc.conv3.b", self.b3
        yield "disc.bn3.gamma", self.bn3.gamma
        yield "disc.bn3.beta", self.bn3.beta
        yield "disc.conv4.w", self.w4
        yield "disc.conv4.b", self.b4

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def buffer_dict(self) -> dict[str, np.ndarray]:
        return {
            "disc.bn2.running_mean": self.bn2.running_mean,
            "disc.bn2.running_var": self.bn2.running_var,
            "disc.bn3.running_mean": self.bn3.running_mean,
            "disc.bn3.running_var": self.bn3.running_var,
        }

    def set_buffer(self, name: str, arr: np.ndarray) -> None:
        bn = {"bn2": self.bn2, "bn3": self.bn3}[name.split(".")[1]]
        setattr(bn, name.split(".")[2], arr)

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


def discriminate(r: Tensor, disc: Discriminator, mode: str = "eval") -> Tensor:
    return disc.forward(r, mode)


def lsgan_d_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)."""
    real_term = ((real_scores - 1.0) * (real_scores - 1.0)).mean()
    fake_term = (fake_scores * fake_scores).mean()
    return 0.5 * real_term + 0.5 * fake_term


def lsgan_g_loss(fake_scores: Tensor) -> Tensor:
    """0.5 * mean((fake - 1)^2)."""
    return 0.5 * ((fake_scores - 1.0) * (fake_scores - 1.0)).mean()
