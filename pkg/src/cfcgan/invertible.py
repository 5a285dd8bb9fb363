"""Exactly invertible generator: L repetitions of squeeze, learnable
channel mixing, and a stable additive coupling layer, each undone in
closed form by the inverse pass.

The additive coupling updates are sequential, so each sub-network sees
already-updated channels; inversion subtracts the same evaluations in
reverse order and is exact to rounding error, for any parameter values
with an invertible mixing matrix. Coupling layers are volume-preserving;
the whole map's log-Jacobian-determinant comes from the mixing matrices
alone.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch, SingularMatrix
from .tensor import (Tensor, channel_mix, channel_slice, concat_channels, conv2d,
                     depth_to_space, leaky_relu, sn_scale, space_to_depth, suspend_tape)

DET_FLOOR = 1e-8
LRELU_SLOPE = 0.2


def squeeze(x: Tensor) -> Tensor:
    """Split an (N,1,H,W) image into four half-resolution channels
    (2x2 cell order: top-left, top-right, bottom-left, bottom-right)."""
    return space_to_depth(x)


def unsqueeze(x: Tensor) -> Tensor:
    """Inverse of squeeze: reassemble (N,4,h,w) into (N,1,2h,2w)."""
    return depth_to_space(x)


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / (np.linalg.norm(v) + 1e-12)


class SnState:
    """Persistent left-singular-vector estimate for one weight."""

    __slots__ = ("u",)

    def __init__(self, u: np.ndarray):
        self.u = u


def spectral_normalize(weight: Tensor, state: SnState, update: bool = True) -> Tensor:
    """Return weight / sigma_hat where sigma_hat is the power-iteration
    estimate of the top singular value of the weight reshaped to
    (out, in*kh*kw). ``update`` runs one power-iteration step on the
    persistent estimate (training); otherwise the stored estimate is
    used as-is (inference / gradient checks)."""
    mat = weight.data.reshape(weight.data.shape[0], -1).astype(np.float64)
    if update:
        v = _normalize(mat.T @ state.u)
        state.u = _normalize(mat @ v)
    v = _normalize(mat.T @ state.u)
    return sn_scale(weight, state.u, v)


def sn_sigma(weight: Tensor, state: SnState) -> float:
    """Current sigma_hat = u^T W v with v aligned to W^T u."""
    mat = weight.data.reshape(weight.data.shape[0], -1).astype(np.float64)
    v = _normalize(mat.T @ state.u)
    return float(state.u @ mat @ v)


def top_singular_value(mat: np.ndarray, iters: int = 200) -> float:
    """Power-iteration estimate of the top singular value of a 2-D matrix."""
    mat = np.asarray(mat, dtype=np.float64)
    rng = np.random.default_rng(7)
    u = _normalize(rng.standard_normal(mat.shape[0]))
    for _ in range(iters):
        v = mat.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
        u = _normalize(mat @ v)
    return float(u @ mat @ v)


class SnConv2d:
    """Convolution whose weight is divided by its spectral norm estimate
    at every forward pass. The bias is left unnormalized."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int, pad: int,
                 rng: np.random.Generator, dtype=np.float64):
        w = 0.05 * rng.standard_normal((out_ch, in_ch, ksize, ksize))
        self.w = Tensor(w.astype(dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype), requires_grad=True)
        self.sn = SnState(_normalize(rng.standard_normal(out_ch)))
        self.pad = pad

    def forward(self, x: Tensor, update_sn: bool = False) -> Tensor:
        w_bar = spectral_normalize(self.w, self.sn, update=update_sn)
        return conv2d(x, w_bar, self.b, stride=1, pad=self.pad)


class CouplingNet:
    """Sub-network producing the additive update for one channel from the
    other three: 3x3 (3 -> c) and 1x1 (c -> c) spectrally normalized
    convolutions, then an unnormalized 3x3 (c -> 1) output convolution.
    The output convolution starts at zero so the whole block begins as
    the identity map."""

    def __init__(self, width: int, rng: np.random.Generator, dtype=np.float64):
        self.width = width
        self.conv1 = SnConv2d(3, width, 3, pad=1, rng=rng, dtype=dtype)
        self.conv2 = SnConv2d(width, width, 1, pad=0, rng=rng, dtype=dtype)
        self.w3 = Tensor(np.zeros((1, width, 3, 3), dtype), requires_grad=True)
        self.b3 = Tensor(np.zeros(1, dtype), requires_grad=True)

    def forward(self, h: Tensor, update_sn: bool = False) -> Tensor:
        t = leaky_relu(self.conv1.forward(h, update_sn), LRELU_SLOPE)
        t = leaky_relu(self.conv2.forward(t, update_sn), LRELU_SLOPE)
        return conv2d(t, self.w3, self.b3, stride=1, pad=1)

    def sn_weights(self) -> list[tuple[Tensor, SnState]]:
        return [(self.conv1.w, self.conv1.sn), (self.conv2.w, self.conv2.sn)]

    def named_parameters(self, prefix: str):
        yield f"{prefix}.conv1.w", self.conv1.w
        yield f"{prefix}.conv1.b", self.conv1.b
        yield f"{prefix}.conv2.w", self.conv2.w
        yield f"{prefix}.conv2.b", self.conv2.b
        yield f"{prefix}.final.w", self.w3
        yield f"{prefix}.final.b", self.b3

    def named_buffers(self, prefix: str):
        yield f"{prefix}.conv1.u", self.conv1.sn
        yield f"{prefix}.conv2.u", self.conv2.sn


class InvConv1x1:
    """Per-pixel channel mixing by a learnable 4x4 matrix. The inverse
    matrix and log|det| are cached and refreshed whenever the weight
    changes (after every optimizer step)."""

    def __init__(self, w: np.ndarray, dtype=np.float64):
        self.w = Tensor(np.asarray(w).astype(dtype), requires_grad=True)
        self._w_inv: np.ndarray | None = None
        self._logabsdet = -np.inf
        self._det = 0.0
        self.refresh()

    def refresh(self) -> None:
        w64 = self.w.data.astype(np.float64)
        det = float(np.linalg.det(w64))
        self._det = det
        if abs(det) <= DET_FLOOR:
            self._w_inv = None
            self._logabsdet = -np.inf
        else:
            self._w_inv = np.linalg.inv(w64).astype(self.w.dtype)
            self._logabsdet = float(np.log(abs(det)))

    @property
    def det(self) -> float:
        return self._det

    def forward(self, x: Tensor) -> Tensor:
        return channel_mix(x, self.w)

    def inverse(self, y: Tensor) -> Tensor:
        if self._w_inv is None:
            raise SingularMatrix(self._det)
        with suspend_tape():
            return channel_mix(Tensor(y.data), Tensor(self._w_inv))

    def logdet(self, h: int, w: int) -> float:
        """Log-Jacobian contribution over an h x w spatial grid."""
        if self._w_inv is None:
            raise SingularMatrix(self._det)
        return h * w * self._logabsdet


def conv1x1_forward(x: Tensor, layer: InvConv1x1) -> Tensor:
    return layer.forward(x)


def conv1x1_inverse(y: Tensor, layer: InvConv1x1) -> Tensor:
    return layer.inverse(y)


def conv1x1_logdet(layer: InvConv1x1, h: int, w: int) -> float:
    return layer.logdet(h, w)


def _split4(x4: Tensor) -> list[Tensor]:
    if x4.data.shape[1] != 4:
        raise ShapeMismatch(f"coupling expects 4 channels, got {x4.data.shape[1]}")
    return [channel_slice(x4, i, i + 1) for i in range(4)]


def _check_quad(parts) -> None:
    shape = parts[0].data.shape
    for i, p in enumerate(parts[1:], start=2):
        if p.data.shape != shape:
            raise ShapeMismatch(f"coupling input {i} has shape {p.data.shape}, expected {shape}")
        if p.data.shape[1] != 1:
            raise ShapeMismatch(f"coupling inputs must be single-channel, got {p.data.shape}")


def coupling_forward(xs, nets, update_sn: bool = False) -> list[Tensor]:
    """Sequential additive updates; each net consumes already-updated maps."""
    _check_quad(xs)
    x1, x2, x3, x4 = xs
    f1, f2, f3, f4 = nets
    y1 = x1 + f1.forward(concat_channels([x2, x3, x4]), update_sn)
    y2 = x2 + f2.forward(concat_channels([y1, x3, x4]), update_sn)
    y3 = x3 + f3.forward(concat_channels([y1, y2, x4]), update_sn)
    y4 = x4 + f4.forward(concat_channels([y1, y2, y3]), update_sn)
    return [y1, y2, y3, y4]


def coupling_inverse(ys, nets) -> list[Tensor]:
    """Reverse-order subtraction; exact inverse of coupling_forward."""
    _check_quad(ys)
    y1, y2, y3, y4 = ys
    f1, f2, f3, f4 = nets
    x4 = y4 - f4.forward(concat_channels([y1, y2, y3]))
    x3 = y3 - f3.forward(concat_channels([y1, y2, x4]))
    x2 = y2 - f2.forward(concat_channels([y1, x3, x4]))
    x1 = y1 - f1.forward(concat_channels([x2, x3, x4]))
    return [x1, x2, x3, x4]


class InvertibleBlock:
    """squeeze -> 1x1 channel mixing -> additive coupling -> unsqueeze."""

    def __init__(self, mix: InvConv1x1, nets: list[CouplingNet]):
        self.mix = mix
        self.nets = nets

    def forward(self, r: Tensor, update_sn: bool = False) -> Tensor:
        x4 = squeeze(r)
        mixed = self.mix.forward(x4)
        ys = coupling_forward(_split4(mixed), self.nets, update_sn)
        return unsqueeze(concat_channels(ys))

    def inverse(self, s: Tensor) -> Tensor:
        y4 = squeeze(s)
        xs = coupling_inverse(_split4(y4), self.nets)
        unmixed = self.mix.inverse(concat_channels(xs))
        return unsqueeze(unmixed)


def _random_orthogonal(rng: np.random.Generator, n: int = 4) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class Generator:
    """Stack of L invertible blocks acting on single-channel residual
    images. ``inverse`` is the analytic inverse of ``forward`` for the
    same parameters and normalization state (inference mode)."""

    def __init__(self, blocks: list[InvertibleBlock], levels: int, width: int):
        self.blocks = blocks
        self.levels = levels
        self.width = width

    @staticmethod
    def create(blocks: int = 4, levels: int = 2, width: int = 32, seed: int = 0,
               w_init: str = "orthogonal", dtype=np.float64) -> "Generator":
        """Training initialization: zero-initialized coupling outputs plus
        either random-orthogonal or near-identity mixing matrices."""
        if w_init not in ("orthogonal", "near_identity"):
            raise ValueError(f"w_init must be orthogonal|near_identity, got {w_init!r}")
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        built = []
        for _ in range(blocks):
            if w_init == "orthogonal":
                w = _random_orthogonal(rng)
            else:
                w = np.eye(4) + 0.01 * rng.standard_normal((4, 4))
            nets = [CouplingNet(width, rng, dtype) for _ in range(4)]
            built.append(InvertibleBlock(InvConv1x1(w, dtype), nets))
        return Generator(built, levels, width)

    def randomize(self, rng: np.random.Generator, scale: float = 0.1) -> None:
        """Draw every weight (including the zero-initialized output convs)
        at random; used by invertibility stress tests."""
        for block in self.blocks:
            block.mix.w.data = _random_orthogonal(rng).astype(block.mix.w.dtype) \
                + (0.2 * rng.standard_normal((4, 4))).astype(block.mix.w.dtype)
            block.mix.refresh()
            for net in block.nets:
                for _, p in net.named_parameters("x"):
                    p.data = (scale * rng.standard_normal(p.data.shape)).astype(p.dtype)

    def forward(self, r: Tensor, update_sn: bool = False) -> Tensor:
        n, c, h, w = r.data.shape
        if c != 1:
            raise ShapeMismatch(f"generator expects single-channel input, got {c}")
        if h % 2 or w % 2:
            raise ShapeMismatch(f"generator needs even spatial dims, got {h}x{w}")
        out = r
        for block in self.blocks:
            out = block.forward(out, update_sn)
        return out

    def inverse(self, s: Tensor) -> Tensor:
        with suspend_tape():
            out = s
            for block in reversed(self.blocks):
                out = block.inverse(out)
            return out

    def logdet(self, h: int, w: int) -> float:
        """Total log-Jacobian-determinant on an h x w input: coupling
        layers contribute zero, each mixing matrix acts on the squeezed
        (h/2, w/2) grid."""
        return sum(block.mix.logdet(h // 2, w // 2) for block in self.blocks)

    def named_parameters(self):
        for i, block in enumerate(self.blocks):
            yield f"blocks.{i}.mix.w", block.mix.w
            for j, net in enumerate(block.nets):
                yield from net.named_parameters(f"blocks.{i}.nets.{j}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self):
        for i, block in enumerate(self.blocks):
            for j, net in enumerate(block.nets):
                yield from net.named_buffers(f"blocks.{i}.nets.{j}")

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def refresh_mixing(self) -> None:
        for block in self.blocks:
            block.mix.refresh()

    def mixing_determinants(self) -> list[float]:
        return [block.mix.det for block in self.blocks]

    def astype(self, dtype) -> "Generator":
        out = Generator([InvertibleBlock(InvConv1x1(b.mix.w.data, dtype),
                                         [CouplingNet(self.width, np.random.default_rng(0), dtype)
                                          for _ in range(4)])
                         for b in self.blocks], self.levels, self.width)
        for (_, src), (_, dst) in zip(self.named_parameters(), out.named_parameters()):
            dst.data = src.data.astype(dtype)
        for (_, src), (_, dst) in zip(self.named_buffers(), out.named_buffers()):
            dst.u = src.u.copy()
        out.refresh_mixing()
        return out


def generator_forward(r: Tensor, gen: Generator, update_sn: bool = False) -> Tensor:
    return gen.forward(r, update_sn)


def generator_inverse(s: Tensor, gen: Generator) -> Tensor:
    return gen.inverse(s)


def lipschitz_bound(gen: Generator) -> float:
    """Upper-bound estimate of the generator's Lipschitz constant: the
    product over blocks of sigma_max(W) * prod_j (1 + L_j), where L_j is
    each coupling net's per-layer top-singular-value product. This is a
    reported bound, not an exact constant."""
    total = 1.0
    for block in gen.blocks:
        factor = top_singular_value(block.mix.w.data)
        for net in block.nets:
            gain = 1.0
            for w, state in net.sn_weights():
                w_bar = spectral_normalize(w, state, update=False)
                gain *= top_singular_value(w_bar.data.reshape(w_bar.data.shape[0], -1))
            gain *= top_singular_value(net.w3.data.reshape(net.w3.data.shape[0], -1))
            factor *= 1.0 + gain
        total *= factor
    return total
