"""Per-view auto-encoders with hand-written forward and backward passes.

Two layouts are supported:

* image views ``(n, c, h, w)``: three 3x3 convolutions (no pooling) and a
  mirrored stack of transposed convolutions;
* flat views ``(n, d)``: three bias-free dense layers and their mirror.

No layer has a bias, so an all-zero input maps to an all-zero latent.  A
rectifier follows every layer except the last decoder layer.  The latent
matrix ``F`` is returned columns-as-samples (``d_lat x n``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

KERNEL = 3
DEFAULT_CHANNELS = (64, 32, 16)


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# convolution primitives (NCHW, 3x3 kernels, "same" zero padding)
# ---------------------------------------------------------------------------


def same_padding(size: int, stride: int, kernel: int = KERNEL) -> Tuple[int, int, int]:
    """Return ``(out, pad_before, pad_after)`` for "same" padding.

    ``out = ceil(size / stride)``; the extra pad goes after, as in the
    usual SAME convention.
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return out, before, total - before


def _patches(xp: np.ndarray, out_hw, stride: int) -> np.ndarray:
    """Gather ``(n, c, 3, 3, oh, ow)`` windows from a padded input."""
    n, c = xp.shape[:2]
    oh, ow = out_hw
    cols = np.empty((n, c, KERNEL, KERNEL, oh, ow))
    for ky in range(KERNEL):
        for kx in range(KERNEL):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + stride * (oh - 1) + 1:stride,
                                    kx:kx + stride * (ow - 1) + 1:stride]
    return cols


def _pad(x: np.ndarray, stride: int):
    h, w = x.shape[2:]
    oh, pt, pb = same_padding(h, stride)
    ow, pl, pr = same_padding(w, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if (xp.shape[2] - KERNEL) // stride + 1 != oh or (xp.shape[3] - KERNEL) // stride + 1 != ow:
        raise ShapeError(f"stride {stride} cannot realise same padding for {h}x{w}")
    return xp, (oh, ow), (pt, pl)


def conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1) -> np.ndarray:
    """Cross-correlation of ``x (n, c, h, w)`` with ``kernel (o, c, 3, 3)``."""
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    xp, out_hw, _ = _pad(x, stride)
    cols = _patches(xp, out_hw, stride)
    y = np.tensordot(cols, kernel, axes=([1, 2, 3], [1, 2, 3]))
    return y.transpose(0, 3, 1, 2)


def conv2d_weight_grad(x: np.ndarray, dy: np.ndarray, stride: int) -> np.ndarray:
    xp, out_hw, _ = _pad(x, stride)
    cols = _patches(xp, out_hw, stride)
    return np.tensordot(dy, cols, axes=([0, 2, 3], [0, 4, 5]))


def conv2d_input_grad(dy: np.ndarray, kernel: np.ndarray, in_hw, stride: int) -> np.ndarray:
    """Adjoint of :func:`conv2d` with respect to its input."""
    h, w = in_hw
    oh, pt, pb = same_padding(h, stride)
    ow, pl, pr = same_padding(w, stride)
    if dy.shape[2:] != (oh, ow):
        raise ShapeError(f"gradient spatial shape {dy.shape[2:]} does not match {(oh, ow)}")
    dcols = np.tensordot(dy, kernel, axes=([1], [0]))  # n, oh, ow, c, 3, 3
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((dy.shape[0], kernel.shape[1], h + pt + pb, w + pl + pr))
    for ky in range(KERNEL):
        for kx in range(KERNEL):
            dxp[:, :, ky:ky + stride * (oh - 1) + 1:stride,
                kx:kx + stride * (ow - 1) + 1:stride] += dcols[:, :, ky, kx]
    return dxp[:, :, pt:pt + h, pl:pl + w]


def conv_transpose2d(x: np.ndarray, kernel: np.ndarray, out_hw, stride: int = 1) -> np.ndarray:
    """Transposed convolution, ``kernel (o, c, 3, 3)`` maps ``c -> o`` channels.

    Defined as the exact adjoint of the strided "same" convolution from
    ``out_hw`` down to ``x``'s spatial size, so ``out_hw`` must satisfy
    ``ceil(out / stride) == x_size``.
    """
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    return conv2d_input_grad(x, kernel.transpose(1, 0, 2, 3), out_hw, stride)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class Layer:
    """One bias-free layer.

    ``kind`` is ``"conv"``, ``"tconv"`` or ``"dense"``.  Conv kernels are
    ``(out, in, 3, 3)``; dense weights are ``(out, in)``.  ``out_hw`` is the
    output spatial size of a transposed layer.
    """

    kind: str
    weight: np.ndarray
    stride: int = 1
    relu: bool = True
    out_hw: Optional[Tuple[int, int]] = None

    @property
    def fan_in(self) -> int:
        if self.kind == "dense":
            return self.weight.shape[1]
        return KERNEL * KERNEL * self.weight.shape[1]


@dataclass
class AutoencoderParams:
    input_shape: Tuple[int, ...]  # per-sample shape, (d,) or (c, h, w)
    layers: List[Layer]
    n_encoder: int
    seed: int = 0

    @property
    def encoder(self) -> List[Layer]:
        return self.layers[:self.n_encoder]

    @property
    def decoder(self) -> List[Layer]:
        return self.layers[self.n_encoder:]

    @property
    def is_image(self) -> bool:
        return len(self.input_shape) == 3

    @property
    def latent_shape(self) -> Tuple[int, ...]:
        last = self.encoder[-1]
        if last.kind == "dense":
            return (last.weight.shape[0],)
        return (last.weight.shape[0], *self._spatial_sizes()[self.n_encoder])

    @property
    def latent_dim(self) -> int:
        return int(np.prod(self.latent_shape))

    def _spatial_sizes(self) -> List[Tuple[int, int]]:
        sizes = [tuple(self.input_shape[1:])]
        for layer in self.encoder:
            sizes.append(tuple(same_padding(s, layer.stride)[0] for s in sizes[-1]))
        return sizes

    def weights(self) -> List[np.ndarray]:
        return [layer.weight for layer in self.layers]

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(
            input_shape=tuple(self.input_shape),
            layers=[Layer(l.kind, l.weight.copy(), l.stride, l.relu, l.out_hw) for l in self.layers],
            n_encoder=self.n_encoder,
            seed=self.seed,
        )

    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights())


def default_widths(input_shape: Sequence[int]) -> Tuple[int, ...]:
    if len(input_shape) == 3:
        return DEFAULT_CHANNELS
    d = int(input_shape[0])
    return tuple(min(d, c) for c in DEFAULT_CHANNELS)


def init_params(input_shape: Sequence[int], widths: Optional[Sequence[int]] = None,
                seed: int = 0, strides=2) -> AutoencoderParams:
    """He-initialised encoder/decoder pair for one view.

    ``input_shape`` is the per-sample shape.  ``widths`` are the encoder
    channel counts (image) or layer widths (flat); the decoder mirrors
    them.  ``strides`` (int or per-encoder-layer list) only applies to
    image views; the decoder uses the mirrored strides.
    """
    input_shape = tuple(int(s) for s in input_shape)
    widths = tuple(int(w) for w in (widths or default_widths(input_shape)))
    if not widths or min(widths) < 1:
        raise ShapeError(f"invalid widths {widths}")
    rng = np.random.default_rng(seed)

    def draw(shape, fan_in):
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)

    layers: List[Layer] = []
    if len(input_shape) == 1:
        dims = (input_shape[0], *widths)
        for a, b in zip(dims[:-1], dims[1:]):
            layers.append(Layer("dense", draw((b, a), a)))
        rdims = dims[::-1]
        for j, (a, b) in enumerate(zip(rdims[:-1], rdims[1:])):
            layers.append(Layer("dense", draw((b, a), a), relu=j < len(widths) - 1))
    elif len(input_shape) == 3:
        if np.ndim(strides) == 0:
            strides = [int(strides)] * len(widths)
        strides = [int(s) for s in strides]
        if len(strides) != len(widths) or min(strides) < 1:
            raise ShapeError(f"need one positive stride per encoder layer, got {strides}")
        chans = (input_shape[0], *widths)
        sizes = [input_shape[1:]]
        for a, b, s in zip(chans[:-1], chans[1:], strides):
            layers.append(Layer("conv", draw((b, a, KERNEL, KERNEL), KERNEL * KERNEL * a), stride=s))
            sizes.append(tuple(same_padding(z, s)[0] for z in sizes[-1]))
        rchans = chans[::-1]
        for j in range(len(widths)):
            a, b = rchans[j], rchans[j + 1]
            enc_idx = len(widths) - 1 - j
            layers.append(Layer(
                "tconv", draw((b, a, KERNEL, KERNEL), KERNEL * KERNEL * a),
                stride=strides[enc_idx], relu=j < len(widths) - 1,
                out_hw=tuple(sizes[enc_idx]),
            ))
    else:
        raise ShapeError(f"per-sample shape must be (d,) or (c, h, w), got {input_shape}")
    return AutoencoderParams(input_shape=input_shape, layers=layers, n_encoder=len(widths), seed=seed)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations, in layer order."""

    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    n_samples: int = 0


def _layer_forward(layer: Layer, x: np.ndarray) -> np.ndarray:
    if layer.kind == "dense":
        return x @ layer.weight.T
    if layer.kind == "conv":
        return conv2d(x, layer.weight, layer.stride)
    return conv_transpose2d(x, layer.weight, layer.out_hw, layer.stride)


def _layer_backward(layer: Layer, x: np.ndarray, dz: np.ndarray):
    """Return ``(d weight, d input)`` for one layer given d pre-activation."""
    if layer.kind == "dense":
        return dz.T @ x, dz @ layer.weight
    if layer.kind == "conv":
        dw = conv2d_weight_grad(x, dz, layer.stride)
        dx = conv2d_input_grad(dz, layer.weight, x.shape[2:], layer.stride)
        return dw, dx
    # transposed layer: y = A^T x with A the conv by kernel^T
    kt = layer.weight.transpose(1, 0, 2, 3)
    dx = conv2d(dz, kt, layer.stride)
    dkt = conv2d_weight_grad(dz, x, layer.stride)
    return dkt.transpose(1, 0, 2, 3), dx


def _run(layers: Sequence[Layer], h: np.ndarray, cache: ForwardCache) -> np.ndarray:
    for layer in layers:
        cache.inputs.append(h)
        z = _layer_forward(layer, h)
        cache.pre.append(z)
        h = np.maximum(z, 0.0) if layer.relu else z
    return h


def encode(params: AutoencoderParams, x) -> Tuple[np.ndarray, ForwardCache]:
    """Map a row-major sample batch to the latent matrix ``F`` (``d_lat x n``)."""
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape[1:]) != params.input_shape:
        raise ShapeError(f"expected samples of shape {params.input_shape}, got {tuple(x.shape[1:])}")
    cache = ForwardCache(n_samples=x.shape[0])
    h = _run(params.encoder, x, cache)
    return h.reshape(x.shape[0], -1).T, cache


def decode(params: AutoencoderParams, F: np.ndarray, cache: ForwardCache) -> np.ndarray:
    """Reconstruct samples (row-major, input shape) from ``F``; extends ``cache``."""
    F = np.asarray(F, dtype=np.float64)
    if F.shape[0] != params.latent_dim:
        raise ShapeError(f"latent has {F.shape[0]} rows, decoder expects {params.latent_dim}")
    if len(cache.pre) != params.n_encoder:
        raise ShapeError("decode needs a cache holding exactly the encoder pass")
    h = F.T.reshape((F.shape[1], *params.latent_shape))
    return _run(params.decoder, h, cache)


def forward(params: AutoencoderParams, x) -> Tuple[np.ndarray, np.ndarray, ForwardCache]:
    """``encode`` followed by ``decode`` of the same latent."""
    F, cache = encode(params, x)
    return F, decode(params, F, cache), cache


def backward_decoder(params: AutoencoderParams, cache: ForwardCache, d_xhat: np.ndarray):
    """Backpropagate a reconstruction gradient through the decoder.

    Returns ``(decoder_weight_grads, d_decoder_input)`` with the input
    gradient shaped like ``F`` (``d_lat x n``).
    """
    n_layers = len(params.layers)
    if len(cache.pre) != n_layers:
        raise ShapeError("reconstruction gradient given but cache holds no decoder pass")
    d_xhat = np.asarray(d_xhat, dtype=np.float64)
    if d_xhat.shape != cache.pre[-1].shape:
        raise ShapeError(f"reconstruction gradient shape {d_xhat.shape} != {cache.pre[-1].shape}")
    grads = [None] * (n_layers - params.n_encoder)
    dh = d_xhat
    for idx in range(n_layers - 1, params.n_encoder - 1, -1):
        layer = params.layers[idx]
        z = cache.pre[idx]
        dz = dh * (z > 0.0) if layer.relu else dh
        grads[idx - params.n_encoder], dh = _layer_backward(layer, cache.inputs[idx], dz)
    return grads, dh.reshape(cache.n_samples, -1).T


def backward_encoder(params: AutoencoderParams, cache: ForwardCache, d_latent: np.ndarray):
    """Backpropagate ``dL/dF`` (``d_lat x n``) through the encoder.

    Returns ``(encoder_weight_grads, d_input)``.
    """
    n = cache.n_samples
    if d_latent.shape != (params.latent_dim, n):
        raise ShapeError(f"latent gradient shape {d_latent.shape} != {(params.latent_dim, n)}")
    grads = [None] * params.n_encoder
    dh = d_latent.T.reshape(cache.pre[params.n_encoder - 1].shape)
    for idx in range(params.n_encoder - 1, -1, -1):
        layer = params.layers[idx]
        z = cache.pre[idx]
        dz = dh * (z > 0.0) if layer.relu else dh
        grads[idx], dh = _layer_backward(layer, cache.inputs[idx], dz)
    return grads, dh


def backward(params: AutoencoderParams, cache: ForwardCache, d_xhat: Optional[np.ndarray],
             d_latent: Optional[np.ndarray]):
    """Gradients of a loss through decoder and encoder.

    ``d_xhat`` is the loss gradient with respect to the reconstruction and
    ``d_latent`` the gradient with respect to ``F`` from terms outside the
    auto-encoder (``None`` means zero).  Valid when the decoder was fed the
    encoder's own ``F``; otherwise chain :func:`backward_decoder` and
    :func:`backward_encoder` by hand.  Returns ``(weight_grads, d_input)``.
    """
    n = cache.n_samples
    shape = (params.latent_dim, n)
    d_f = np.zeros(shape) if d_latent is None else np.asarray(d_latent, dtype=np.float64)
    if d_f.shape != shape:
        raise ShapeError(f"latent gradient shape {d_f.shape} != {shape}")
    if d_xhat is not None:
        dec_grads, d_dec = backward_decoder(params, cache, d_xhat)
        d_f = d_f + d_dec
    else:
        dec_grads = [np.zeros_like(l.weight) for l in params.decoder]
    enc_grads, d_input = backward_encoder(params, cache, d_f)
    return enc_grads + dec_grads, d_input
