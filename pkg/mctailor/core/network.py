"""
mctailor Convolutional Scorer

Small 1-D convolutional network over token sequences with hand-written
backpropagation:

    embedding -> [conv(filters, width) -> tanh] * n -> masked max-pool -> logit

Convolutions use full zero padding, so every length (the empty prefix
included) yields at least one valid output position.
"""

from __future__ import annotations
from typing import Dict, List, Sequence, Tuple
from dataclasses import dataclass
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of a scorer."""
    vocab_size: int
    embed_dim: int = 16
    conv_layers: Tuple[Tuple[int, int], ...] = ((10, 5), (5, 5))

    def param_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Parameter names and shapes in declaration order."""
        shapes: List[Tuple[str, Tuple[int, ...]]] = [
            ("embedding", (self.vocab_size, self.embed_dim)),
        ]
        channels = self.embed_dim
        for i, (filters, width) in enumerate(self.conv_layers):
            shapes.append((f"conv{i}.weight", (width, channels, filters)))
            shapes.append((f"conv{i}.bias", (filters,)))
            channels = filters
        shapes.append(("out.weight", (channels,)))
        shapes.append(("out.bias", (1,)))
        return shapes


@dataclass
class ForwardCache:
    ids: np.ndarray
    input_mask: np.ndarray
    layers: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]
    pool_index: np.ndarray
    pooled: np.ndarray


def pad_batch(sequences: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences with 0; returns (ids, lengths)."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    width = max(1, int(lengths.max()) if len(lengths) else 1)
    ids = np.zeros((len(sequences), width), dtype=np.int64)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq
    return ids, lengths


class ConvScorer:
    """
    Convolutional sequence scorer producing an unbounded logit.

    Parameters live in a plain dict keyed by declaration-order names so
    optimizers, serializers and gradient checks share one view.
    """

    def __init__(self, config: NetworkConfig, params: Params):
        expected = dict(config.param_shapes())
        for name, shape in expected.items():
            if name not in params or params[name].shape != shape:
                raise ValueError(f"Parameter {name} missing or not of shape {shape}")
        self.config = config
        self.params = params

    @classmethod
    def initialize(
        cls,
        config: NetworkConfig,
        rng: np.random.Generator,
        scale: float = 0.1,
    ) -> "ConvScorer":
        params: Params = {}
        for name, shape in config.param_shapes():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape, dtype=np.float64)
            else:
                params[name] = rng.normal(0.0, scale, size=shape)
        return cls(config, params)

    def copy(self) -> "ConvScorer":
        return ConvScorer(self.config, {k: v.copy() for k, v in self.params.items()})

    # =========================================================================
    # Forward / Backward
    # =========================================================================

    def forward(self, ids: np.ndarray, lengths: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        p = self.params
        positions = np.arange(ids.shape[1])
        input_mask = positions[None, :] < lengths[:, None]
        acts = p["embedding"][ids] * input_mask[..., None]

        valid = lengths.copy()
        layers = []
        hidden = acts
        mask = input_mask
        for i, (_, width) in enumerate(self.config.conv_layers):
            padded = np.pad(acts, ((0, 0), (width - 1, width - 1), (0, 0)))
            windows = np.moveaxis(sliding_window_view(padded, width, axis=1), -1, 2)
            z = np.einsum("blkc,kcf->blf", windows, p[f"conv{i}.weight"]) + p[f"conv{i}.bias"]
            hidden = np.tanh(z)
            valid = valid + width - 1
            mask = np.arange(hidden.shape[1])[None, :] < valid[:, None]
            layers.append((windows, hidden, mask))
            acts = hidden * mask[..., None]

        scores = np.where(mask[..., None], hidden, -np.inf)
        pool_index = scores.argmax(axis=1)
        pooled = np.take_along_axis(hidden, pool_index[:, None, :], axis=1)[:, 0, :]
        logits = pooled @ p["out.weight"] + p["out.bias"][0]
        cache = ForwardCache(ids, input_mask, layers, pool_index, pooled)
        return logits, cache

    def backward(self, cache: ForwardCache, grad_logits: np.ndarray) -> Params:
        """Gradients of sum(grad_logits * logits) w.r.t. every parameter."""
        p = self.params
        grads: Params = {
            "out.weight": cache.pooled.T @ grad_logits,
            "out.bias": np.array([grad_logits.sum()]),
        }
        d_pooled = grad_logits[:, None] * p["out.weight"][None, :]
        _, last_hidden, _ = cache.layers[-1]
        d_hidden = np.zeros_like(last_hidden)
        np.put_along_axis(d_hidden, cache.pool_index[:, None, :], d_pooled[:, None, :], axis=1)

        for i in reversed(range(len(cache.layers))):
            windows, hidden, mask = cache.layers[i]
            width = windows.shape[2]
            weight = p[f"conv{i}.weight"]
            dz = d_hidden * mask[..., None] * (1.0 - hidden ** 2)
            grads[f"conv{i}.weight"] = np.einsum("blkc,blf->kcf", windows, dz)
            grads[f"conv{i}.bias"] = dz.sum(axis=(0, 1))
            d_windows = np.einsum("blf,kcf->blkc", dz, weight)
            out_len = dz.shape[1]
            in_len = out_len - width + 1
            d_padded = np.zeros((dz.shape[0], in_len + 2 * (width - 1), weight.shape[1]))
            for j in range(width):
                d_padded[:, j:j + out_len, :] += d_windows[:, :, j, :]
            d_hidden = d_padded[:, width - 1:width - 1 + in_len, :]

        d_embed = d_hidden * cache.input_mask[..., None]
        grad_e = np.zeros_like(p["embedding"])
        np.add.at(grad_e, cache.ids, d_embed)
        grads["embedding"] = grad_e
        return grads

    def logits(self, sequences: Sequence[Sequence[int]], batch_size: int = 256) -> np.ndarray:
        """Raw logits for arbitrary id sequences."""
        out = np.empty(len(sequences), dtype=np.float64)
        for start in range(0, len(sequences), batch_size):
            chunk = sequences[start:start + batch_size]
            ids, lengths = pad_batch(chunk)
            out[start:start + len(chunk)], _ = self.forward(ids, lengths)
        return out
