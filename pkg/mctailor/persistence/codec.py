"""
mctailor Artifact Codecs

Deterministic byte formats:

- ModelFile ("MCTL"): header {magic, version u32, order u32, V u32, alpha f64,
  lambdas f64 * order}, then component count u32, mixture weights f64, vocab
  tokens (u32 length + UTF-8), and per component a context table sorted
  lexicographically by context ids with dense u64 count rows.
- Estimator file ("MCRE"): header {magic, version u32, kind u8, V u32,
  embed_dim u32, n_conv u32, (filters u32, width u32) * n_conv, gamma_max f64},
  then every weight tensor as little-endian f64 in declaration order.

All integers are little-endian.
"""

from __future__ import annotations
from typing import Dict, List, Sequence, Tuple, Union
import struct

import numpy as np

from ..core.lm import CountTable, NGramModel
from ..core.network import ConvScorer, NetworkConfig
from ..core.ratio import PrefixRatioEstimator, RatioEstimator
from ..schemas.corpus import Sentence, Vocab, make_sentence
from ..schemas.errors import DataError


MODEL_MAGIC = b"MCTL"
ESTIMATOR_MAGIC = b"MCRE"
FORMAT_VERSION = 1

KIND_RATIO = 0
KIND_PREFIX = 1


class _Reader:
    """Cursor over a byte buffer; truncation raises DataError."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError("E_ARTIFACT_TRUNCATED", f"{self.what} is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u32(self) -> int:
        return int(self.unpack("<I")[0])

    def u64(self) -> int:
        return int(self.unpack("<Q")[0])

    def f64s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DataError("E_ARTIFACT_TRAILING", f"{self.what} has trailing bytes")


def _check_header(reader: _Reader, magic: bytes) -> None:
    if reader.take(4) != magic:
        raise DataError("E_ARTIFACT_MAGIC", f"{reader.what} does not start with {magic!r}")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise DataError("E_ARTIFACT_VERSION", f"Unsupported {reader.what} version {version}")


# =============================================================================
# Model file
# =============================================================================

def encode_model(model: NGramModel) -> bytes:
    V = model.vocab_size
    parts: List[bytes] = [
        MODEL_MAGIC,
        struct.pack("<IIId", FORMAT_VERSION, model.order, V, model.alpha),
        np.asarray(model.lambdas, dtype="<f8").tobytes(),
        struct.pack("<I", len(model.tables)),
        np.asarray(model.mixture, dtype="<f8").tobytes(),
    ]
    for tok in model.vocab.tokens:
        raw = tok.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    for table in model.tables:
        parts.append(struct.pack("<Q", len(table.counts)))
        for ctx in sorted(table.counts):
            parts.append(struct.pack(f"<I{len(ctx)}I", len(ctx), *ctx))
            parts.append(table.counts[ctx].astype("<u8").tobytes())
    return b"".join(parts)


def decode_model(data: bytes) -> NGramModel:
    r = _Reader(data, "model file")
    _check_header(r, MODEL_MAGIC)
    order, V = r.u32(), r.u32()
    (alpha,) = r.unpack("<d")
    lambdas = tuple(float(x) for x in r.f64s(order))
    n_tables = r.u32()
    mixture = tuple(float(x) for x in r.f64s(n_tables))
    tokens = []
    for _ in range(V):
        tokens.append(r.take(r.u32()).decode("utf-8"))
    vocab = Vocab(tokens=tuple(tokens))

    tables = []
    for _ in range(n_tables):
        counts: Dict[Tuple[int, ...], np.ndarray] = {}
        for _ in range(r.u64()):
            n = r.u32()
            ctx = tuple(int(i) for i in r.unpack(f"<{n}I"))
            counts[ctx] = np.frombuffer(r.take(8 * V), dtype="<u8").astype(np.uint64)
        tables.append(CountTable(counts=counts))
    r.done()
    return NGramModel(
        order=order,
        vocab=vocab,
        alpha=float(alpha),
        lambdas=lambdas,
        tables=tuple(tables),
        mixture=mixture,
    )


# =============================================================================
# Estimator file
# =============================================================================

def encode_estimator(est: Union[RatioEstimator, PrefixRatioEstimator]) -> bytes:
    kind = KIND_PREFIX if isinstance(est, PrefixRatioEstimator) else KIND_RATIO
    cfg = est.scorer.config
    parts: List[bytes] = [
        ESTIMATOR_MAGIC,
        struct.pack(
            "<IBIII", FORMAT_VERSION, kind, cfg.vocab_size, cfg.embed_dim, len(cfg.conv_layers)
        ),
    ]
    for filters, width in cfg.conv_layers:
        parts.append(struct.pack("<II", filters, width))
    parts.append(struct.pack("<d", est.gamma_max))
    for name, _ in cfg.param_shapes():
        parts.append(np.ascontiguousarray(est.scorer.params[name], dtype="<f8").tobytes())
    return b"".join(parts)


def decode_estimator(data: bytes) -> Union[RatioEstimator, PrefixRatioEstimator]:
    r = _Reader(data, "estimator file")
    _check_header(r, ESTIMATOR_MAGIC)
    (kind,) = r.unpack("<B")
    vocab_size, embed_dim, n_conv = r.u32(), r.u32(), r.u32()
    conv = tuple((r.u32(), r.u32()) for _ in range(n_conv))
    (gamma_max,) = r.unpack("<d")
    cfg = NetworkConfig(vocab_size, embed_dim, conv)
    params = {}
    for name, shape in cfg.param_shapes():
        params[name] = r.f64s(int(np.prod(shape))).reshape(shape)
    r.done()
    scorer = ConvScorer(cfg, params)
    if kind == KIND_PREFIX:
        return PrefixRatioEstimator(scorer, float(gamma_max))
    if kind == KIND_RATIO:
        return RatioEstimator(scorer, float(gamma_max))
    raise DataError("E_ARTIFACT_KIND", f"Unknown estimator kind {kind}")


# =============================================================================
# Sample file
# =============================================================================

def encode_samples(sentences: Sequence[Sentence], vocab: Vocab) -> str:
    """One decoded sentence per line."""
    return "".join(vocab.render(s) + "\n" for s in sentences)


def decode_samples(text: str, vocab: Vocab, max_len: int) -> List[Sentence]:
    """Inverse of encode_samples; an empty line is the empty sentence."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [make_sentence(vocab.encode(line.split()), max_len) for line in lines]
