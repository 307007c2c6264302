"""Transformer bi-encoder and cross-encoder over keystroke feature sequences.

The input to the transformer stack has 10 channels per position: the 5
standardized temporal latencies plus 5 spatial channels produced in-model by
a width-2 convolution over learned keycode embeddings. Attention masks padded
keys; the sequence embedding is a masked mean-pool followed by an affine
projection. Cross mode jointly encodes a source/target pair distinguished by
token-type embeddings and classifies the pooled pair representation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError, ConfigurationError, NumericFailure
from .features import FeatureSequence, N_CHANNELS, NormStats

INIT_STD = 0.02
MODES = ("bi", "cross")
CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_TENSORS = "tensors.bin"


@dataclass
class EncoderConfig:
    max_len: int
    key_embed_dim: int = 16
    hidden: int = 256
    layers: int = 6
    heads: int = 8
    ffn_dim: int = 512
    dropout: float = 0.1
    out_dim: int = 64
    mode: str = "bi"
    pre_norm: bool = False

    def __post_init__(self) -> None:
        dims = (self.max_len, self.key_embed_dim, self.hidden, self.layers, self.heads, self.ffn_dim, self.out_dim)
        if min(dims) <= 0:
            raise ConfigurationError("all dimensions must be positive")
        if self.hidden % self.heads != 0:
            raise ConfigurationError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")


def _dropout(x: torch.Tensor, p: float, train_mode: bool, rng: torch.Generator | None) -> torch.Tensor:
    if not train_mode or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train_mode with dropout requires a torch.Generator")
    keep = (torch.rand(x.shape, generator=rng, dtype=x.dtype, device=x.device) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


def masked_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, key_mask: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention with padded keys excluded.

    q, k, v: (..., L, d); key_mask: broadcastable to the score matrix's key
    axis, True for real tokens. Scores are scaled by 1/sqrt(d) with d the
    per-head dimension. Returns (output, weights); each weight row is a
    probability distribution over unmasked keys.
    """
    d = q.shape[-1]
    scores = q @ k.transpose(-2, -1) / math.sqrt(d)
    scores = scores.masked_fill(~key_mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


class TransformerBlock(nn.Module):
    def __init__(self, hidden: int, heads: int, ffn_dim: int, dropout: float, pre_norm: bool):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.dropout = dropout
        self.pre_norm = pre_norm
        self.wq = nn.Linear(hidden, hidden)
        self.wk = nn.Linear(hidden, hidden)
        self.wv = nn.Linear(hidden, hidden)
        self.wo = nn.Linear(hidden, hidden)
        self.ln_attn = nn.LayerNorm(hidden)
        self.ln_ffn = nn.LayerNorm(hidden)
        self.ffn_in = nn.Linear(hidden, ffn_dim)
        self.ffn_out = nn.Linear(ffn_dim, hidden)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        B, L, _ = x.shape
        return x.view(B, L, self.heads, self.head_dim).transpose(1, 2)  # (B, h, L, d)

    def _attend(self, x: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, L, H = x.shape
        q, k, v = self._split(self.wq(x)), self._split(self.wk(x)), self._split(self.wv(x))
        out, weights = masked_attention(q, k, v, mask[:, None, None, :])
        out = out.transpose(1, 2).reshape(B, L, H)
        return self.wo(out), weights

    def _ffn(self, x: torch.Tensor) -> torch.Tensor:
        return self.ffn_out(F.gelu(self.ffn_in(x)))

    def forward(
        self,
        x: torch.Tensor,
        mask: torch.Tensor,
        train_mode: bool = False,
        rng: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if self.pre_norm:
            a, weights = self._attend(self.ln_attn(x), mask)
            x = x + _dropout(a, self.dropout, train_mode, rng)
            x = x + _dropout(self._ffn(self.ln_ffn(x)), self.dropout, train_mode, rng)
        else:
            a, weights = self._attend(x, mask)
            x = self.ln_attn(x + _dropout(a, self.dropout, train_mode, rng))
            x = self.ln_ffn(x + _dropout(self._ffn(x), self.dropout, train_mode, rng))
        return x, weights


class KeystrokeEncoder(nn.Module):
    """Bi- or cross-encoder; see module docstring. Immutable once trained."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.norm_stats: NormStats | None = None
        self.key_embed = nn.Embedding(256, config.key_embed_dim)
        self.spatial_conv = nn.Conv1d(config.key_embed_dim, N_CHANNELS, kernel_size=2, stride=1)
        self.input_proj = nn.Linear(2 * N_CHANNELS, config.hidden)
        self.pos_embed = nn.Embedding(config.max_len, config.hidden)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.hidden, config.heads, config.ffn_dim, config.dropout, config.pre_norm)
            for _ in range(config.layers)
        )
        self.pool_proj = nn.Linear(config.hidden, config.out_dim)
        if config.mode == "cross":
            self.type_embed = nn.Embedding(2, config.hidden)
            self.classifier = nn.Linear(2 * config.out_dim, 2)

    @property
    def dtype(self) -> torch.dtype:
        return self.input_proj.weight.dtype

    def spatial_features(self, keycodes: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Width-2 convolution over keycode embeddings, one row per position.

        Row i covers the keycode pair (i, i+1); a zero row is appended so the
        output is position-aligned with the temporal channels. Rows whose pair
        reaches into padding are zeroed — like the temporal digraph channels —
        so embeddings cannot depend on how far a sequence is padded.
        """
        emb = self.key_embed(keycodes)  # (B, L, ke)
        conv = self.spatial_conv(emb.transpose(1, 2)).transpose(1, 2)  # (B, L-1, 5)
        zeros = conv.new_zeros(conv.shape[0], 1, N_CHANNELS)
        out = torch.cat([conv, zeros], dim=1)  # (B, L, 5)
        pair_mask = torch.zeros_like(mask)
        pair_mask[:, :-1] = mask[:, :-1] & mask[:, 1:]
        return out * pair_mask.unsqueeze(-1).to(out.dtype)

    def _embed_inputs(
        self,
        temporal: torch.Tensor,
        keycodes: torch.Tensor,
        mask: torch.Tensor,
        token_type: int | None = None,
    ) -> torch.Tensor:
        L = temporal.shape[1]
        if L > self.config.max_len:
            raise ConfigurationError(f"sequence length {L} exceeds positional table {self.config.max_len}")
        spatial = self.spatial_features(keycodes, mask)
        x = self.input_proj(torch.cat([temporal.to(self.dtype), spatial], dim=-1))
        positions = torch.arange(L, device=x.device)
        x = x + self.pos_embed(positions)[None]
        if token_type is not None:
            x = x + self.type_embed.weight[token_type][None, None]
        return x

    @staticmethod
    def _masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask.to(x.dtype).unsqueeze(-1)
        return (x * m).sum(dim=1) / m.sum(dim=1)

    def _check_mask(self, mask: torch.Tensor) -> None:
        if (~mask).all(dim=1).any():
            raise ValueError("all-masked input sequence")

    def encode(
        self,
        temporal: torch.Tensor,
        keycodes: torch.Tensor,
        mask: torch.Tensor,
        train_mode: bool = False,
        rng: torch.Generator | None = None,
        return_attention: bool = False,
    ):
        """Embed a batch of sequences: (B, L, 5) float, (B, L) long, (B, L) bool
        -> (B, out_dim). Bi mode only."""
        if self.config.mode != "bi":
            raise ConfigurationError("encode requires a bi-encoder")
        self._check_mask(mask)
        x = self._embed_inputs(temporal, keycodes, mask)
        x = _dropout(x, self.config.dropout, train_mode, rng)
        attention = []
        for block in self.blocks:
            x, weights = block(x, mask, train_mode, rng)
            if return_attention:
                attention.append(weights)
        emb = self.pool_proj(self._masked_mean(x, mask))
        return (emb, attention) if return_attention else emb

    forward = encode

    def encode_pair(
        self,
        src: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
        tgt: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
        train_mode: bool = False,
        rng: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Joint encoding of (source, target) batches -> (B, 2) probabilities
        [P(similar), P(dissimilar)]. Positions restart at 0 per segment; token
        type 0 marks the source, 1 the target. Cross mode only."""
        if self.config.mode != "cross":
            raise ConfigurationError("encode_pair requires a cross-encoder")
        (ts, ks, ms), (tt, kt, mt) = src, tgt
        self._check_mask(ms)
        self._check_mask(mt)
        xs = self._embed_inputs(ts, ks, ms, token_type=0)
        xt = self._embed_inputs(tt, kt, mt, token_type=1)
        x = torch.cat([xs, xt], dim=1)
        mask = torch.cat([ms, mt], dim=1)
        x = _dropout(x, self.config.dropout, train_mode, rng)
        for block in self.blocks:
            x, _ = block(x, mask, train_mode, rng)
        Ls = ts.shape[1]
        pooled_s = self.pool_proj(self._masked_mean(x[:, :Ls], ms))
        pooled_t = self.pool_proj(self._masked_mean(x[:, Ls:], mt))
        logits = self.classifier(torch.cat([pooled_s, pooled_t], dim=-1))
        return torch.softmax(logits, dim=-1)


def init_parameters(model: KeystrokeEncoder, seed: int) -> KeystrokeEncoder:
    """Truncated-normal(0.02) matrices, zero biases, unit layer-norm scales."""
    gen = torch.Generator().manual_seed(seed)
    for name, param in sorted(model.named_parameters()):
        with torch.no_grad():
            if param.dim() >= 2 or "embed" in name:
                nn.init.trunc_normal_(param, std=INIT_STD, generator=gen)
            elif name.endswith("weight"):  # layer-norm scales
                param.fill_(1.0)
            else:
                param.zero_()
    return model


def build_model(config: EncoderConfig, seed: int = 0) -> KeystrokeEncoder:
    return init_parameters(KeystrokeEncoder(config), seed)


def parameter_count(config: EncoderConfig) -> int:
    return sum(p.numel() for p in KeystrokeEncoder(config).parameters())


def features_to_tensors(
    seqs: Sequence[FeatureSequence], dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    temporal = torch.from_numpy(np.stack([s.values for s in seqs])).to(dtype)
    keycodes = torch.from_numpy(np.stack([s.keycodes for s in seqs]))
    mask = torch.from_numpy(np.stack([s.mask for s in seqs]))
    return temporal, keycodes, mask


def embed_sequences(model: KeystrokeEncoder, seqs: Sequence[FeatureSequence]) -> np.ndarray:
    """Eval-mode embeddings for a list of FeatureSequences -> (B, out_dim) float32."""
    with torch.no_grad():
        emb = model.encode(*features_to_tensors(seqs, model.dtype))
    return emb.to(torch.float32).numpy()


def pair_similarity(
    model: KeystrokeEncoder, src: Sequence[FeatureSequence], tgt: Sequence[FeatureSequence]
) -> np.ndarray:
    """Eval-mode P(similar) for aligned source/target batches -> (B,) float32."""
    with torch.no_grad():
        probs = model.encode_pair(
            features_to_tensors(src, model.dtype), features_to_tensors(tgt, model.dtype)
        )
    return probs[:, 0].to(torch.float32).numpy()


def gradients(loss: torch.Tensor, model: KeystrokeEncoder) -> dict[str, torch.Tensor]:
    """d loss / d theta for every trainable tensor, zeros where unused."""
    if not torch.isfinite(loss):
        raise NumericFailure(f"non-finite loss {loss.item()}")
    names, params = zip(*model.named_parameters())
    if loss.grad_fn is None:
        return {n: torch.zeros_like(p) for n, p in zip(names, params)}
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {
        n: (g if g is not None else torch.zeros_like(p))
        for n, p, g in zip(names, params, grads)
    }


def _manifest_payload(model: KeystrokeEncoder) -> tuple[dict, bytes]:
    entries = []
    blobs = []
    offset = 0
    for name, param in model.state_dict().items():
        blob = param.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        entries.append(
            {"name": name, "offset": offset, "shape": list(param.shape), "dtype": "float32"}
        )
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    manifest = {
        "format_version": 1,
        "config": asdict(model.config),
        "norm_stats": model.norm_stats.to_dict() if model.norm_stats else None,
        "tensors": entries,
        "tensors_sha256": hashlib.sha256(payload).hexdigest(),
    }
    return manifest, payload


def save_checkpoint(model: KeystrokeEncoder, path: str | Path) -> None:
    """Write a checkpoint directory: JSON manifest + raw little-endian float32 file."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest, payload = _manifest_payload(model)
    (path / CHECKPOINT_TENSORS).write_bytes(payload)
    (path / CHECKPOINT_MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def checkpoint_hash(path: str | Path) -> str:
    manifest = json.loads((Path(path) / CHECKPOINT_MANIFEST).read_text(encoding="utf-8"))
    return manifest["tensors_sha256"]


def load_checkpoint(path: str | Path) -> KeystrokeEncoder:
    path = Path(path)
    try:
        manifest = json.loads((path / CHECKPOINT_MANIFEST).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint manifest in {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed manifest in {path}: {exc}") from exc
    cfg_doc = manifest.get("config", {})
    if cfg_doc.get("mode") not in MODES:
        raise ConfigurationError(f"unknown encoder mode {cfg_doc.get('mode')!r} in manifest")
    config = EncoderConfig(**cfg_doc)
    model = KeystrokeEncoder(config)
    if manifest.get("norm_stats"):
        model.norm_stats = NormStats.from_dict(manifest["norm_stats"])

    payload = (path / CHECKPOINT_TENSORS).read_bytes()
    entries = {e["name"]: e for e in manifest["tensors"]}
    expected_size = sum(4 * int(np.prod(e["shape"])) for e in entries.values())
    if len(payload) != expected_size:
        raise CheckpointError(
            f"tensor file is {len(payload)} bytes, manifest expects {expected_size}"
        )
    state = model.state_dict()
    if set(entries) != set(state):
        raise CheckpointError("manifest tensor names do not match model architecture")
    loaded = {}
    for name, tensor in state.items():
        e = entries[name]
        if list(tensor.shape) != list(e["shape"]):
            raise CheckpointError(f"tensor {name}: manifest shape {e['shape']} != model {list(tensor.shape)}")
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=e["offset"])
        loaded[name] = torch.from_numpy(arr.copy()).view(tensor.shape)
    model.load_state_dict(loaded)
    return model
