"""Imitation models over observation histories.

Three variants share one frame encoder:

* ``stgnn``: spatial delayed-hop expansion and per-timestamp temporal
  expansion, each fused by its own small transformer encoder; the two last
  tokens are concatenated before the prediction head.
* ``dgnn``: spatial branch only.
* ``tgnn``: temporal branch only.

The spatial branch turns the history window into hop tokens: token 0 is the
robot's own current embedding, and token l (l >= 1) applies the shared
aggregation layer l times, the innermost application on the frame from l-1
steps ago using that frame's graph snapshot and each later application using
the next (newer) snapshot. Information received from l hops away is
therefore l-1 steps old, which is exactly what a robot can learn from
neighbors rebroadcasting what they heard: one hop further is one step older.
The temporal branch aggregates each timestamp's embeddings over that
timestamp's own snapshot, oldest first.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .config import SwarmConfig
from .observation import History
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn import layers as nl
from .nn.layers import MlpParams, SageParams, TransformerLayerParams

VARIANTS = ("stgnn", "dgnn", "tgnn")

CHECKPOINT_FORMAT = "flockwork-checkpoint"
CHECKPOINT_VERSION = 1

_DTYPE_NAMES = {"float32": np.float32, "float64": np.float64}


class CheckpointError(RuntimeError):
    """Corrupt, truncated, or incompatible checkpoint file."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters; fully determines every tensor shape."""

    variant: str
    horizon: int          # L: number of historical steps in the window
    obs_width: int        # per-robot observation width (9 * dim)
    out_dim: int          # control dimension
    embed_width: int = 128
    n_heads: int = 4
    ff_width: int = 16
    n_encoder_layers: int = 2
    head_hidden: int = 128

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.embed_width % self.n_heads != 0:
            raise ValueError("embed_width must be divisible by n_heads")

    @property
    def uses_spatial(self) -> bool:
        return self.variant in ("stgnn", "dgnn")

    @property
    def uses_temporal(self) -> bool:
        return self.variant in ("stgnn", "tgnn")

    @property
    def fusion_width(self) -> int:
        return self.embed_width * (2 if self.variant == "stgnn" else 1)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class ModelParams:
    spec: ModelSpec
    encoder: MlpParams
    spatial_sage: SageParams | None
    spatial_encoder: list[TransformerLayerParams] | None
    temporal_sage: SageParams | None
    temporal_encoder: list[TransformerLayerParams] | None
    head: MlpParams

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = self.encoder.named_tensors("encoder")
        if self.spatial_sage is not None:
            out += self.spatial_sage.named_tensors("spatial.sage")
            for i, layer in enumerate(self.spatial_encoder):
                out += layer.named_tensors(f"spatial.tr{i}")
        if self.temporal_sage is not None:
            out += self.temporal_sage.named_tensors("temporal.sage")
            for i, layer in enumerate(self.temporal_encoder):
                out += layer.named_tensors(f"temporal.tr{i}")
        out += self.head.named_tensors("head")
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    @property
    def dtype(self):
        return self.encoder.w1.data.dtype


def build_params(spec: ModelSpec, seed: int, dtype=np.float32) -> ModelParams:
    """Construct parameters in a fixed order so a seed pins every value."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xF10C)))
    d = spec.embed_width
    encoder = nl.make_mlp(rng, spec.obs_width, d, d, dtype, "encoder")
    spatial_sage = spatial_encoder = None
    temporal_sage = temporal_encoder = None
    if spec.uses_spatial:
        spatial_sage = nl.make_sage(rng, d, dtype, "spatial.sage")
        spatial_encoder = [
            nl.make_transformer_layer(rng, d, spec.ff_width, dtype, f"spatial.tr{i}")
            for i in range(spec.n_encoder_layers)
        ]
    if spec.uses_temporal:
        temporal_sage = nl.make_sage(rng, d, dtype, "temporal.sage")
        temporal_encoder = [
            nl.make_transformer_layer(rng, d, spec.ff_width, dtype, f"temporal.tr{i}")
            for i in range(spec.n_encoder_layers)
        ]
    head = nl.make_mlp(rng, spec.fusion_width, spec.head_hidden, spec.out_dim,
                       dtype, "head")
    return ModelParams(
        spec=spec,
        encoder=encoder,
        spatial_sage=spatial_sage,
        spatial_encoder=spatial_encoder,
        temporal_sage=temporal_sage,
        temporal_encoder=temporal_encoder,
        head=head,
    )


def hop_token_schedule(horizon: int) -> list[list[int]]:
    """Frame indices (oldest-first) each spatial token aggregates over.

    Token l applies the aggregation layer once per listed index, oldest
    snapshot first; the first index is also the frame whose embeddings are
    aggregated. Token 0 has no applications: it is the raw current embedding.
    """
    return [list(range(horizon - l + 1, horizon + 1)) for l in range(horizon + 1)]


def delayed_hop_fold(frames: list, schedule: list[list[int]], apply_fn) -> list:
    """Fold an aggregation over historical snapshots to build hop tokens.

    Shared by the trainable path (Tensors, learned aggregation) and the
    linear reference path (plain arrays, exact neighbor means).
    """
    tokens = []
    for applies in schedule:
        x = frames[applies[0]] if applies else frames[-1]
        for s in applies:
            x = apply_fn(x, s)
        tokens.append(x)
    return tokens


def spatial_expand_linear(frame_feats: list[np.ndarray],
                          edge_snapshots: list) -> list[np.ndarray]:
    """Reference spatial expansion: pure neighbor means, no weights.

    Works on any dtype, including object arrays of Fractions, so the delayed
    composition can be verified in exact rational arithmetic.
    """
    n = frame_feats[0].shape[0]
    exact = frame_feats[0].dtype == np.dtype(object)
    mats = [nl.mean_agg_matrix(e, n, dtype=object if exact else np.float64)
            for e in edge_snapshots]
    schedule = hop_token_schedule(len(frame_feats) - 1)
    return delayed_hop_fold(list(frame_feats), schedule,
                            lambda x, s: mats[s].dot(x))


# ---------------------------------------------------------------------------
# Forward pass (batched; single-history entry points wrap batch size 1)
# ---------------------------------------------------------------------------

def _encode(params: ModelParams, feats: np.ndarray) -> list[Tensor]:
    """Shared encoder applied to every frame: (B, L+1, N, F) -> per-frame (B, N, d)."""
    b, frames, n, f = feats.shape
    d = params.spec.embed_width
    out = []
    for s in range(frames):
        x = Tensor(np.ascontiguousarray(feats[:, s]).reshape(b * n, f))
        e = nl.mlp_forward(x, params.encoder)
        out.append(ad.reshape(e, (b, n, d)))
    return out


def _agg_tensors(aggs: np.ndarray) -> list[Tensor]:
    return [Tensor(np.ascontiguousarray(aggs[:, s])) for s in range(aggs.shape[1])]


def _branch(params: ModelParams, emb: list[Tensor], mats: list[Tensor],
            sage: SageParams, encoder_layers, spatial: bool) -> Tensor:
    """Token build + transformer for one branch; returns (B*N, d) last output."""
    spec = params.spec
    horizon = len(emb) - 1
    if spatial:
        tokens = delayed_hop_fold(
            emb, hop_token_schedule(horizon),
            lambda x, s: nl.sage_forward(x, mats[s], sage),
        )
    else:
        tokens = [nl.sage_forward(emb[s], mats[s], sage) for s in range(horizon + 1)]
    seq = ad.stack(tokens, axis=2)                       # (B, N, T, d)
    b, n, t, d = seq.data.shape
    seq = ad.reshape(seq, (b * n, t, d))
    out = nl.transformer_encoder_forward(seq, encoder_layers, spec.n_heads)
    return ad.select(out, t - 1, axis=1)                 # last token


def forward_batch(params: ModelParams, feats: np.ndarray, aggs: np.ndarray) -> Tensor:
    """Predict controls for a batch: (B, L+1, N, F) + (B, L+1, N, N) -> (B, N, D).

    ``feats`` holds observation frames oldest first; ``aggs`` the matching
    neighbor-mean operators per frame snapshot.
    """
    spec = params.spec
    if feats.shape[1] != spec.horizon + 1:
        raise ValueError(
            f"history length {feats.shape[1]} != horizon+1 = {spec.horizon + 1}"
        )
    if feats.shape[3] != spec.obs_width:
        raise ValueError(f"observation width {feats.shape[3]} != {spec.obs_width}")
    b, _, n, _ = feats.shape
    emb = _encode(params, feats)
    mats = _agg_tensors(aggs)
    last = []
    if spec.uses_spatial:
        last.append(_branch(params, emb, mats, params.spatial_sage,
                            params.spatial_encoder, spatial=True))
    if spec.uses_temporal:
        last.append(_branch(params, emb, mats, params.temporal_sage,
                            params.temporal_encoder, spatial=False))
    fused = last[0] if len(last) == 1 else ad.concat(last, axis=-1)
    out = nl.mlp_forward(fused, params.head)
    return ad.reshape(out, (b, n, spec.out_dim))


def history_arrays(history: History, dtype=np.float32):
    """Stack a History into forward_batch inputs of batch size 1."""
    frames = history.frames
    n = frames[0].features.shape[0]
    feats = np.stack([f.features for f in frames]).astype(dtype)[None]
    aggs = np.stack(
        [nl.mean_agg_matrix(f.edges, n, dtype=np.float64) for f in frames]
    ).astype(dtype)[None]
    return feats, aggs


@dataclass(frozen=True)
class DelayedEmbeddings:
    """Per-frame node embeddings plus the matching graph snapshots."""

    embeddings: np.ndarray       # (L+1, N, d), oldest first
    edges: tuple                 # per-frame edge lists


def encode_frames(history: History, params: ModelParams) -> DelayedEmbeddings:
    feats, _ = history_arrays(history, dtype=params.dtype)
    with ad.no_grad():
        emb = _encode(params, feats)
    return DelayedEmbeddings(
        embeddings=np.stack([e.data[0] for e in emb]),
        edges=tuple(f.edges for f in history.frames),
    )


def _expand(emb: DelayedEmbeddings, params: ModelParams, spatial: bool) -> np.ndarray:
    n = emb.embeddings.shape[1]
    dtype = params.dtype
    mats = [Tensor(nl.mean_agg_matrix(e, n, dtype=np.float64).astype(dtype)[None])
            for e in emb.edges]
    frames = [Tensor(x[None].astype(dtype)) for x in emb.embeddings]
    horizon = len(frames) - 1
    sage = params.spatial_sage if spatial else params.temporal_sage
    if sage is None:
        raise ValueError("model variant lacks this expansion branch")
    with ad.no_grad():
        if spatial:
            tokens = delayed_hop_fold(
                frames, hop_token_schedule(horizon),
                lambda x, s: nl.sage_forward(x, mats[s], sage),
            )
        else:
            tokens = [nl.sage_forward(frames[s], mats[s], sage)
                      for s in range(horizon + 1)]
    return np.stack([t.data[0] for t in tokens], axis=1)  # (N, L+1, d)


def spatial_expand(emb: DelayedEmbeddings, params: ModelParams) -> np.ndarray:
    """Hop tokens per node: (N, L+1, d), token 0 = current self embedding."""
    return _expand(emb, params, spatial=True)


def temporal_expand(emb: DelayedEmbeddings, params: ModelParams) -> np.ndarray:
    """Per-timestamp tokens (oldest first), each over its own snapshot."""
    return _expand(emb, params, spatial=False)


def fuse_and_predict(
    spatial_tokens: np.ndarray | None,
    temporal_tokens: np.ndarray | None,
    params: ModelParams,
    spec: ModelSpec,
) -> np.ndarray:
    """Run branch transformers on token sequences and apply the head."""
    last = []
    with ad.no_grad():
        for tokens, layers in (
            (spatial_tokens, params.spatial_encoder),
            (temporal_tokens, params.temporal_encoder),
        ):
            if tokens is None:
                continue
            t = tokens.shape[1]
            x = Tensor(tokens.astype(params.dtype))
            out = nl.transformer_encoder_forward(x, layers, spec.n_heads)
            last.append(ad.select(out, t - 1, axis=1))
        if len(last) != (2 if spec.variant == "stgnn" else 1):
            raise ValueError(f"variant {spec.variant} token/branch mismatch")
        fused = last[0] if len(last) == 1 else ad.concat(last, axis=-1)
        out = nl.mlp_forward(fused, params.head)
    return out.data


def predict(history: History, params: ModelParams, spec: ModelSpec | None = None
            ) -> np.ndarray:
    """Controls for every robot from one history window: (N, D)."""
    spec = spec or params.spec
    if history.horizon != spec.horizon:
        raise ValueError(
            f"history horizon {history.horizon} != model horizon {spec.horizon}"
        )
    feats, aggs = history_arrays(history, dtype=params.dtype)
    with ad.no_grad():
        out = forward_batch(params, feats, aggs)
    return out.data[0]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(
    params: ModelParams,
    spec: ModelSpec,
    path: str,
    seed: int | None = None,
    swarm_config: SwarmConfig | None = None,
    extra: dict | None = None,
) -> None:
    """Write a manifest line plus little-endian float blobs, hash-guarded."""
    named = params.named_tensors()
    dtype_name = {np.dtype(np.float32): "float32",
                  np.dtype(np.float64): "float64"}[np.dtype(params.dtype)]
    np_dtype = "<f4" if dtype_name == "float32" else "<f8"
    payload = b"".join(
        np.ascontiguousarray(t.data, dtype=np_dtype).tobytes() for _, t in named
    )
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "dtype": dtype_name,
        "seed": seed,
        "tensors": [{"name": n, "shape": list(t.data.shape)} for n, t in named],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    if swarm_config is not None:
        cfg = swarm_config.to_dict()
        manifest["swarm_config"] = cfg
        manifest["config_hash"] = hashlib.sha256(
            json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()
    if extra:
        manifest["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_checkpoint(
    path: str, expected_variant: str | None = None
) -> tuple[ModelParams, ModelSpec, dict]:
    """Read and verify a checkpoint; byte-exact inverse of save_checkpoint."""
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    try:
        manifest = json.loads(header.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest in {path}: {exc}")
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {manifest.get('version')}"
        )
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError(f"checkpoint payload corrupt or truncated: {path}")
    spec = ModelSpec.from_dict(manifest["spec"])
    if expected_variant is not None and spec.variant != expected_variant:
        raise CheckpointError(
            f"checkpoint variant {spec.variant!r} != expected {expected_variant!r}"
        )
    if manifest.get("swarm_config") is not None:
        expect = hashlib.sha256(
            json.dumps(manifest["swarm_config"], sort_keys=True,
                       separators=(",", ":")).encode()
        ).hexdigest()
        if manifest.get("config_hash") != expect:
            raise CheckpointError(f"config hash mismatch in {path}")
    dtype = _DTYPE_NAMES[manifest["dtype"]]
    np_dtype = "<f4" if manifest["dtype"] == "float32" else "<f8"
    params = build_params(spec, seed=0, dtype=dtype)
    named = params.named_tensors()
    listed = manifest["tensors"]
    if [n for n, _ in named] != [t["name"] for t in listed]:
        raise CheckpointError(f"tensor layout mismatch in {path}")
    offset = 0
    itemsize = np.dtype(np_dtype).itemsize
    for (name, tensor), meta in zip(named, listed):
        shape = tuple(meta["shape"])
        if shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file {shape}, spec {tensor.data.shape}"
            )
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * itemsize
        if end > len(payload):
            raise CheckpointError(f"checkpoint payload truncated at {name}")
        tensor.data = (
            np.frombuffer(payload[offset:end], dtype=np_dtype)
            .reshape(shape).astype(dtype)
        )
        offset = end
    if offset != len(payload):
        raise CheckpointError(f"trailing bytes in checkpoint payload: {path}")
    return params, spec, manifest
