"""ECG and report encoders plus the shared-space projectors.

The ECG side offers a 1D ResNet family (18/50/101) and a small 1D ViT; the
text side defaults to a fully offline hashing encoder (each token maps to a
fixed pseudo-random vector, reports are mean-pooled) so training and tests
never need network access or pretrained weights.  Clinical text encoders
plug in through the adapter registry.

Checkpoints are self-describing ``.npz`` containers: a JSON metadata blob
plus one float32 array per parameter, keyed by layer name, so they can be
read back without this package.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from .corpus import ECGRecord
from .errors import BatchShapeError, CapabilityError, ConfigurationError

ArrayLike = Union[np.ndarray, torch.Tensor]

ECG_BACKBONES = ("resnet1d_18", "resnet1d_50", "resnet1d_101", "vit1d_tiny")
NORM_EPS = 1e-12


@dataclass
class EncoderConfig:
    """Architecture hyperparameters for both modalities.

    ``ecg_embed_dim`` is fixed by the backbone; passing a value that differs
    from the backbone's native width is a configuration error.  Both
    projectors map into the same ``shared_dim`` through one hidden layer.
    """

    ecg_backbone: str = "resnet1d_18"
    ecg_embed_dim: Optional[int] = None
    text_encoder: str = "stub_hash"
    text_embed_dim: int = 384
    shared_dim: int = 256
    projector_hidden: int = 512
    vit_patch_len: int = 50
    text_trainable: bool = True

    def validate(self) -> None:
        if self.ecg_backbone not in ECG_BACKBONES:
            raise ConfigurationError(
                f"unknown ecg_backbone {self.ecg_backbone!r}; choose from {ECG_BACKBONES}"
            )
        for name, value in [
            ("text_embed_dim", self.text_embed_dim),
            ("shared_dim", self.shared_dim),
            ("projector_hidden", self.projector_hidden),
            ("vit_patch_len", self.vit_patch_len),
        ]:
            if int(value) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")


# ---------------------------------------------------------------------------
# 1D ResNet family
# ---------------------------------------------------------------------------


class BasicBlock1d(nn.Module):
    expansion = 1

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv1d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm1d(out_ch)
        self.conv2 = nn.Conv1d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm1d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or in_ch != out_ch * self.expansion:
            self.downsample = nn.Sequential(
                nn.Conv1d(in_ch, out_ch * self.expansion, 1, stride=stride, bias=False),
                nn.BatchNorm1d(out_ch * self.expansion),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class Bottleneck1d(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        width = out_ch
        self.conv1 = nn.Conv1d(in_ch, width, 1, bias=False)
        self.bn1 = nn.BatchNorm1d(width)
        self.conv2 = nn.Conv1d(width, width, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm1d(width)
        self.conv3 = nn.Conv1d(width, out_ch * self.expansion, 1, bias=False)
        self.bn3 = nn.BatchNorm1d(out_ch * self.expansion)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or in_ch != out_ch * self.expansion:
            self.downsample = nn.Sequential(
                nn.Conv1d(in_ch, out_ch * self.expansion, 1, stride=stride, bias=False),
                nn.BatchNorm1d(out_ch * self.expansion),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class ResNet1d(nn.Module):
    """Standard ResNet with 1D convolutions and global average pooling."""

    def __init__(self, block, layers: Sequence[int], in_channels: int = 12):
        super().__init__()
        self.in_channels = in_channels
        self.conv1 = nn.Conv1d(in_channels, 64, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm1d(64)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool1d(3, stride=2, padding=1)
        self._in = 64
        self.layer1 = self._make_layer(block, 64, layers[0], stride=1)
        self.layer2 = self._make_layer(block, 128, layers[1], stride=2)
        self.layer3 = self._make_layer(block, 256, layers[2], stride=2)
        self.layer4 = self._make_layer(block, 512, layers[3], stride=2)
        self.avgpool = nn.AdaptiveAvgPool1d(1)
        self.out_dim = 512 * block.expansion

    def _make_layer(self, block, out_ch: int, count: int, stride: int) -> nn.Sequential:
        blocks = [block(self._in, out_ch, stride)]
        self._in = out_ch * block.expansion
        for _ in range(count - 1):
            blocks.append(block(self._in, out_ch))
        return nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        x = self.layer4(self.layer3(self.layer2(self.layer1(x))))
        return self.avgpool(x).flatten(1)


class ViT1d(nn.Module):
    """Small transformer over non-overlapping temporal patches.

    A lead-mixing convolution with kernel = stride = patch length turns the
    (leads, samples) signal into a token sequence; fixed sinusoidal position
    encodings keep the module usable at any divisible length, and token
    features are mean-pooled into the embedding.
    """

    def __init__(
        self,
        in_channels: int = 12,
        patch_len: int = 50,
        dim: int = 192,
        depth: int = 12,
        heads: int = 3,
    ):
        super().__init__()
        self.patch_len = patch_len
        self.patch_embed = nn.Conv1d(in_channels, dim, patch_len, stride=patch_len)
        layer = nn.TransformerEncoderLayer(
            d_model=dim,
            nhead=heads,
            dim_feedforward=dim * 4,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=depth, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(dim)
        self.out_dim = dim

    def num_tokens(self, num_samples: int) -> int:
        if num_samples % self.patch_len != 0:
            raise ConfigurationError(
                f"num_samples ({num_samples}) must be divisible by the "
                f"patch length ({self.patch_len})"
            )
        return num_samples // self.patch_len

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.num_tokens(x.shape[-1])
        tokens = self.patch_embed(x).transpose(1, 2)  # (B, T, dim)
        tokens = tokens + _sinusoidal_positions(
            tokens.shape[1], tokens.shape[2], tokens.device, tokens.dtype
        )
        tokens = self.blocks(tokens)
        return self.norm(tokens).mean(dim=1)


def _sinusoidal_positions(
    length: int, dim: int, device: torch.device, dtype: torch.dtype
) -> torch.Tensor:
    position = torch.arange(length, device=device, dtype=torch.float64)[:, None]
    div = torch.exp(
        torch.arange(0, dim, 2, device=device, dtype=torch.float64)
        * (-math.log(10000.0) / dim)
    )
    enc = torch.zeros(length, dim, device=device, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(position * div)
    enc[:, 1::2] = torch.cos(position * div[: enc[:, 1::2].shape[1]])
    return enc.to(dtype)[None]


def build_ecg_encoder(config: EncoderConfig, in_channels: int = 12) -> nn.Module:
    """Instantiate the configured ECG backbone; the module exposes ``out_dim``."""
    config.validate()
    if config.ecg_backbone == "resnet1d_18":
        encoder: nn.Module = ResNet1d(BasicBlock1d, [2, 2, 2, 2], in_channels)
    elif config.ecg_backbone == "resnet1d_50":
        encoder = ResNet1d(Bottleneck1d, [3, 4, 6, 3], in_channels)
    elif config.ecg_backbone == "resnet1d_101":
        encoder = ResNet1d(Bottleneck1d, [3, 4, 23, 3], in_channels)
    else:
        encoder = ViT1d(in_channels, patch_len=config.vit_patch_len)
    if config.ecg_embed_dim is not None and config.ecg_embed_dim != encoder.out_dim:
        raise ConfigurationError(
            f"ecg_embed_dim {config.ecg_embed_dim} does not match the "
            f"{config.ecg_backbone} output width {encoder.out_dim}"
        )
    return encoder


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# ---------------------------------------------------------------------------
# Text encoders
# ---------------------------------------------------------------------------


class TextEncoder(Protocol):
    dim: int

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...


class StubHashTextEncoder:
    """Deterministic offline text encoder.

    Each lowercase whitespace token is mapped to a fixed pseudo-random vector
    seeded by a stable digest of the token; a report embeds as the mean of
    its token vectors.  The mapping has no trainable state, so report
    embeddings can be computed once and cached.
    """

    def __init__(self, dim: int = 384):
        self.dim = dim
        self._cache: Dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim).astype(np.float32)
            self._cache[token] = vec
        return vec

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            tokens = text.lower().split()
            if not tokens:
                continue
            out[i] = np.mean([self._token_vector(t) for t in tokens], axis=0)
        return out


TEXT_ADAPTERS: Dict[str, Callable[[EncoderConfig], TextEncoder]] = {}


def register_text_adapter(
    name: str, factory: Callable[[EncoderConfig], TextEncoder]
) -> None:
    """Expose an external text encoder (contract: ``encode(texts) -> (L, dim)``
    float matrix plus a ``dim`` attribute) under ``adapter:<name>``."""
    TEXT_ADAPTERS[name] = factory


def build_text_encoder(config: EncoderConfig) -> TextEncoder:
    if config.text_encoder == "stub_hash":
        return StubHashTextEncoder(config.text_embed_dim)
    if config.text_encoder.startswith("adapter:"):
        name = config.text_encoder.split(":", 1)[1]
        factory = TEXT_ADAPTERS.get(name)
        if factory is None:
            raise CapabilityError(
                f"text adapter {name!r} is not registered; available: "
                f"{sorted(TEXT_ADAPTERS) or 'none'}",
                adapter=name,
            )
        return factory(config)
    raise ConfigurationError(
        f"unknown text_encoder {config.text_encoder!r}; use 'stub_hash' or 'adapter:<name>'"
    )


def encode_report_batch(texts: Sequence[str], encoder: TextEncoder) -> np.ndarray:
    """Embed reports; row i corresponds to report i."""
    out = np.asarray(encoder.encode(list(texts)), dtype=np.float32)
    if out.shape != (len(texts), encoder.dim):
        raise BatchShapeError(
            f"text encoder returned shape {out.shape}, expected {(len(texts), encoder.dim)}"
        )
    return out


# ---------------------------------------------------------------------------
# Projection into the shared space
# ---------------------------------------------------------------------------


def build_projector(in_dim: int, config: EncoderConfig) -> nn.Module:
    return nn.Sequential(
        nn.Linear(in_dim, config.projector_hidden),
        nn.ReLU(inplace=True),
        nn.Linear(config.projector_hidden, config.shared_dim),
    )


def normalize_rows(x: torch.Tensor) -> torch.Tensor:
    """Scale each row to unit L2 norm, warning on (near-)zero rows instead of
    dividing by zero."""
    norms = x.norm(dim=-1, keepdim=True)
    if bool((norms.detach() < NORM_EPS).any()):
        warnings.warn(
            "normalizing a zero vector; output row is epsilon-guarded",
            RuntimeWarning,
            stacklevel=2,
        )
    return x / norms.clamp_min(NORM_EPS)


def project_and_normalize(z: ArrayLike, projector: nn.Module) -> ArrayLike:
    """Apply a projector and unit-normalize rows.

    Tensor inputs stay tensors (gradients flow); numpy inputs come back as
    numpy.
    """
    is_numpy = isinstance(z, np.ndarray)
    dtype = next(projector.parameters()).dtype
    zt = torch.as_tensor(z, dtype=dtype) if is_numpy else z.to(dtype)
    expected = projector[0].in_features
    if zt.shape[-1] != expected:
        raise BatchShapeError(
            f"projector expects input dim {expected}, got {zt.shape[-1]}"
        )
    out = normalize_rows(projector(zt))
    if is_numpy:
        with torch.no_grad():
            return out.detach().cpu().numpy()
    return out


# ---------------------------------------------------------------------------
# The combined two-tower model
# ---------------------------------------------------------------------------


def _stack_signals(records: Sequence[ECGRecord] | ArrayLike) -> np.ndarray:
    if isinstance(records, (np.ndarray, torch.Tensor)):
        arr = np.asarray(records, dtype=np.float32)
        if arr.ndim != 3:
            raise BatchShapeError(
                f"expected (batch, leads, samples) array, got shape {arr.shape}"
            )
        return arr
    shapes = {r.signal.shape for r in records}
    if len(shapes) > 1:
        raise BatchShapeError(
            f"records in a batch must share (num_leads, num_samples); saw {sorted(shapes)}"
        )
    return np.stack([r.signal for r in records]).astype(np.float32)


class MerlModel:
    """ECG encoder + text encoder + the two shared-space projectors."""

    def __init__(
        self, config: EncoderConfig, in_channels: int = 12, seed: int = 0
    ):
        config.validate()
        self.config = config
        self.in_channels = in_channels
        torch.manual_seed(seed & 0xFFFFFFFF)
        self.ecg_encoder = build_ecg_encoder(config, in_channels)
        self.ecg_projector = build_projector(self.ecg_encoder.out_dim, config)
        self.text_encoder = build_text_encoder(config)
        self.text_projector = build_projector(self.text_encoder.dim, config)

    # -- mode / parameter plumbing ------------------------------------------

    def modules(self) -> Dict[str, nn.Module]:
        return {
            "ecg_encoder": self.ecg_encoder,
            "ecg_projector": self.ecg_projector,
            "text_projector": self.text_projector,
        }

    def train(self) -> "MerlModel":
        for m in self.modules().values():
            m.train()
        return self

    def eval(self) -> "MerlModel":
        for m in self.modules().values():
            m.eval()
        return self

    def parameters(self):
        for m in self.modules().values():
            yield from m.parameters()

    # -- encoding -------------------------------------------------------------

    def encode_ecg(self, records: Sequence[ECGRecord] | ArrayLike) -> torch.Tensor:
        """Encoder output z_e (pre-projection), differentiable."""
        arr = _stack_signals(records)
        dtype = next(self.ecg_encoder.parameters()).dtype
        return self.ecg_encoder(torch.as_tensor(arr, dtype=dtype))

    def encode_reports(self, texts: Sequence[str]) -> np.ndarray:
        return encode_report_batch(texts, self.text_encoder)

    def project(self, z: ArrayLike, which: str) -> ArrayLike:
        if which == "ecg":
            return project_and_normalize(z, self.ecg_projector)
        if which == "text":
            return project_and_normalize(z, self.text_projector)
        raise ConfigurationError(f"which must be 'ecg' or 'text', got {which!r}")

    @torch.no_grad()
    def embed_ecg(
        self, records: Sequence[ECGRecord] | ArrayLike, batch_size: int = 256
    ) -> np.ndarray:
        """Unit-norm projected ECG embeddings, evaluation mode."""
        self.eval()
        arr = _stack_signals(records)
        if arr.shape[0] == 0:
            return np.zeros((0, self.config.shared_dim), dtype=np.float32)
        rows = []
        for start in range(0, arr.shape[0], batch_size):
            z = self.encode_ecg(arr[start : start + batch_size])
            rows.append(self.project(z, "ecg").cpu().numpy())
        return np.concatenate(rows, axis=0)

    @torch.no_grad()
    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        self.eval()
        z = self.encode_reports(texts)
        return self.project(z, "text")

    @torch.no_grad()
    def ecg_features(
        self, records: Sequence[ECGRecord] | ArrayLike, batch_size: int = 256
    ) -> np.ndarray:
        """Pre-projection encoder features z_e, evaluation mode."""
        self.eval()
        arr = _stack_signals(records)
        if arr.shape[0] == 0:
            return np.zeros((0, self.ecg_encoder.out_dim), dtype=np.float32)
        rows = []
        for start in range(0, arr.shape[0], batch_size):
            rows.append(self.encode_ecg(arr[start : start + batch_size]).cpu().numpy())
        return np.concatenate(rows, axis=0)

    # -- integrity ------------------------------------------------------------

    def encoder_state_hash(self) -> str:
        """Digest of the ECG encoder weights; used to assert frozen protocols."""
        h = hashlib.sha256()
        state = self.ecg_encoder.state_dict()
        for name in sorted(state):
            h.update(name.encode("utf-8"))
            h.update(state[name].detach().cpu().numpy().astype(np.float32).tobytes())
        return h.hexdigest()


def encode_ecg_batch(
    records: Sequence[ECGRecord] | ArrayLike, model: MerlModel, batch_size: int = 256
) -> np.ndarray:
    """Evaluation-mode encoder features (L x D_e); row i is record i."""
    return model.ecg_features(records, batch_size=batch_size)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "merl-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    model: MerlModel,
    path: str | Path,
    extra_meta: Optional[dict] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder_config": asdict(model.config),
        "in_channels": model.in_channels,
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays: Dict[str, np.ndarray] = {}
    for part, module in model.modules().items():
        for name, tensor in module.state_dict().items():
            arrays[f"{part}/{name}"] = tensor.detach().cpu().numpy().astype(np.float32)
    buffer = io.BytesIO()
    np.savez(buffer, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)
    path.write_bytes(buffer.getvalue())
    return path


def load_checkpoint(path: str | Path) -> Tuple[MerlModel, dict]:
    path = Path(path)
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        config = EncoderConfig(**meta["encoder_config"])
        model = MerlModel(config, in_channels=int(meta.get("in_channels", 12)))
        for part, module in model.modules().items():
            state = {}
            prefix = part + "/"
            for key in data.files:
                if key.startswith(prefix):
                    reference = module.state_dict()[key[len(prefix):]]
                    state[key[len(prefix):]] = torch.as_tensor(
                        data[key], dtype=reference.dtype
                    )
            module.load_state_dict(state)
    model.eval()
    return model, meta
