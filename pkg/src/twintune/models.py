"""Encoders, heads, freeze helpers, and bit-exact weight archives."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn
import torchvision.models

from .seeding import derive_seed

ENCODER_KINDS = ("tiny-conv", "resnet50-shape")
META_KEY = "__meta__"


class ArchiveError(RuntimeError):
    """Raised for malformed archive files or name/shape mismatches."""


@dataclass(frozen=True)
class EncoderSpec:
    """How to construct the feature extractor.

    ``init_seed`` fixes the random initialization so that rebuilding the
    same spec yields byte-identical encoder weights regardless of the run
    seed; run-to-run randomness enters through the head only.
    """

    kind: str = "resnet50-shape"
    output_dim: int = 2048
    init: str = "random"
    archive_path: str | None = None
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.output_dim <= 0:
            raise ValueError("output_dim must be positive")
        if self.kind == "resnet50-shape" and self.output_dim != 2048:
            raise ValueError("resnet50-shape encoders always emit 2048 features")
        if self.init not in ("random", "from-archive"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.init == "from-archive" and not self.archive_path:
            raise ValueError("init='from-archive' requires archive_path")


@dataclass(frozen=True)
class ProjectorSpec:
    """MLP head for the self-supervised phase: (Linear, BN, ReLU) x (layers-1)
    followed by a final Linear. Output dimension equals ``width``."""

    width: int = 8192
    layers: int = 3

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.layers < 2:
            raise ValueError("projector needs at least 2 layers")


@dataclass(frozen=True)
class LinearHeadSpec:
    """Single linear classification layer."""

    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")


class TinyConvEncoder(nn.Module):
    """Small four-stage CNN for desk-scale experiments.

    Three plain 3x3 stages followed by a final 1x1/3x3/1x1 block (attribute
    ``bottleneck``), mirroring the structure a partial unfreeze targets on
    the full-size residual encoder. Global average pooling makes the output
    dimension input-size independent.
    """

    bottleneck_tag = "bottleneck"

    def __init__(self, output_dim: int):
        super().__init__()
        if output_dim < 8:
            raise ValueError("tiny-conv needs output_dim >= 8")
        self.output_dim = output_dim
        w1 = max(8, output_dim // 8)
        w2 = max(16, output_dim // 4)
        w3 = max(32, output_dim // 2)
        mid = w3

        def stage(cin, cout):
            return nn.Sequential(
                nn.Conv2d(cin, cout, 3, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            )

        self.stage1 = stage(3, w1)
        self.stage2 = stage(w1, w2)
        self.stage3 = stage(w2, w3)
        self.bottleneck = nn.Sequential(
            nn.Conv2d(w3, mid, 1, bias=False),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, mid, 3, padding=1, bias=False),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, output_dim, 1, bias=False),
            nn.BatchNorm2d(output_dim),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        # variance-preserving init keeps random-encoder features at a usable
        # scale even with normalization layers in their identity (eval) state
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stage3(self.stage2(self.stage1(x)))
        x = self.bottleneck(x)
        return self.pool(x).flatten(1)


class Projector(nn.Module):
    """Projection MLP whose final linear weight carries the sparsity penalty."""

    def __init__(self, in_dim: int, spec: ProjectorSpec):
        super().__init__()
        mods: list[nn.Module] = []
        prev = in_dim
        for _ in range(spec.layers - 1):
            mods += [nn.Linear(prev, spec.width), nn.BatchNorm1d(spec.width), nn.ReLU(inplace=True)]
            prev = spec.width
        mods.append(nn.Linear(prev, spec.width))
        self.layers = nn.Sequential(*mods)
        self.output_dim = spec.width

    @property
    def final_weight(self) -> torch.Tensor:
        return self.layers[-1].weight

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class ComposedModel(nn.Module):
    """Encoder plus head; parameter names are ``encoder.*`` and ``head.*``."""

    def __init__(self, encoder: nn.Module, head: nn.Module):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(x))


def build_encoder(spec: EncoderSpec) -> nn.Module:
    """Construct the encoder for ``spec`` with deterministic weights."""
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(spec.init_seed, "encoder", spec.kind, spec.output_dim))
        if spec.kind == "tiny-conv":
            encoder = TinyConvEncoder(spec.output_dim)
        else:
            net = torchvision.models.resnet50(weights=None)
            net.fc = nn.Identity()
            net.output_dim = 2048
            net.bottleneck_tag = "layer4.2"
            encoder = net
    if spec.init == "from-archive":
        load_archive(spec.archive_path, encoder)
    return encoder


def build_model(
    enc: EncoderSpec,
    head: ProjectorSpec | LinearHeadSpec,
    *,
    seed: int = 0,
) -> ComposedModel:
    """Compose encoder and a freshly initialized head.

    The head draws its weights from ``seed``; the encoder does not, so two
    builds differing only in ``seed`` share encoder bytes exactly.
    """
    encoder = build_encoder(enc)
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "head"))
        if isinstance(head, ProjectorSpec):
            head_mod: nn.Module = Projector(encoder.output_dim, head)
        elif isinstance(head, LinearHeadSpec):
            head_mod = nn.Linear(encoder.output_dim, head.num_classes)
        else:
            raise TypeError(f"unsupported head spec {type(head).__name__}")
    return ComposedModel(encoder, head_mod)


def bottleneck_params(model: nn.Module) -> set[str]:
    """Parameter names of the encoder's tagged final block.

    For composed models the names carry the ``encoder.`` prefix. Raises for
    encoders that do not tag a block.
    """
    encoder = model.encoder if isinstance(model, ComposedModel) else model
    tag = getattr(encoder, "bottleneck_tag", None)
    if tag is None:
        raise ValueError("encoder has no tagged final block")
    prefix = ("encoder." if isinstance(model, ComposedModel) else "") + tag + "."
    names = {n for n, _ in model.named_parameters() if n.startswith(prefix)}
    if not names:
        raise ValueError(f"tag {tag!r} matched no parameters")
    return names


def set_trainable(model: nn.Module, trainable: Callable[[str], bool]) -> None:
    """Set requires_grad per parameter from a predicate over names."""
    for name, p in model.named_parameters():
        p.requires_grad_(bool(trainable(name)))


def freeze_all(model: nn.Module) -> None:
    set_trainable(model, lambda name: False)


def unfreeze_all(model: nn.Module) -> None:
    set_trainable(model, lambda name: True)


def train_with_freeze(model: nn.Module) -> None:
    """Enter training mode only where something can still learn.

    Modules whose subtree holds no trainable parameter stay in eval mode so
    their normalization statistics remain byte-identical; frozen means zero
    updates to parameters and buffers alike.
    """
    for m in model.modules():
        m.training = any(p.requires_grad for p in m.parameters())


def trainable_parameters(model: nn.Module) -> list[torch.nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def _to_le_bytes(t: torch.Tensor) -> tuple[np.ndarray, str]:
    arr = t.detach().cpu().contiguous().numpy()
    le = arr.dtype.newbyteorder("<")
    # asarray keeps 0-d shapes intact where ascontiguousarray would not
    arr = np.asarray(arr, dtype=le, order="C")
    return arr, le.str


def save_archive(model: nn.Module, path: str | Path, provenance: str = "unspecified") -> None:
    """Write every state-dict tensor (parameters and buffers) to ``path``.

    Layout: 8-byte little-endian header length, UTF-8 JSON header mapping
    tensor names to dtype/shape/offset/nbytes (plus a reserved metadata
    key), then the raw little-endian payload.
    """
    header: dict[str, object] = {META_KEY: {"provenance": provenance}}
    chunks: list[bytes] = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr, dtype = _to_le_bytes(tensor)
        raw = arr.tobytes()
        header[name] = {
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for raw in chunks:
            f.write(raw)


def read_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Parse an archive into {name: array} plus its metadata record."""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ArchiveError(f"{path}: truncated before header length")
    hlen = int.from_bytes(data[:8], "little")
    if 8 + hlen > len(data):
        raise ArchiveError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveError(f"{path}: corrupt header ({e})") from e
    meta = header.pop(META_KEY, {})
    payload = data[8 + hlen :]
    tensors: dict[str, np.ndarray] = {}
    for name, rec in header.items():
        start, nbytes = rec["offset"], rec["nbytes"]
        if start + nbytes > len(payload):
            raise ArchiveError(f"{path}: tensor {name!r} extends past payload")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=np.dtype(rec["dtype"]))
        tensors[name] = arr.reshape(rec["shape"])
    return tensors, meta


def load_archive(path: str | Path, model: nn.Module) -> dict:
    """Restore ``model`` bit-exactly from an archive; returns its metadata.

    The archive must cover the model's state dict exactly: missing and
    unexpected names are both reported by name.
    """
    tensors, meta = read_archive(path)
    state = model.state_dict()
    missing = sorted(set(state) - set(tensors))
    unexpected = sorted(set(tensors) - set(state))
    if missing or unexpected:
        raise ArchiveError(
            f"{path}: archive/model name mismatch; missing={missing}, unexpected={unexpected}"
        )
    with torch.no_grad():
        for name, tensor in state.items():
            arr = tensors[name]
            if list(arr.shape) != list(tensor.shape):
                raise ArchiveError(
                    f"{path}: shape mismatch for {name!r}: {list(arr.shape)} vs {list(tensor.shape)}"
                )
            src = torch.from_numpy(arr.copy())
            if src.dtype != tensor.dtype:
                raise ArchiveError(
                    f"{path}: dtype mismatch for {name!r}: {src.dtype} vs {tensor.dtype}"
                )
            tensor.copy_(src)
    return meta


def archive_hashes(path: str | Path) -> dict[str, str]:
    """Per-tensor content digests, for byte-identity comparisons."""
    tensors, _ = read_archive(path)
    out = {}
    for name, arr in tensors.items():
        h = hashlib.blake2b(digest_size=16)
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
        out[name] = h.hexdigest()
    return out
