"""Differentiable 1D blocks: heart-sound encoder, fusion bottleneck, ECG decoder,
feature discriminator (Net1D), its mirror (DeNet1D) and the direct-path heads.

All modules take windows shaped ``(N, L)`` or ``(N, C, L)`` and work on any
``channel_scale`` in the ladder 1 ... 1/32 without padding fixes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .exceptions import ConfigurationError, NonFiniteError

WINDOW = 2048
SCALES = (Fraction(1), Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 16), Fraction(1, 32))
HEAD_KINDS = ("classifier", "segmenter", "regressor", "ecg_decoder")


def parse_scale(value) -> Fraction:
    """Accept ``Fraction``, ``"1/8"``, ``0.125`` or ``1``."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    return Fraction(value).limit_denominator(1024)


@dataclass(frozen=True)
class BlockGraph:
    channel_scale: Fraction = Fraction(1)
    base_widths: tuple = (32, 64, 128)
    disc_widths: tuple = (32, 32, 64, 64, 128, 128)
    head_width: int = 32
    kernel_size: int = 7
    n_subjects: int = 30
    disc_scale: Fraction | None = None  # None: the discriminator follows channel_scale

    def __post_init__(self):
        object.__setattr__(self, "channel_scale", parse_scale(self.channel_scale))
        if self.disc_scale is not None:
            object.__setattr__(self, "disc_scale", parse_scale(self.disc_scale))
            if not 0 < self.disc_scale <= 1:
                raise ConfigurationError(f"disc_scale must lie in (0, 1], got {self.disc_scale}")
        object.__setattr__(self, "base_widths", tuple(int(w) for w in self.base_widths))
        object.__setattr__(self, "disc_widths", tuple(int(w) for w in self.disc_widths))
        if self.channel_scale <= 0 or self.channel_scale > 1:
            raise ConfigurationError(f"channel_scale must lie in (0, 1], got {self.channel_scale}")
        if len(self.base_widths) != 3:
            raise ConfigurationError("encoder has exactly 3 stages")
        if self.kernel_size % 2 != 1:
            raise ConfigurationError("kernel_size must be odd")

    def width(self, base: int) -> int:
        return max(1, int(np.floor(base * self.channel_scale)))

    @property
    def encoder_widths(self) -> tuple:
        return tuple(self.width(w) for w in self.base_widths)

    @property
    def bottleneck_width(self) -> int:
        return self.encoder_widths[-1]

    @property
    def disc_channels(self) -> tuple:
        scale = self.channel_scale if self.disc_scale is None else self.disc_scale
        return tuple(max(1, int(np.floor(w * scale))) for w in self.disc_widths)

    @property
    def discriminator_depth(self) -> int:
        return len(self.disc_widths)

    @property
    def embedding_shape(self) -> tuple:
        """(C, L) of the discriminator's last-stage feature map."""
        return self.disc_channels[-1], WINDOW >> self.discriminator_depth

    def with_scale(self, scale) -> "BlockGraph":
        d = self.to_dict()
        d["channel_scale"] = str(parse_scale(scale))
        return BlockGraph.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_scale"] = str(self.channel_scale)
        d["base_widths"] = list(self.base_widths)
        d["disc_widths"] = list(self.disc_widths)
        d["disc_scale"] = None if self.disc_scale is None else str(self.disc_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BlockGraph":
        return cls(**d)


def as_channels(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x.unsqueeze(1)
    if x.dim() != 3:
        raise ConfigurationError(f"expected (N, L) or (N, C, L), got shape {tuple(x.shape)}")
    return x


def _check_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteError(f"non-finite activation at {where}")
    return x


class ResBlock1d(nn.Module):
    """Pre-activation residual block: (BN, ReLU, conv) x 2 plus shortcut.

    The first conv carries the stride; the shortcut is identity when shapes
    agree and a strided point-wise conv otherwise.
    """

    def __init__(self, c_in: int, c_out: int, stride: int = 1, kernel_size: int = 7):
        super().__init__()
        pad = kernel_size // 2
        self.bn1 = nn.BatchNorm1d(c_in)
        self.conv1 = nn.Conv1d(c_in, c_out, kernel_size, stride=stride, padding=pad)
        self.bn2 = nn.BatchNorm1d(c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel_size, padding=pad)
        self.act = nn.ReLU()
        if stride == 1 and c_in == c_out:
            self.shortcut = nn.Identity()
        else:
            self.shortcut = nn.Conv1d(c_in, c_out, 1, stride=stride)

    def forward(self, x):
        h = self.conv1(self.act(self.bn1(x)))
        h = self.conv2(self.act(self.bn2(h)))
        return h + self.shortcut(x)


class UpBlock1d(nn.Module):
    """Transposed counterpart of a stride-2 ``ResBlock1d``: doubles the length."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int = 7):
        super().__init__()
        pad = kernel_size // 2
        self.bn1 = nn.BatchNorm1d(c_in)
        self.conv1 = nn.ConvTranspose1d(c_in, c_out, 4, stride=2, padding=1)
        self.bn2 = nn.BatchNorm1d(c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel_size, padding=pad)
        self.act = nn.ReLU()
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.shortcut = nn.Identity() if c_in == c_out else nn.Conv1d(c_in, c_out, 1)

    def forward(self, x):
        h = self.conv1(self.act(self.bn1(x)))
        h = self.conv2(self.act(self.bn2(h)))
        return h + self.shortcut(self.up(x))


class HSEncoder(nn.Module):
    """Three stride-2 residual stages; returns all three feature maps."""

    def __init__(self, graph: BlockGraph, in_channels: int = 1):
        super().__init__()
        widths = graph.encoder_widths
        k = graph.kernel_size
        self.stages = nn.ModuleList()
        c = in_channels
        for w in widths:
            self.stages.append(ResBlock1d(c, w, stride=2, kernel_size=k))
            c = w

    def forward(self, x):
        h = as_channels(x)
        if h.shape[-1] != WINDOW:
            raise ConfigurationError(f"encoder expects length {WINDOW}, got {h.shape[-1]}")
        maps = []
        for i, stage in enumerate(self.stages):
            h = _check_finite(stage(h), f"encoder stage {i + 1}")
            maps.append(h)
        return maps


class FusionBottleneck(nn.Module):
    """Align shallow maps to the deepest resolution, concatenate, condense, refine."""

    def __init__(self, graph: BlockGraph):
        super().__init__()
        w1, w2, w3 = graph.encoder_widths
        k = graph.kernel_size
        self.align1 = nn.Sequential(
            nn.Conv1d(w1, w1, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv1d(w1, w1, 3, stride=2, padding=1),
        )
        self.align2 = nn.Conv1d(w2, w2, 3, stride=2, padding=1)
        self.condense = nn.Conv1d(w1 + w2 + w3, graph.bottleneck_width, 1)
        self.block4 = ResBlock1d(graph.bottleneck_width, graph.bottleneck_width, kernel_size=k)

    def aligned(self, maps, use_shallow: bool = True):
        m1, m2, m3 = maps
        a1, a2 = self.align1(m1), self.align2(m2)
        if not use_shallow:
            a1, a2 = torch.zeros_like(a1), torch.zeros_like(a2)
        if not (a1.shape[-1] == a2.shape[-1] == m3.shape[-1]):
            raise ConfigurationError(
                f"fusion alignment mismatch: {a1.shape[-1]}, {a2.shape[-1]}, {m3.shape[-1]}"
            )
        return torch.cat([a1, a2, m3], dim=1)

    def forward(self, maps, use_shallow: bool = True):
        stack = self.aligned(maps, use_shallow)
        return _check_finite(self.block4(self.condense(stack)), "bottleneck")


class ECGDecoder(nn.Module):
    """Mirror of ``HSEncoder``: three up-stages then a linear output conv."""

    def __init__(self, graph: BlockGraph, out_channels: int = 1):
        super().__init__()
        w1, w2, w3 = graph.encoder_widths
        k = graph.kernel_size
        self.stages = nn.ModuleList([
            UpBlock1d(w3, w2, k),
            UpBlock1d(w2, w1, k),
            UpBlock1d(w1, w1, k),
        ])
        self.out = nn.Conv1d(w1, out_channels, k, padding=k // 2)
        self.out_channels = out_channels

    def forward(self, phi):
        h = phi
        for stage in self.stages:
            h = stage(h)
        y = self.out(h)
        if y.shape[-1] != WINDOW:
            raise ConfigurationError(f"decoder produced length {y.shape[-1]}, expected {WINDOW}")
        return y.squeeze(1) if self.out_channels == 1 else y


class AutoEncoder(nn.Module):
    """encode -> fuse -> decode for one modality."""

    def __init__(self, graph: BlockGraph):
        super().__init__()
        self.graph = graph
        self.pretrained = False
        self.encoder = HSEncoder(graph)
        self.bottleneck = FusionBottleneck(graph)
        self.decoder = ECGDecoder(graph)

    def embed(self, x):
        return self.bottleneck(self.encoder(x))

    def forward(self, x):
        return self.decoder(self.embed(x))


class Generator(nn.Module):
    """Heart sound -> ECG: ``D_ecg(BN(E_hs(s_hs)))`` built from two pretrained autoencoders."""

    def __init__(self, encoder: HSEncoder, bottleneck: FusionBottleneck, decoder: ECGDecoder):
        super().__init__()
        self.encoder = encoder
        self.bottleneck = bottleneck
        self.decoder = decoder

    def forward(self, hs):
        return self.decoder(self.bottleneck(self.encoder(hs)))


class Net1D(nn.Module):
    """Deep residual feature extractor used as the frozen perceptual discriminator.

    ``classifier`` exists only for pretraining on subject identity and is
    ignored by ``features``.
    """

    def __init__(self, graph: BlockGraph, n_classes: int | None = None):
        super().__init__()
        self.graph = graph
        chans = graph.disc_channels
        k = graph.kernel_size
        self.stem = nn.Conv1d(1, chans[0], k, padding=k // 2)
        self.stages = nn.ModuleList()
        c = chans[0]
        for w in chans:
            self.stages.append(ResBlock1d(c, w, stride=2, kernel_size=k))
            c = w
        self.norm = nn.BatchNorm1d(c)
        self.classifier = nn.Linear(c, n_classes or graph.n_subjects)
        self.pretrained = False

    def features(self, x, all_stages: bool = False):
        h = self.stem(as_channels(x))
        outs = []
        for stage in self.stages:
            h = stage(h)
            outs.append(h)
        outs[-1] = torch.relu(self.norm(outs[-1]))
        return outs if all_stages else outs[-1]

    def forward(self, x):
        return self.classifier(self.features(x).mean(dim=-1))


def discriminate(net: Net1D, x, all_stages: bool = False):
    """Embedding M(x) of an ECG batch; refuses an unpretrained discriminator."""
    if not net.pretrained:
        raise ConfigurationError("discriminator used before pretraining")
    return net.features(x, all_stages=all_stages)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


class DeNet1D(nn.Module):
    """Inverse-shaped mirror of ``Net1D``: one up-stage per discriminator stage."""

    def __init__(self, graph: BlockGraph, out_channels: int):
        super().__init__()
        chans = graph.disc_channels[::-1]
        k = graph.kernel_size
        self.stages = nn.ModuleList()
        for i, c in enumerate(chans):
            nxt = chans[i + 1] if i + 1 < len(chans) else chans[-1]
            self.stages.append(UpBlock1d(c, nxt, k))
        self.out = nn.Conv1d(chans[-1], out_channels, k, padding=k // 2)
        self.out_channels = out_channels

    def forward(self, f):
        h = f
        for stage in self.stages:
            h = stage(h)
        return self.out(h)


class PooledClassifier(nn.Module):
    def __init__(self, in_channels: int, n_classes: int):
        super().__init__()
        self.fc = nn.Linear(in_channels, n_classes)

    def forward(self, f):
        return self.fc(f.mean(dim=-1))


class UpsamplingHead(nn.Module):
    """Light transposed-conv stack from bottleneck length back to the window length."""

    def __init__(self, in_channels: int, hidden: int, out_channels: int, n_up: int, kernel_size: int = 7):
        super().__init__()
        layers = []
        c = in_channels
        for _ in range(n_up):
            layers += [nn.ConvTranspose1d(c, hidden, 4, stride=2, padding=1), nn.ReLU()]
            c = hidden
        layers.append(nn.Conv1d(c, out_channels, kernel_size, padding=kernel_size // 2))
        self.net = nn.Sequential(*layers)

    def forward(self, phi):
        return self.net(phi)


def head_outputs(kind: str, n_classes: int | None = None) -> int:
    if kind == "classifier":
        if not n_classes:
            raise ConfigurationError("classifier head needs n_classes")
        return n_classes
    if kind == "segmenter":
        return 6
    if kind in ("regressor", "ecg_decoder"):
        return 1
    raise ConfigurationError(f"unknown head kind {kind!r}; choose from {HEAD_KINDS}")


def build_head(graph: BlockGraph, kind: str, path: str, n_classes: int | None = None) -> nn.Module:
    """Task head for the direct (bottleneck input) or indirect (Net1D features) path."""
    n_out = head_outputs(kind, n_classes)
    if path == "direct":
        c_in = graph.bottleneck_width
        if kind == "classifier":
            return PooledClassifier(c_in, n_out)
        return UpsamplingHead(c_in, graph.width(graph.head_width), n_out, n_up=3, kernel_size=graph.kernel_size)
    if path == "indirect":
        c_in = graph.disc_channels[-1]
        if kind == "classifier":
            return PooledClassifier(c_in, n_out)
        return DeNet1D(graph, n_out)
    raise ConfigurationError(f"unknown path {path!r}")


def head_forward(head: nn.Module, features, kind: str, n_classes: int | None = None):
    """Apply ``head`` and enforce its output shape contract."""
    y = head(features)
    n_out = head_outputs(kind, n_classes)
    if kind == "classifier":
        ok = y.dim() == 2 and y.shape[1] == n_out
    else:
        ok = y.dim() == 3 and y.shape[1] == n_out and y.shape[2] == WINDOW
    if not ok:
        raise ConfigurationError(f"{kind} head produced shape {tuple(y.shape)}")
    if kind in ("regressor", "ecg_decoder"):
        y = y.squeeze(1)
    return y


def n_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_hash(module: nn.Module) -> str:
    """Digest of every parameter and buffer, used to prove freezing."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# checkpoint container: magic, u64 header length, JSON header, raw '<f4' payload
_MAGIC = b"TRIDPCK1"


def save_checkpoint(path, modules: dict, graph: BlockGraph, meta: dict | None = None) -> Path:
    path = Path(path)
    tensors = []
    blobs = []
    offset = 0
    for mod_name, module in modules.items():
        for name, t in module.state_dict().items():
            arr = t.detach().cpu().numpy().astype("<f4")
            blob = arr.tobytes()
            tensors.append({
                "name": f"{mod_name}.{name}",
                "shape": list(arr.shape),
                "dtype": str(t.dtype).replace("torch.", ""),
                "offset": offset,
                "nbytes": len(blob),
            })
            blobs.append(blob)
            offset += len(blob)
    flags = {name: bool(getattr(m, "pretrained", False)) for name, m in modules.items()}
    header = {
        "graph": graph.to_dict(),
        "modules": list(modules),
        "pretrained": flags,
        "tensors": tensors,
        "meta": meta or {},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def read_checkpoint(path) -> tuple[BlockGraph, dict, dict]:
    """Return ``(graph, {module: state_dict}, header)``."""
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ConfigurationError(f"{path} is not a checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n])
    payload = memoryview(data)[16 + n:]
    states: dict = {name: {} for name in header["modules"]}
    for t in header["tensors"]:
        arr = np.frombuffer(payload[t["offset"]:t["offset"] + t["nbytes"]], dtype="<f4").reshape(t["shape"])
        mod_name, key = t["name"].split(".", 1)
        tensor = torch.from_numpy(arr.copy()).to(getattr(torch, t["dtype"]))
        states[mod_name][key] = tensor
    return BlockGraph.from_dict(header["graph"]), states, header


def load_into(path, modules: dict) -> dict:
    """Load named modules from a checkpoint in place; returns the header."""
    _, states, header = read_checkpoint(path)
    for name, module in modules.items():
        if name not in states:
            raise ConfigurationError(f"checkpoint {path} has no module {name!r}")
        module.load_state_dict(states[name])
        if hasattr(module, "pretrained"):
            module.pretrained = header["pretrained"].get(name, False)
    return header
