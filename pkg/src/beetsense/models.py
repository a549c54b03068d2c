"""Convolutional autoencoders over sub-patch tensors and latent extraction.

The 3D autoencoder keeps the (T=7, H=4, W=4) spatiotemporal grid intact
(kernel 3, stride 1, same-padding) while widening the channel axis, then maps
the flattened activation to the latent vector through one fully connected
layer; the decoder mirrors this with transposed 3D convolutions and a linear
output layer. The 2D baseline applies the identical scheme with 2D
convolutions after stacking the 7 temporal instances along the channel axis;
it never receives temporal encodings.

Training minimizes the per-example squared reconstruction error averaged
over the batch. Date encodings, when enabled, are added to the inputs only;
the reconstruction target stays the raw tensor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import DivergedLoss, EmptyStore, InvalidSpec, ShapeMismatch, VariantMismatch
from .temporal_encoding import encoding_offsets

SUBPATCH_SHAPE = (7, 4, 4)  # (T, H, W) of every model input


@dataclass
class AutoencoderSpec:
    kind: str                 # "ae3d" | "ae2d"
    in_channels: int          # variant C for ae3d, C*7 for ae2d
    conv_widths: list[int] = field(default_factory=lambda: [32, 64])
    latent_dim: int = 64

    def validate(self) -> None:
        if self.kind not in ("ae3d", "ae2d"):
            raise InvalidSpec(f"unknown autoencoder kind {self.kind!r}")
        if self.in_channels < 1:
            raise InvalidSpec(f"in_channels must be positive, got {self.in_channels}")
        if not self.conv_widths or any(w < 1 for w in self.conv_widths):
            raise InvalidSpec(f"conv_widths must be positive, got {self.conv_widths}")
        if self.latent_dim < 1:
            raise InvalidSpec(f"latent_dim must be positive, got {self.latent_dim}")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    train_fraction: float = 0.8


@dataclass
class LatentFeature:
    field_id: int
    grid_row: int
    grid_col: int
    z: np.ndarray


def mse_loss(x, x_hat):
    """Mean over examples of the squared Euclidean norm of (x_i - x_hat_i).

    Accepts torch tensors (differentiable, returns a scalar tensor) or array
    likes (returns a float). The norm runs over all elements of one example.
    """
    if isinstance(x, torch.Tensor) or isinstance(x_hat, torch.Tensor):
        if x.shape != x_hat.shape:
            raise ShapeMismatch(f"{tuple(x.shape)} vs {tuple(x_hat.shape)}")
        if x.shape[0] < 1:
            raise ShapeMismatch("need at least one example")
        diff = x - x_hat
        return diff.reshape(diff.shape[0], -1).pow(2).sum(dim=1).mean()
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeMismatch(f"{x.shape} vs {x_hat.shape}")
    if x.shape[0] < 1:
        raise ShapeMismatch("need at least one example")
    diff = (x - x_hat).reshape(x.shape[0], -1)
    return float(np.mean(np.sum(diff * diff, axis=1)))


class Autoencoder(nn.Module):
    """Mirror-symmetric convolutional autoencoder, 3D or 2D per spec.kind."""

    def __init__(self, spec: AutoencoderSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        conv = nn.Conv3d if spec.kind == "ae3d" else nn.Conv2d
        deconv = nn.ConvTranspose3d if spec.kind == "ae3d" else nn.ConvTranspose2d
        t, h, w = SUBPATCH_SHAPE
        spatial = t * h * w if spec.kind == "ae3d" else h * w
        self._body_shape = (
            (spec.conv_widths[-1], t, h, w) if spec.kind == "ae3d"
            else (spec.conv_widths[-1], h, w)
        )

        enc_layers: list[nn.Module] = []
        prev = spec.in_channels
        for width in spec.conv_widths:
            enc_layers += [conv(prev, width, kernel_size=3, stride=1, padding=1), nn.ReLU()]
            prev = width
        self.encoder_convs = nn.Sequential(*enc_layers)
        flat = spec.conv_widths[-1] * spatial
        self.fc_enc = nn.Linear(flat, spec.latent_dim)
        self.fc_dec = nn.Linear(spec.latent_dim, flat)

        dec_layers: list[nn.Module] = []
        widths = list(reversed(spec.conv_widths))
        for i, width in enumerate(widths):
            out = widths[i + 1] if i + 1 < len(widths) else spec.in_channels
            dec_layers.append(deconv(width, out, kernel_size=3, stride=1, padding=1))
            if i + 1 < len(widths):
                dec_layers.append(nn.ReLU())
        self.decoder_convs = nn.Sequential(*dec_layers)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h = self.encoder_convs(x)
        return self.fc_enc(h.reshape(h.shape[0], -1))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = self.fc_dec(z).reshape(z.shape[0], *self._body_shape)
        return self.decoder_convs(h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


def build(spec: AutoencoderSpec, seed: int) -> Autoencoder:
    """Construct an autoencoder with parameters initialized deterministically."""
    torch.manual_seed(seed)
    return Autoencoder(spec)


def _to_model_layout(x: torch.Tensor, kind: str) -> torch.Tensor:
    # records are (N, T, C, H, W); ae3d wants (N, C, T, H, W), ae2d (N, T*C, H, W)
    if kind == "ae3d":
        return x.permute(0, 2, 1, 3, 4).contiguous()
    n, t, c, h, w = x.shape
    return x.reshape(n, t * c, h, w)


def _check_variant(spec: AutoencoderSpec, tensors: np.ndarray) -> None:
    c = tensors.shape[2]
    expected = c if spec.kind == "ae3d" else c * tensors.shape[1]
    if spec.in_channels != expected:
        raise VariantMismatch(
            f"model expects {spec.in_channels} input channels, store provides {expected}"
        )


def _encoded_inputs(tensors: np.ndarray, dates: np.ndarray, use_encodings: bool,
                    encoding_mode: str) -> torch.Tensor:
    x = torch.from_numpy(np.ascontiguousarray(tensors, dtype=np.float32))
    if not use_encodings:
        return x
    offsets = np.stack(
        [encoding_offsets(row, tensors.shape[2], mode=encoding_mode) for row in dates]
    ).astype(np.float32)
    return x + torch.from_numpy(offsets)[:, :, :, None, None]


def train(model: Autoencoder, tensors: np.ndarray, dates: np.ndarray, cfg: TrainConfig,
          use_encodings: bool = False, encoding_mode: str = "split") -> list[dict]:
    """Train in place; returns the per-epoch train/test loss history.

    Records split 80/20 by a seeded shuffle; every forward pass sees the
    (optionally encoded) input while the loss target is the raw tensor.
    """
    n = tensors.shape[0]
    if n == 0:
        raise EmptyStore("no records to train on")
    n_train = int(round(cfg.train_fraction * n))
    if n_train < 1 or n - n_train < 1:
        raise EmptyStore(f"{n} records cannot support a {cfg.train_fraction:.0%} split")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    train_idx = torch.from_numpy(perm[:n_train].copy())
    test_idx = torch.from_numpy(perm[n_train:].copy())

    _check_variant(model.spec, tensors)
    x_in = _to_model_layout(
        _encoded_inputs(tensors, dates, use_encodings, encoding_mode), model.spec.kind
    )
    x_target = _to_model_layout(torch.from_numpy(np.ascontiguousarray(tensors, dtype=np.float32)),
                                model.spec.kind)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    shuffle = torch.Generator().manual_seed(cfg.seed)
    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = train_idx[torch.randperm(n_train, generator=shuffle)]
        total = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = mse_loss(x_target[idx], model(x_in[idx]))
            if not torch.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        train_loss = total / n_train
        test_loss = evaluate_loss(model, x_in[test_idx], x_target[test_idx], cfg.batch_size)
        history.append({"epoch": epoch, "train_loss": train_loss, "test_loss": test_loss})
    return history


@torch.no_grad()
def evaluate_loss(model: Autoencoder, x_in: torch.Tensor, x_target: torch.Tensor,
                  batch_size: int = 512) -> float:
    model.eval()
    total = 0.0
    for start in range(0, x_in.shape[0], batch_size):
        xb_in = x_in[start:start + batch_size]
        xb_tgt = x_target[start:start + batch_size]
        total += mse_loss(xb_tgt, model(xb_in)).item() * xb_in.shape[0]
    return total / x_in.shape[0]


@torch.no_grad()
def encode_batch(model: Autoencoder, tensors: np.ndarray, dates: np.ndarray, index: dict,
                 use_encodings: bool = False, encoding_mode: str = "split",
                 batch_size: int = 1024) -> list[LatentFeature]:
    """One latent feature per store record, in store index order."""
    _check_variant(model.spec, tensors)
    model.eval()
    x_in = _to_model_layout(
        _encoded_inputs(tensors, dates, use_encodings, encoding_mode), model.spec.kind
    )
    chunks = []
    for start in range(0, x_in.shape[0], batch_size):
        chunks.append(model.encode(x_in[start:start + batch_size]).numpy())
    z = np.concatenate(chunks) if chunks else np.zeros((0, model.spec.latent_dim), np.float32)
    return [
        LatentFeature(
            field_id=rec["field_id"],
            grid_row=rec["grid_row"],
            grid_col=rec["grid_col"],
            z=z[i],
        )
        for i, rec in enumerate(index["records"])
    ]


def save_features(features: list[LatentFeature], path: str | Path, meta: dict | None = None) -> None:
    """Write latent vectors as little-endian float32 with a JSON index beside."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if features:
        mat = np.stack([f.z for f in features]).astype("<f4")
    else:
        mat = np.zeros((0, 0), "<f4")
    mat.tofile(path)
    doc = {
        "count": len(features),
        "dim": int(mat.shape[1]) if features else 0,
        "records": [
            {"field_id": f.field_id, "grid_row": f.grid_row, "grid_col": f.grid_col}
            for f in features
        ],
    }
    if meta:
        doc.update(meta)
    path.with_suffix(".json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_features(path: str | Path) -> list[LatentFeature]:
    path = Path(path)
    doc = json.loads(path.with_suffix(".json").read_text())
    count, dim = doc["count"], doc["dim"]
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != count * dim:
        raise ShapeMismatch(f"{path} holds {raw.size} floats, index says {count}x{dim}")
    mat = raw.reshape(count, dim)
    return [
        LatentFeature(rec["field_id"], rec["grid_row"], rec["grid_col"], mat[i])
        for i, rec in enumerate(doc["records"])
    ]


def save_model(model: Autoencoder, prefix: str | Path, sidecar: dict) -> None:
    """Checkpoint weights plus a JSON sidecar with spec, config, and losses."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), prefix.with_suffix(".pt"))
    doc = {"spec": asdict(model.spec)}
    doc.update(sidecar)
    prefix.with_suffix(".json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(prefix: str | Path) -> tuple[Autoencoder, dict]:
    prefix = Path(prefix)
    sidecar = json.loads(prefix.with_suffix(".json").read_text())
    spec = AutoencoderSpec(**sidecar["spec"])
    model = build(spec, seed=0)
    model.load_state_dict(torch.load(prefix.with_suffix(".pt"), weights_only=True))
    model.eval()
    return model, sidecar
