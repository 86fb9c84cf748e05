"""Learnable transceiver.

Transmitter: permutation-invariant point encoder -> channel encoder
``gamma`` -> power normalization.  Receiver: residual denoiser ``delta``
-> softmax weights over the feature pool -> center predictor ``rho`` ->
folding decoder over a 2D grid.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from . import channel as ch
from .geometry import PointCloud, as_points, make_grid


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    bandwidth_n: int = 200
    dim: int = 384                  # token / pool width d
    embed_hidden: int = 128
    encoder_depth: int = 2          # attention blocks after the point embedding
    encoder_heads: int = 4
    gamma_hidden: Optional[int] = None      # defaults to dim
    delta_hidden: Optional[int] = None      # defaults to max(n, 64)
    num_centers: int = 128
    grid_size: int = 4
    rho_hidden: int = 512
    fold_hidden: int = 512
    repetitions: int = 1
    folding: bool = True
    pool_init: str = "orthonormal"  # or "gaussian"
    pool_init_scale: float = 1.0
    literal_power: bool = False
    gamma_norm: bool = True         # batch-normalize [cls, maxpool] before gamma

    def __post_init__(self):
        if self.bandwidth_n < 2 or self.bandwidth_n % 2:
            raise ModelError(f"bandwidth_n must be even and >= 2, got {self.bandwidth_n}")
        if self.repetitions < 1:
            raise ModelError("repetitions must be >= 1")
        if self.pool_init not in ("orthonormal", "gaussian"):
            raise ModelError(f"unknown pool_init {self.pool_init!r}")
        if self.encoder_depth and self.dim % self.encoder_heads:
            raise ModelError("dim must be divisible by encoder_heads")

    @property
    def pool_size(self) -> int:
        # the softmax runs over the n received reals, one weight per pool row
        return self.bandwidth_n

    @property
    def num_points(self) -> int:
        return self.num_centers * self.grid_size ** 2

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SemanticTokens:
    cls: torch.Tensor       # (B, d)
    tokens: torch.Tensor    # (B, T, d)


def mlp2(n_in: int, hidden: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(n_in, hidden), nn.GELU(), nn.Linear(hidden, n_out))


class PooledNorm(nn.BatchNorm1d):
    """Batch normalization of the pooled descriptor ahead of ``gamma``.

    Pooled features of unrelated clouds share a large common component, so
    without it every latent points the same way and the softmax tends to pick
    one pool row for all inputs. A single cloud in training mode is
    normalized with the running statistics.
    """

    def forward(self, x):
        if self.training and x.shape[0] == 1:
            return nn.functional.batch_norm(x, self.running_mean, self.running_var,
                                            self.weight, self.bias, False, 0.0, self.eps)
        return super().forward(x)


def channel_encoder(n_in: int, hidden: int, n_out: int, norm: bool) -> nn.Sequential:
    layers = [PooledNorm(n_in)] if norm else []
    return nn.Sequential(*layers, nn.Linear(n_in, hidden), nn.GELU(), nn.Linear(hidden, n_out))


class AttentionBlock(nn.Module):
    """Pre-norm transformer block without positional encoding."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = mlp2(dim, mlp_ratio * dim, dim)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class PointEncoder(nn.Module):
    """Per-point embedding followed by attention blocks over all points.

    A learned class token is prepended before the blocks; with no positional
    encoding the token outputs are permutation-equivariant and the class
    token is permutation-invariant.
    """

    def __init__(self, dim: int, hidden: int, depth: int, heads: int):
        super().__init__()
        self.embed = nn.Sequential(
            nn.Linear(3, hidden), nn.GELU(), nn.Linear(hidden, hidden), nn.GELU(),
            nn.Linear(hidden, dim))
        self.cls_token = nn.Parameter(torch.randn(dim) * 0.02)
        self.blocks = nn.ModuleList(AttentionBlock(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim) if depth else nn.Identity()

    def forward(self, points) -> SemanticTokens:
        tokens = self.embed(points)
        cls = self.cls_token.to(tokens.dtype).expand(tokens.shape[0], 1, -1)
        x = torch.cat([cls, tokens], dim=1)
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        return SemanticTokens(cls=x[:, 0], tokens=x[:, 1:])


class FoldingDecoder(nn.Module):
    """Maps (center, feature, grid point) to a 3D offset.

    The first layer acts on the concatenation ``[c, F, g]``; its weight is
    applied blockwise so the feature term is computed once per cloud.
    """

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.dim = dim
        self.inp = nn.Linear(3 + dim + 2, hidden)
        self.body = nn.Sequential(nn.GELU(), nn.Linear(hidden, hidden), nn.GELU(),
                                  nn.Linear(hidden, 3))

    def forward(self, centers, feature, grid):
        # centers (B, C, 3), feature (B, d), grid (G, 2) -> (B, C, G, 3)
        w = self.inp.weight
        wc, wf, wg = w[:, :3], w[:, 3:3 + self.dim], w[:, 3 + self.dim:]
        hc = centers @ wc.T                          # (B, C, h)
        hf = feature @ wf.T + self.inp.bias          # (B, h)
        hg = grid @ wg.T                             # (G, h)
        h = hc[:, :, None, :] + hf[:, None, None, :] + hg[None, None, :, :]
        return self.body(h)


class ResidualHead(nn.Module):
    """Grid-free stand-in for the folding decoder.

    The same offset ``MLP([c, F])`` is added to every copy of a center, so
    without a grid the copies coincide and the output carries only the
    predicted centers.
    """

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(3 + dim, hidden), nn.GELU(), nn.Linear(hidden, hidden), nn.GELU(),
            nn.Linear(hidden, 3))

    def forward(self, centers, feature, grid):
        b, c, _ = centers.shape
        x = torch.cat([centers, feature[:, None, :].expand(b, c, feature.shape[-1])], dim=-1)
        return self.net(x)[:, :, None, :].expand(b, c, grid.shape[0], 3)


def init_pool(n: int, d: int, mode: str = "orthonormal", scale: float = 1.0,
              generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Initial (n, d) pool matrix.

    ``orthonormal`` takes rows of a random orthonormal frame (exact only for
    n <= d); ``gaussian`` draws i.i.d. N(0, scale^2 / d) entries.
    """
    if mode == "gaussian":
        return torch.randn(n, d, generator=generator) * (scale / math.sqrt(d))
    if n > d:
        warnings.warn(f"pool has {n} rows but width {d}; rows cannot all be orthonormal",
                      stacklevel=2)
    g = torch.randn(d, max(n, 1), generator=generator, dtype=torch.float64)
    if n <= d:
        q, r = torch.linalg.qr(g)
        q = q * torch.sign(torch.diagonal(r))
        return (q.T * scale).float()
    q, _ = torch.linalg.qr(g.T)           # (n, d) with orthonormal columns
    return (q * scale).float()


def softmax_weights(h):
    """Softmax over the last axis with explicit max subtraction."""
    shifted = h - h.max(dim=-1, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def aggregate_features(h, pool):
    """``F = softmax(h) @ pool``; returns ``(F, alpha)``."""
    basis = getattr(pool, "basis", pool)
    if h.shape[-1] != basis.shape[0]:
        raise ModelError(
            f"logit length {h.shape[-1]} does not match pool size {basis.shape[0]}")
    alpha = softmax_weights(h)
    return alpha @ basis, alpha


class FeaturePool(nn.Module):
    def __init__(self, basis: torch.Tensor):
        super().__init__()
        self.basis = nn.Parameter(basis)

    def forward(self, h):
        return aggregate_features(h, self.basis)


def _as_batch(points, dtype) -> torch.Tensor:
    if isinstance(points, torch.Tensor):
        x = points
    else:
        x = torch.as_tensor(as_points(points))
    if x.dim() == 2:
        x = x[None]
    if x.dim() != 3 or x.shape[-1] != 3:
        raise ModelError(f"expected points of shape (B, M, 3), got {tuple(x.shape)}")
    if x.shape[1] < 1:
        raise ModelError("point cloud is empty")
    return x.to(dtype)


class Transceiver(nn.Module):
    """The full encoder/channel/decoder stack; its parameters are the model state."""

    GROUPS = ("encoder", "gamma", "delta", "pool", "rho", "fold")

    def __init__(self, config: ModelConfig, encoder: Optional[nn.Module] = None,
                 seed: Optional[int] = None):
        super().__init__()
        self.config = config
        if seed is None:
            self._build(encoder, None)
        else:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                self._build(encoder, torch.Generator().manual_seed(seed))

    def _build(self, encoder, gen):
        cfg = self.config
        d, n = cfg.dim, cfg.bandwidth_n
        if n > d:
            warnings.warn(f"pool size {n} exceeds width {d}: the orthogonality penalty "
                          "cannot reach zero", stacklevel=2)
        # any module returning SemanticTokens of width d can stand in here
        self.encoder = encoder if encoder is not None else PointEncoder(
            d, cfg.embed_hidden, cfg.encoder_depth, cfg.encoder_heads)
        self.gamma = channel_encoder(2 * d, cfg.gamma_hidden or d, n, cfg.gamma_norm)
        self.delta = mlp2(n, cfg.delta_hidden or max(n, 64), n)
        self.pool = FeaturePool(init_pool(n, d, cfg.pool_init, cfg.pool_init_scale, gen))
        self.rho = mlp2(d, cfg.rho_hidden, 3 * cfg.num_centers)
        if cfg.folding:
            self.fold = FoldingDecoder(d, cfg.fold_hidden)
        else:
            self.fold = ResidualHead(d, cfg.fold_hidden)
        self.register_buffer("grid", torch.as_tensor(make_grid(cfg.grid_size), dtype=torch.float32))

    # -- transmitter -----------------------------------------------------
    def encode_semantic(self, points) -> SemanticTokens:
        return self.encoder(_as_batch(points, self.grid.dtype))

    def channel_encode(self, tokens: SemanticTokens, n: Optional[int] = None):
        """Latent ``gamma([cls, maxpool(tokens)])`` before power normalization."""
        n = self.config.bandwidth_n if n is None else n
        if n != self.pool.basis.shape[0]:
            raise ModelError(f"bandwidth {n} does not match pool size {self.pool.basis.shape[0]}")
        pooled = tokens.tokens.max(dim=1).values
        return self.gamma(torch.cat([tokens.cls, pooled], dim=-1))

    # -- receiver --------------------------------------------------------
    def channel_decode(self, y, repetitions: Optional[int] = None):
        """Residual noise cancellation: ``h <- h - delta(h)``, repeated with shared weights."""
        r = self.config.repetitions if repetitions is None else repetitions
        if r < 1:
            raise ModelError(f"repetitions must be >= 1, got {r}")
        h = y
        for _ in range(r):
            h = h - self.delta(h)
        return h

    def aggregate_features(self, h):
        return aggregate_features(h, self.pool.basis)

    def predict_centers(self, feature):
        return self.rho(feature).reshape(*feature.shape[:-1], self.config.num_centers, 3)

    def fold_decode(self, centers, feature, grid=None, target_points: Optional[int] = None):
        """``P = C + D([C, F, G])`` flattened to (B, C*G, 3)."""
        grid = self.grid if grid is None else torch.as_tensor(grid, dtype=centers.dtype)
        count = centers.shape[-2] * grid.shape[0]
        if target_points is not None and target_points != count:
            raise ModelError(
                f"{centers.shape[-2]} centers x {grid.shape[0]} grid points = {count}, "
                f"expected {target_points}")
        offsets = self.fold(centers, feature, grid.to(centers.dtype))
        out = centers[:, :, None, :] + offsets
        return out.reshape(centers.shape[0], count, 3)

    def forward(self, points, channel_cfg: Optional[ch.ChannelConfig] = None,
                generator: Optional[torch.Generator] = None, snr_db: Optional[float] = None):
        """Reconstruct a batch of clouds through the channel.

        ``snr_db`` overrides ``channel_cfg.snr_db`` (used for per-batch SNR
        sampling). Returns ``(recon, diagnostics)``.
        """
        x = _as_batch(points, self.grid.dtype)
        cfg = channel_cfg or ch.ChannelConfig(ch.NOISELESS, self.config.bandwidth_n)
        if cfg.bandwidth_n != self.config.bandwidth_n:
            raise ModelError(
                f"channel bandwidth {cfg.bandwidth_n} != model bandwidth {self.config.bandwidth_n}")
        if snr_db is not None:
            cfg = ch.ChannelConfig(snr_db, cfg.bandwidth_n, cfg.rng_seed)
        tokens = self.encoder(x)
        z_tilde = self.channel_encode(tokens)
        z = ch.power_normalize(z_tilde, literal=self.config.literal_power)
        y = ch.transmit(z, cfg, generator)
        h = self.channel_decode(y)
        feature, alpha = self.aggregate_features(h)
        centers = self.predict_centers(feature)
        recon = self.fold_decode(centers, feature)
        diag = {"z_tilde": z_tilde, "z": z, "y": y, "h": h, "alpha": alpha,
                "feature": feature, "centers": centers}
        return recon, diag

    @torch.no_grad()
    def reconstruct(self, cloud, channel_cfg: Optional[ch.ChannelConfig] = None,
                    seed: Optional[int] = None) -> PointCloud:
        """Convenience wrapper: one cloud in, one numpy PointCloud out."""
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        recon, _ = self.forward(as_points(cloud), channel_cfg, gen)
        return PointCloud(recon[0].double().cpu().numpy())

    def param_groups(self) -> dict:
        return {name: [p for p in getattr(self, name).parameters()] for name in self.GROUPS}


# -- checkpoints ---------------------------------------------------------

def save_checkpoint(path, model: Transceiver, extra: Optional[dict] = None) -> None:
    """Single ``.npz`` archive: every parameter/buffer plus a JSON manifest."""
    state = model.state_dict()
    arrays = {k: v.detach().cpu().numpy() for k, v in state.items()}
    manifest = {
        "config": asdict(model.config),
        "config_hash": model.config.config_hash(),
        "arrays": [{"name": k, "shape": list(a.shape), "dtype": str(a.dtype)}
                   for k, a in arrays.items()],
        "extra": extra or {},
    }
    arrays["__manifest__"] = np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_manifest(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["__manifest__"]).decode())


def load_checkpoint(path) -> Transceiver:
    with np.load(path) as data:
        manifest = json.loads(bytes(data["__manifest__"]).decode())
        cfg = ModelConfig(**manifest["config"])
        if cfg.config_hash() != manifest["config_hash"]:
            raise ModelError(f"{path}: config hash mismatch")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = Transceiver(cfg)
        state = model.state_dict()
        loaded = {}
        for entry in manifest["arrays"]:
            name = entry["name"]
            if name not in state:
                raise ModelError(f"{path}: unexpected array {name}")
            arr = data[name]
            if tuple(arr.shape) != tuple(state[name].shape):
                raise ModelError(
                    f"{path}: shape mismatch for {name}: file {arr.shape}, "
                    f"model {tuple(state[name].shape)}")
            loaded[name] = torch.as_tensor(arr)
        missing = set(state) - set(loaded)
        if missing:
            raise ModelError(f"{path}: missing arrays {sorted(missing)}")
    model.load_state_dict(loaded)
    return model
