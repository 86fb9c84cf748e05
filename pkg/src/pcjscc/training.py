"""Training objective, learning-rate schedule, optimization loop and
finite-difference gradient checking."""
from __future__ import annotations

import ast
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from . import channel as ch
from .model import ModelConfig, Transceiver, save_checkpoint

log = logging.getLogger(__name__)

class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass
class TrainConfig:
    epochs: int = 200
    lr_init: float = 3e-4
    warmup_epochs: int = 10
    beta: float = 1.0
    # a scalar trains at one SNR; a (lo, hi) pair samples uniformly per batch
    train_snr_db: Union[float, tuple] = 10.0
    batch_size: int = 32
    weight_decay: float = 5e-2
    seed: int = 0
    no_ort: bool = False
    no_folding: bool = False
    deterministic: bool = True
    checkpoint_every: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs)")
        if isinstance(self.train_snr_db, list):
            self.train_snr_db = tuple(self.train_snr_db)

    @property
    def bandwidth_n(self) -> int:
        return self.model.bandwidth_n

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.no_ort else self.beta

    def model_config(self) -> ModelConfig:
        return replace(self.model, folding=self.model.folding and not self.no_folding)

    def eval_snr_db(self) -> float:
        if isinstance(self.train_snr_db, tuple):
            return 0.5 * (self.train_snr_db[0] + self.train_snr_db[1])
        return float(self.train_snr_db)


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "+inf"):
        return math.inf
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def load_config(path) -> TrainConfig:
    """Read a flat ``key = value`` file; model fields use a ``model.`` prefix."""
    top, model = {}, {}
    top_names = {f.name for f in fields(TrainConfig)} - {"model"}
    model_names = {f.name for f in fields(ModelConfig)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("model."):
            name = key[len("model."):]
            if name not in model_names:
                raise ValueError(f"{path}:{lineno}: unknown model key {name!r}")
            model[name] = _parse_value(value)
        elif key in top_names:
            top[key] = _parse_value(value)
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return TrainConfig(model=ModelConfig(**model), **top)


def dump_config(cfg: TrainConfig, path) -> None:
    lines = []
    for f in fields(cfg):
        if f.name != "model":
            lines.append(f"{f.name} = {getattr(cfg, f.name)!r}")
    for key, value in asdict(cfg.model).items():
        lines.append(f"model.{key} = {value!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- objective -----------------------------------------------------------

def _batched(x) -> torch.Tensor:
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(getattr(x, "points", x), dtype=np.float64))
    return x[None] if x.dim() == 2 else x


def pairwise_sq_dist(a, b):
    """(B, P, 3) x (B, Q, 3) -> (B, P, Q) squared distances."""
    d2 = (a * a).sum(-1)[:, :, None] + (b * b).sum(-1)[:, None, :] - 2.0 * a @ b.transpose(1, 2)
    return d2.clamp_min(0.0)


def chamfer_torch(recon, truth):
    """Per-sample Chamfer distance, differentiable in both arguments."""
    a, b = _batched(recon), _batched(truth)
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValueError("empty point cloud")
    d2 = pairwise_sq_dist(a, b.to(a.dtype))
    return d2.min(dim=2).values.mean(dim=1) + d2.min(dim=1).values.mean(dim=1)


def ortho_loss(basis):
    """``|O O^T - I|_F``, exact in value; the gradient at exactly zero is zero."""
    basis = getattr(basis, "basis", basis)
    if not isinstance(basis, torch.Tensor):
        basis = torch.as_tensor(np.asarray(basis, dtype=np.float64))
    gram = basis @ basis.T
    eye = torch.eye(basis.shape[0], dtype=basis.dtype, device=basis.device)
    sq = ((gram - eye) ** 2).sum()
    # sqrt has an infinite derivative at 0; route that point through a dummy value
    positive = sq > 0
    safe = torch.where(positive, sq, torch.ones_like(sq))
    return torch.where(positive, torch.sqrt(safe), torch.zeros_like(sq))


def total_loss(recon, truth, pool, beta: float = 1.0):
    """Batch-mean Chamfer distance plus ``beta`` times the pool orthogonality term.

    Returns ``(loss, {"cd": ..., "ort": ...})``.
    """
    cd = chamfer_torch(recon, truth).mean()
    ort = ortho_loss(pool)
    loss = cd + beta * ort.to(cd.dtype) if beta else cd
    return loss, {"cd": cd, "ort": ort}


# -- schedule ------------------------------------------------------------

def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Linear warmup from 0, then cosine decay to 0 at the final step."""
    total = cfg.epochs * steps_per_epoch
    warm = cfg.warmup_epochs * steps_per_epoch
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside schedule [0, {total}]")
    if step < warm:
        return cfg.lr_init * step / warm
    progress = (step - warm) / max(total - warm, 1)
    return 0.5 * cfg.lr_init * (1.0 + math.cos(math.pi * progress))


# -- training loop -------------------------------------------------------

@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    COLUMNS = ("epoch", "train_loss", "cd", "ort", "val_cd", "lr", "seconds")

    def append(self, **rec) -> None:
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            writer.writeheader()
            for r in self.records:
                writer.writerow({k: r.get(k, "") for k in self.COLUMNS})


def _as_array(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        arr = dataset
    else:
        arr = np.stack([np.asarray(getattr(c, "points", c)) for c in dataset])
    if arr.ndim != 3 or arr.shape[-1] != 3 or arr.shape[0] == 0:
        raise ValueError(f"dataset must be a non-empty (K, M, 3) collection, got {arr.shape}")
    return arr.astype(np.float32)


@torch.no_grad()
def evaluate_cd(model: Transceiver, clouds, snr_db: float, seed: int = 0,
                batch_size: int = 64) -> np.ndarray:
    """Per-sample Chamfer distance through the channel at ``snr_db``.

    The noise stream is fixed by ``seed`` so repeated calls are comparable.
    """
    arr = _as_array(clouds)
    gen = torch.Generator().manual_seed(seed)
    cfg = ch.ChannelConfig(snr_db, model.config.bandwidth_n, seed)
    was_training = model.training
    model.eval()
    out = []
    for start in range(0, len(arr), batch_size):
        x = torch.from_numpy(arr[start:start + batch_size])
        recon, _ = model(x, cfg, gen)
        out.append(chamfer_torch(recon, x).double().numpy())
    model.train(was_training)
    return np.concatenate(out)


def build_model(cfg: TrainConfig) -> Transceiver:
    return Transceiver(cfg.model_config(), seed=cfg.seed)


def train(dataset, cfg: TrainConfig, test_set=None, out_dir=None,
          model: Optional[Transceiver] = None):
    """Optimize a transceiver on ``dataset`` (a (K, M, 3) array or a list of clouds).

    Returns ``(model, history)``. ``out_dir`` receives periodic checkpoints,
    the final checkpoint and the history CSV.
    """
    data = _as_array(dataset)
    test = _as_array(test_set) if test_set is not None else None
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    if model is None:
        model = build_model(cfg)
    if model.config.num_points != data.shape[1]:
        log.warning("model emits %d points, data clouds have %d",
                    model.config.num_points, data.shape[1])

    rng = np.random.default_rng(cfg.seed)
    noise = torch.Generator().manual_seed(cfg.seed + 1)
    chan = ch.ChannelConfig(cfg.eval_snr_db(), cfg.bandwidth_n, cfg.seed)
    beta = cfg.effective_beta

    pool_params = list(model.pool.parameters())
    pool_ids = {id(p) for p in pool_params}
    others = [p for p in model.parameters() if id(p) not in pool_ids]
    opt = torch.optim.AdamW(
        [{"params": others, "weight_decay": cfg.weight_decay},
         {"params": pool_params, "weight_decay": 0.0}],
        lr=cfg.lr_init)

    steps_per_epoch = math.ceil(len(data) / cfg.batch_size)
    history = TrainHistory()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(data))
        sums = np.zeros(3)
        for start in range(0, len(data), cfg.batch_size):
            batch = torch.from_numpy(data[order[start:start + cfg.batch_size]])
            lr = lr_at(step, cfg, steps_per_epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            snr = cfg.train_snr_db
            if isinstance(snr, tuple):
                snr = float(rng.uniform(snr[0], snr[1]))
            try:
                recon, _ = model(batch, chan, noise, snr_db=snr)
            except ch.ChannelError as err:
                # non-finite activations reach the power normalizer before the loss
                raise TrainingDiverged(step, float("nan")) from err
            loss, terms = total_loss(recon, batch, model.pool.basis, beta)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sums += [value, float(terms["cd"].detach()), float(terms["ort"].detach())]
            step += 1
        sums /= steps_per_epoch
        val_cd = float("nan")
        if test is not None:
            val_cd = float(np.mean(evaluate_cd(model, test, cfg.eval_snr_db(), seed=cfg.seed)))
        history.append(epoch=epoch, train_loss=sums[0], cd=sums[1], ort=sums[2],
                       val_cd=val_cd, lr=lr, seconds=time.perf_counter() - t0)
        log.info("epoch %d loss %.5f cd %.5f ort %.4f val_cd %.5f", epoch, *sums, val_cd)
        if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / f"epoch{epoch + 1:04d}.npz", model, {"epoch": epoch + 1})
    if out_dir is not None:
        save_checkpoint(out_dir / "final.npz", model, {"epoch": cfg.epochs, "seed": cfg.seed})
        history.to_csv(out_dir / "history.csv")
    return model, history


# -- gradient check ------------------------------------------------------

@dataclass
class GradcheckReport:
    rel_errors: dict            # group -> |g_auto - g_fd| / max(|g_auto|, |g_fd|)
    max_abs_errors: dict
    num_checked: dict
    threshold: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_errors.values()) if self.rel_errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def gradcheck(model: Transceiver, sample, channel_cfg: Optional[ch.ChannelConfig] = None,
              beta: float = 1.0, eps: float = 1e-6, threshold: float = 1e-4,
              groups: Optional[Sequence[str]] = None) -> GradcheckReport:
    """Compare autograd gradients of the total loss against central differences.

    Runs on a float64 copy of ``model``; the reconstruction target is the
    input sample itself. Relative errors are taken per parameter group over
    the full gradient vector.
    """
    import copy
    net = copy.deepcopy(model).double()
    net.eval()
    x = _batched(sample).double()
    cfg = channel_cfg or ch.ChannelConfig(ch.NOISELESS, net.config.bandwidth_n)

    def loss_fn():
        gen = torch.Generator().manual_seed(cfg.rng_seed)
        recon, _ = net(x, cfg, gen)
        return total_loss(recon, x, net.pool.basis, beta)[0]

    net.zero_grad()
    loss_fn().backward()
    by_group = net.param_groups()
    rel, absd, count = {}, {}, {}
    for name in groups or Transceiver.GROUPS:
        params = [p for p in by_group[name] if p.requires_grad]
        if not params:
            continue
        auto = np.concatenate([
            (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1).numpy()
            for p in params])
        numeric = []
        with torch.no_grad():
            for p in params:
                flat = p.view(-1)
                for i in range(flat.numel()):
                    orig = flat[i].item()
                    flat[i] = orig + eps
                    up = loss_fn().item()
                    flat[i] = orig - eps
                    down = loss_fn().item()
                    flat[i] = orig
                    numeric.append((up - down) / (2 * eps))
        numeric = np.asarray(numeric)
        rel[name] = _relative(auto, numeric)
        absd[name] = float(np.max(np.abs(auto - numeric)))
        count[name] = int(auto.size)
    return GradcheckReport(rel, absd, count, threshold)


def small_config(**overrides) -> ModelConfig:
    """Tiny architecture for gradient checks: d=8, N=8, 32 output points.

    The pool starts Gaussian: an exactly orthonormal pool sits on the kink of
    the Frobenius norm, where no derivative exists to compare against.
    """
    base = dict(bandwidth_n=8, dim=8, embed_hidden=8, encoder_depth=1, encoder_heads=2,
                gamma_hidden=8, delta_hidden=8, num_centers=2, grid_size=4,
                rho_hidden=8, fold_hidden=8, pool_init="gaussian")
    base.update(overrides)
    return ModelConfig(**base)
