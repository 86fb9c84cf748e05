"""Analog AWGN transmission chain.

Functions accept numpy arrays or torch tensors; the last axis is the
latent dimension ``n`` and any leading axes are treated as a batch.
Consecutive reals are paired into complex symbols as ``z[0] + 1j*z[1]``,
``z[2] + 1j*z[3]``, ... and each complex symbol carries unit average power
after :func:`power_normalize`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

NOISELESS = math.inf


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 10.0
    bandwidth_n: int = 16
    rng_seed: int = 0

    def __post_init__(self):
        if self.bandwidth_n < 2 or self.bandwidth_n % 2:
            raise ChannelError(f"bandwidth_n must be even and >= 2, got {self.bandwidth_n}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ChannelError(f"invalid SNR {self.snr_db}")

    @property
    def noiseless(self) -> bool:
        return self.snr_db == NOISELESS


def _is_torch(x) -> bool:
    return isinstance(x, torch.Tensor)


def power_normalize(latent, literal: bool = False):
    """Scale ``latent`` so its ``n/2`` complex symbols have unit mean power.

    With ``literal=True`` the vector is instead scaled to unit L2 norm
    (unit total power).
    """
    n = latent.shape[-1]
    if _is_torch(latent):
        norm = torch.linalg.vector_norm(latent, dim=-1, keepdim=True)
        if not torch.all(torch.isfinite(latent)) or torch.any(norm == 0):
            raise ChannelError("cannot normalize a zero or non-finite latent")
    else:
        latent = np.asarray(latent, dtype=np.float64)
        norm = np.linalg.norm(latent, axis=-1, keepdims=True)
        if not np.all(np.isfinite(latent)) or np.any(norm == 0):
            raise ChannelError("cannot normalize a zero or non-finite latent")
    if literal:
        return latent / norm
    return latent * (math.sqrt(n / 2.0) / norm)


def symbol_power(z):
    """Mean power per complex symbol along the last axis."""
    if _is_torch(z):
        return (z ** 2).sum(dim=-1) / (z.shape[-1] / 2.0)
    z = np.asarray(z, dtype=np.float64)
    return np.sum(z ** 2, axis=-1) / (z.shape[-1] / 2.0)


def snr_to_noise_variance(snr_db: float) -> float:
    """Complex noise variance for unit-power symbols; 0 at the noiseless sentinel."""
    if snr_db == NOISELESS:
        return 0.0
    return 10.0 ** (-snr_db / 10.0)


def to_complex(z):
    if z.shape[-1] % 2:
        raise ChannelError(f"complex pairing needs an even length, got {z.shape[-1]}")
    if _is_torch(z):
        return torch.view_as_complex(z.reshape(*z.shape[:-1], -1, 2).contiguous())
    z = np.asarray(z, dtype=np.float64)
    return z[..., 0::2] + 1j * z[..., 1::2]


def to_real(c):
    if _is_torch(c):
        r = torch.view_as_real(c)
        return r.reshape(*r.shape[:-2], -1)
    out = np.empty(c.shape[:-1] + (2 * c.shape[-1],), dtype=np.float64)
    out[..., 0::2] = c.real
    out[..., 1::2] = c.imag
    return out


def complex_noise(shape, variance: float, rng):
    """Circular complex Gaussian noise with ``E|w|^2 = variance``.

    ``rng`` is a ``numpy.random.Generator`` for numpy output or a
    ``torch.Generator`` for torch output.
    """
    std = math.sqrt(variance / 2.0)
    if isinstance(rng, torch.Generator):
        parts = torch.randn(*shape, 2, generator=rng, dtype=torch.float64)
        return torch.view_as_complex(parts * std)
    parts = rng.standard_normal(tuple(shape) + (2,))
    return std * (parts[..., 0] + 1j * parts[..., 1])


def transmit(z, cfg: ChannelConfig, rng=None):
    """Pass real codeword(s) ``z`` through the AWGN channel described by ``cfg``.

    The output has the same layout as the input. At the noiseless sentinel
    the input is returned unchanged.
    """
    if z.shape[-1] != cfg.bandwidth_n:
        raise ChannelError(
            f"codeword length {z.shape[-1]} does not match bandwidth {cfg.bandwidth_n}")
    if cfg.noiseless:
        return z
    if rng is None:
        rng = (torch.Generator().manual_seed(cfg.rng_seed) if _is_torch(z)
               else np.random.default_rng(cfg.rng_seed))
    sym = to_complex(z)
    noise = complex_noise(sym.shape, snr_to_noise_variance(cfg.snr_db), rng)
    if _is_torch(z):
        noise = noise.to(sym.dtype)
    return to_real(sym + noise)


def measure_snr(clean, noisy) -> float:
    """Empirical SNR in dB, ``10 log10(|clean|^2 / |noisy - clean|^2)``."""
    if _is_torch(clean):
        clean = clean.detach().cpu().numpy()
    if _is_torch(noisy):
        noisy = noisy.detach().cpu().numpy()
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise ChannelError(f"shape mismatch {clean.shape} vs {noisy.shape}")
    signal = float(np.sum(clean ** 2))
    if signal == 0:
        raise ChannelError("clean signal is zero")
    noise = float(np.sum((noisy - clean) ** 2))
    if noise == 0:
        return math.inf
    return 10.0 * math.log10(signal / noise)


def derive_seed(seed: int, sample_id: int) -> int:
    """Independent per-sample stream seed."""
    return int(seed) ^ int(sample_id)
