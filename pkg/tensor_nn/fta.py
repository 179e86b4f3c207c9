"""Fuzzy tiling activation.

Each scalar is clipped to ``[-eta*k/2, eta*k/2]`` and mapped to ``k`` outputs: the bin
containing it reads 1, bins below it ramp down as ``1 + eta*(j - k/2) - z`` while ``z`` is
within one bin width of their upper edge, and bins above it ramp as
``1 + z - eta*(j - 1 - k/2)``. A value on a bin edge belongs to the higher bin.
"""
import numpy as np

from models.configs import FTAConfig


def bin_edges(cfg: FTAConfig) -> np.ndarray:
    """k+1 edges ``eta*(j - k/2)`` for j = 0..k"""
    return cfg.eta * (np.arange(cfg.k + 1, dtype=np.float64) - cfg.k / 2.0)


def active_bin(z: np.ndarray, cfg: FTAConfig) -> np.ndarray:
    """1-based bin index of each (clipped) scalar"""
    edges = bin_edges(cfg)
    zc = np.clip(z, edges[0], edges[-1])
    return np.minimum(np.searchsorted(edges, zc, side='right'), cfg.k)


def _cases(z: np.ndarray, cfg: FTAConfig):
    """Broadcast z against bin numbers j=1..k and return the masks of the piecewise formula"""
    edges = bin_edges(cfg)
    zc = np.clip(z, edges[0], edges[-1])[..., None]
    i = active_bin(z, cfg)[..., None]
    j = np.arange(1, cfg.k + 1)
    below = (j < i) & (zc < edges[j] + cfg.eta)
    above = (j > i) & (zc > edges[j - 1])
    return zc, i, j, edges, below, above


def fta(z: np.ndarray, cfg: FTAConfig) -> np.ndarray:
    """(..., m) -> (..., m*k); the k outputs of each scalar are contiguous"""
    z = np.asarray(z)
    zc, i, j, edges, below, above = _cases(z, cfg)
    one = np.ones((), dtype=z.dtype)
    h = np.zeros(zc.shape[:-1] + (cfg.k,), dtype=z.dtype)
    h = np.where(j == i, one, h)
    h = np.where(below, one + edges[j].astype(z.dtype) - zc, h)
    h = np.where(above, one + zc - edges[j - 1].astype(z.dtype), h)
    h = np.clip(h, 0, 1)
    return h.reshape(z.shape[:-1] + (z.shape[-1] * cfg.k,)) if z.ndim else h


def fta_backward(upstream: np.ndarray, z: np.ndarray, cfg: FTAConfig) -> np.ndarray:
    """Right-hand subgradient of ``fta`` at ``z``; zero outside the clip range"""
    z = np.asarray(z)
    _, _, _, edges, below, above = _cases(z, cfg)
    slope = above.astype(z.dtype) - below.astype(z.dtype)
    inside = (z >= edges[0]) & (z < edges[-1])
    up = upstream.reshape(z.shape + (cfg.k,)) if z.ndim else upstream
    return (up * slope).sum(axis=-1) * inside
