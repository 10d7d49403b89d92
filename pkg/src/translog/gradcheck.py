"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@contextlib.contextmanager
def relu_patterns() -> Iterator[list[bytes]]:
    """Record the active set of every ReLU evaluated inside the block."""
    seen: list[bytes] = []
    original = ad.relu

    def spy(a: Tensor) -> Tensor:
        seen.append(np.packbits(a.data > 0).tobytes())
        return original(a)

    ad.relu = spy
    try:
        yield seen
    finally:
        ad.relu = original


def numeric_grad(fn: Callable[[], float], arr: np.ndarray, h: float = 1e-3,
                 pattern: Callable[[], object] | None = None) -> np.ndarray:
    """d fn / d arr by central differences, perturbing ``arr`` in place.

    With ``pattern`` (called right after each evaluation), coordinates whose
    two stencil points see different patterns are set to NaN: the function is
    not differentiable inside that stencil.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        up_pat = pattern() if pattern else None
        flat[i] = orig - h
        down = fn()
        down_pat = pattern() if pattern else None
        flat[i] = orig
        out[i] = np.nan if up_pat != down_pat else (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor), ignoring NaN coordinates."""
    a = np.asarray(analytic, np.float64)
    n = np.asarray(numeric, np.float64)
    keep = ~np.isnan(n)
    if not keep.any():
        return 0.0
    a, n = a[keep], n[keep]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(build: Callable[[], Tensor], inputs: Sequence[Tensor],
                    h: float = 1e-3, seed: int = 0, floor: float = 1e-6,
                    guard_kinks: bool = False, stats: dict | None = None) -> float:
    """Max relative error between backprop and finite differences.

    ``build`` recomputes the graph from ``inputs``; a non-scalar output is
    reduced with a fixed random projection so every output element matters.
    ``guard_kinks`` skips coordinates whose stencil crosses a ReLU kink; the
    number checked and skipped lands in ``stats`` when given.
    """
    probe = build()
    weights = np.random.default_rng(seed).standard_normal(probe.shape)
    for t in inputs:
        t.grad = None
    build().backward(weights.astype(probe.data.dtype))

    with relu_patterns() as seen:
        def scalar() -> float:
            seen.clear()
            return float(np.sum(build().data.astype(np.float64) * weights))

        pattern = (lambda: tuple(seen)) if guard_kinks else None
        worst, skipped, total = 0.0, 0, 0
        for t in inputs:
            num = numeric_grad(scalar, t.data, h, pattern)
            worst = max(worst, relative_error(t.grad, num, floor))
            skipped += int(np.isnan(num).sum())
            total += num.size
    if stats is not None:
        stats.update(checked=total - skipped, skipped=skipped)
    return worst

