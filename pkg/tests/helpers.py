"""Finite-difference gradient checking and small builders shared by the tests."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from kea import numcore as nc


def close(a: float, b: float, rel: float = 1e-4, abs_: float = 1e-7) -> bool:
    diff = abs(a - b)
    return diff <= abs_ or diff <= rel * max(abs(a), abs(b))


def fd_check(loss_fn, tensors, rng: np.random.Generator, h: float = 1e-5, rel: float = 1e-4,
             abs_: float = 1e-7, coords: int | None = None, direction: bool = True):
    """Compare analytic gradients of ``loss_fn()`` w.r.t. ``tensors`` with central differences.

    ``coords`` limits each tensor to that many random coordinates; a random
    direction per tensor is checked as well. Returns a list of failures.
    """
    for t in tensors:
        t.zero_grad()
    nc.backward(loss_fn())
    analytic = [t.grad.copy() for t in tensors]
    failures = []
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and flat.size > coords:
            idx = rng.choice(flat.size, size=coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            num = (up - down) / (2 * h)
            if not close(grad.reshape(-1)[i], num, rel, abs_):
                failures.append((t.name, int(i), float(grad.reshape(-1)[i]), num))
        if direction and flat.size > 1:
            v = rng.normal(size=t.shape)
            orig = t.data.copy()
            t.data = orig + h * v
            up = loss_fn().item()
            t.data = orig - h * v
            down = loss_fn().item()
            t.data = orig
            num = (up - down) / (2 * h)
            ana = float((grad * v).sum())
            if not close(ana, num, rel, abs_):
                failures.append((t.name, "dir", ana, num))
    return failures


def random_batch(rng: np.random.Generator, B: int, max_n: int, vocab: int, l_e: int, l_pad: int,
                 l_c: int | None = None, pad_value: float = 0.5):
    """Batch-like namespace with variable lengths (row 0 always uses the full length)."""
    lengths = [max_n] + [int(rng.integers(1, max_n + 1)) for _ in range(B - 1)]
    L = max(lengths)
    ids = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L))
    xe = np.full((B, L, l_e), pad_value)
    for b, n in enumerate(lengths):
        ids[b, 0] = 1
        ids[b, 1:n] = rng.integers(3, vocab, size=n - 1)
        mask[b, :n] = 1.0
        xe[b, :n] = rng.random((n, l_e))
    channels = np.full((B, l_e, l_pad), pad_value)
    for b, n in enumerate(lengths):
        k = min(n, l_pad)
        channels[b, :, :k] = xe[b, :k].T
    hc = rng.normal(size=(B, L, l_c)) if l_c else None
    return SimpleNamespace(ids=ids, mask=mask, xe=xe, channels=channels, hc=hc, lengths=lengths)


def relu_margin(forward, mask: np.ndarray) -> float:
    """Smallest |input| seen by any ReLU at a real (unmasked) position during ``forward()``.

    Central differences straddling a ReLU kink are meaningless, so gradient
    checks redraw instances whose margin is below the step scale.
    """
    seen = []
    real = nc.relu

    def spy(x):
        seen.append(x.data)
        return real(x)

    nc.relu = spy
    try:
        forward()
    finally:
        nc.relu = real
    keep = np.asarray(mask, dtype=bool)
    return min((float(np.abs(a[keep]).min()) for a in seen), default=np.inf)
