"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

DEFAULT_STEP = 1e-4


def relative_error(analytic, numeric, floor: float = 1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def squared_error_loss(target: np.ndarray) -> Callable:
    """``0.5 * sum((out - target)**2)`` and its gradient."""
    def loss(out):
        diff = out - target
        return 0.5 * float(np.sum(diff * diff)), diff
    return loss


def sample_coordinates(shapes: dict[str, tuple[int, ...]], n: int, rng: np.random.Generator) -> np.ndarray:
    """Flat indices: at least one per tensor, the rest uniform over all parameters."""
    sizes = [int(np.prod(s)) for s in shapes.values()]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = [offsets[i] + rng.integers(size) for i, size in enumerate(sizes) if size]
    rest = np.setdiff1d(np.arange(int(offsets[-1])), picks)
    extra = max(n - len(picks), 0)
    picks.extend(rng.choice(rest, size=min(extra, len(rest)), replace=False).tolist())
    return np.unique(np.asarray(picks, dtype=np.int64))


def grad_check(network, inputs, loss: Callable | None = None, n_coords: int = 64,
               step: float = DEFAULT_STEP, seed: int = 0, return_details: bool = False):
    """Worst relative error between backprop and central differences.

    The network is copied to float64 first. ``loss(outputs)`` must return
    ``(value, d value / d outputs)``; by default a squared error against a
    seeded random target is used.
    """
    rng = np.random.default_rng(seed)
    net = network.astype(np.float64)
    if loss is None:
        out = net.forward(inputs)
        loss = squared_error_loss(rng.uniform(-1.0, 1.0, size=out.shape))
    net.zero_grad()
    out = net.forward(inputs, train=True)
    _, grad_out = loss(out)
    net.backward(grad_out)
    analytic = net.grads.flat.copy()
    pattern = getattr(net, "activation_pattern", None)
    base = None
    if pattern is not None:
        net.forward(inputs, train=True)
        base = pattern()
    flat = net.params.flat
    queue = list(sample_coordinates(net.params.shapes, n_coords, rng))
    spare = rng.permutation(flat.size)
    used = set(queue)
    spare_pos = 0
    coords, numeric, skipped = [], [], []
    while queue:
        idx = int(queue.pop(0))
        orig = flat[idx]
        values = []
        crossed = False
        for delta in (step, -step):
            flat[idx] = orig + delta
            value, _ = loss(net.forward(inputs, train=base is not None))
            values.append(value)
            if base is not None and not np.array_equal(pattern(), base):
                crossed = True
        flat[idx] = orig
        if crossed:
            # The difference quotient straddles a ReLU/max kink; replace the coordinate.
            skipped.append(idx)
            while spare_pos < len(spare) and int(spare[spare_pos]) in used:
                spare_pos += 1
            if spare_pos < len(spare):
                used.add(int(spare[spare_pos]))
                queue.append(int(spare[spare_pos]))
            continue
        coords.append(idx)
        numeric.append((values[0] - values[1]) / (2.0 * step))
    coords = np.asarray(coords, dtype=np.int64)
    numeric = np.asarray(numeric)
    errors = relative_error(analytic[coords], numeric)
    worst = float(errors.max()) if len(errors) else 0.0
    if return_details:
        return worst, {"coords": coords, "analytic": analytic[coords], "numeric": numeric,
                       "skipped": np.asarray(skipped, dtype=np.int64)}
    return worst
