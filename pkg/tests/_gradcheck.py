"""Central finite differences on sampled scalar parameters (float64)."""
import numpy as np
import torch


def sample_entries(named_params, n, seed, restrict=None):
    """``n`` (name, flat_index) pairs drawn uniformly over all parameter
    entries; ``restrict(name) -> flat indices`` narrows a tensor's pool."""
    rng = np.random.default_rng(seed)
    pool = []
    for name, p in named_params.items():
        idx = np.arange(p.numel()) if restrict is None else np.asarray(restrict(name, p))
        pool.extend((name, int(i)) for i in idx)
    picks = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
    return [pool[i] for i in picks]


def check_gradients(loss_fn, named_params, entries, h=1e-6, floor=1e-5):
    """Max relative error between autograd and central differences."""
    for p in named_params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    details = []
    for name, i in entries:
        p = named_params[name]
        analytic = float(p.grad.reshape(-1)[i])
        flat = p.data.reshape(-1)
        orig = float(flat[i])
        with torch.no_grad():
            flat[i] = orig + h
            up = float(loss_fn())
            flat[i] = orig - h
            down = float(loss_fn())
            flat[i] = orig
        numeric = (up - down) / (2 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, rel)
        details.append((name, i, analytic, numeric, rel))
    return worst, details
