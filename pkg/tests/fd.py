"""Central finite-difference check of autograd gradients on sampled coordinates."""
import numpy as np
import torch


def fd_agreement(loss_fn, tensors, n_samples=30, step=1e-3, rtol=2e-2, atol=1e-7, seed=0):
    """Fraction of sampled coordinates where autograd and central differences agree.

    ``loss_fn`` takes no arguments and returns a scalar tensor built from ``tensors``.
    """
    tensors = [t for t in tensors if t.numel()]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]
    rng = np.random.default_rng(seed)
    passed = 0
    details = []
    for _ in range(n_samples):
        i = int(rng.integers(len(tensors)))
        t, g = tensors[i], grads[i]
        k = int(rng.integers(t.numel()))
        flat = t.data.view(-1)
        orig = flat[k].item()
        with torch.no_grad():
            flat[k] = orig + step
            up = loss_fn().item()
            flat[k] = orig - step
            down = loss_fn().item()
            flat[k] = orig
        fd = (up - down) / (2 * step)
        an = g.view(-1)[k].item()
        ok = abs(fd - an) <= rtol * max(abs(fd), abs(an)) + atol
        passed += ok
        details.append((fd, an, ok))
    return passed / n_samples, details
