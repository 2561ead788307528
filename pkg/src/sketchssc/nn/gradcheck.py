"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .tensor import Tensor


ZERO_GRAD_NORM = 1e-7


def relative_error(analytic, numeric):
    """``|a - n| / max(|a|, |n|)`` in the 2-norm.

    When both norms are below :data:`ZERO_GRAD_NORM` the gradient is zero up
    to rounding (a bias feeding batch norm, say) and the absolute difference
    is returned instead, since a ratio of rounding noise means nothing.
    """
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    diff = float(np.linalg.norm(a - n))
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return diff if scale < ZERO_GRAD_NORM else diff / scale


def _kink_free(fp, f0, fm):
    """One-sided difference quotients agree, so no ReLU kink lies inside the step."""
    bend = abs((fp - f0) - (f0 - fm))
    return bend <= 1e-5 * abs(fp - fm) + 64 * np.finfo(float).eps * abs(f0)


def check_gradients(fn, tensors, eps=1e-5, max_coords=None, rng=None, largest=0):
    """Compare backprop gradients of scalar ``fn()`` against central differences.

    ``tensors`` are leaves read by ``fn``. With ``max_coords`` only that many
    coordinates per tensor are perturbed: the ``largest`` ones by analytic
    magnitude plus a random draw from the rest. Returns the maximum relative
    error (2-norm over the probed coordinates) across tensors.

    ``eps`` may be a sequence of decreasing steps: each coordinate uses the
    first step whose one-sided quotients agree (see :func:`_kink_free`), so a
    wide step keeps rounding low and a narrower one takes over only where the
    wide one straddles a kink. If no step passes, the coordinate is flat up
    to rounding and the widest step is used. The choice never looks at the
    analytic value.
    """
    steps = tuple(np.atleast_1d(eps).astype(float))
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    out = fn()
    out.backward()
    f0 = out.item()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            top = np.argsort(-np.abs(analytic.reshape(-1)), kind="stable")[:min(largest, max_coords)]
            rest = np.setdiff1d(idx, top)
            idx = np.concatenate([top, rng.choice(rest, size=max_coords - len(top), replace=False)])
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            quotients = []
            for h in steps:
                flat[i] = orig + h
                fp = fn().item()
                flat[i] = orig - h
                fm = fn().item()
                flat[i] = orig
                quotients.append((fp - fm) / (2 * h))
                if _kink_free(fp, f0, fm):
                    break
            else:
                # no step looked smooth: the objective is flat in this
                # coordinate up to rounding, so the widest step is least noisy
                quotients.append(quotients[0])
            numeric[j] = quotients[-1]
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
    return worst


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)
