"""Central finite-difference gradient oracle, independent of the autodiff path.

The oracle re-evaluates the loss as a plain float for every perturbed
coordinate; it never touches Tensor.grad.
"""

import numpy as np


def finite_difference(loss_fn, arrays, h=1e-4):
    """d(loss)/d(array) for each array, by central differences.

    loss_fn takes no arguments and must read the arrays in place (they are
    perturbed one coordinate at a time and restored afterwards).
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn())
            flat[i] = orig - h
            down = float(loss_fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(a, b):
    """Norm-based relative difference; 0 when both are (near) zero."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    denom = max(na, nb)
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(loss_fn, params, h=1e-4, tol=1e-4):
    """Compare autodiff grads already stored on `params` against the oracle.

    params: dict name -> Tensor with .grad populated by a backward pass.
    Returns the worst relative error seen; raises AssertionError beyond tol.
    """
    worst = 0.0
    for name, p in params.items():
        fd = finite_difference(loss_fn, [p.value], h=h)[0]
        an = p.grad if p.grad is not None else np.zeros_like(p.value)
        err = relative_error(fd, an)
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.3e}"
        worst = max(worst, err)
    return worst
