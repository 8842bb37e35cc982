"""Shared test utilities: central finite-difference gradient checking."""

import numpy as np

from paprlab.autodiff import Tensor


def fd_check(build_scalar, leaves, rng, n_probes=10, h=1e-4, tol=1e-4):
    """Compare analytic gradients of a scalar graph against central finite
    differences at randomly probed entries of each leaf tensor.

    build_scalar() must rebuild the graph from the current leaf data and
    return the scalar output Tensor. Returns the worst relative error.
    """
    for leaf in leaves:
        leaf.zero_grad()
    out = build_scalar()
    out.backward()
    worst = 0.0
    for leaf in leaves:
        assert leaf.grad is not None, "no gradient reached a leaf"
        flat = leaf.data.reshape(-1)
        gflat = leaf.grad.reshape(-1)
        count = min(n_probes, flat.size)
        probes = rng.choice(flat.size, size=count, replace=False)
        for idx in probes:
            orig = flat[idx]
            flat[idx] = orig + h
            plus = float(build_scalar().data)
            flat[idx] = orig - h
            minus = float(build_scalar().data)
            flat[idx] = orig
            numeric = (plus - minus) / (2 * h)
            # the absolute floor keeps round-off on truly zero gradients
            # from registering as a large relative error
            denom = max(abs(numeric), abs(gflat[idx]), 1e-6)
            rel = abs(gflat[idx] - numeric) / denom
            worst = max(worst, rel)
    assert worst < tol, f"worst relative gradient error {worst:.3e} >= {tol}"
    return worst


def leaf(rng, shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)
