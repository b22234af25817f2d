"""Central finite-difference gradient checking for blocks and losses."""

import torch

FD_STEP = 1e-3
REL_TOL = 1e-2
ABS_FLOOR = 1e-5


def finite_diff_grad(loss_fn, tensor, h=FD_STEP):
    """Central differences of a scalar function w.r.t. one tensor, in place."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.reshape(-1)
    grad_flat = grad.reshape(-1)
    for k in range(flat.numel()):
        original = flat[k].item()
        flat[k] = original + h
        up = loss_fn().detach().item()
        flat[k] = original - h
        down = loss_fn().detach().item()
        flat[k] = original
        grad_flat[k] = (up - down) / (2.0 * h)
    return grad


def assert_gradients_match(loss_fn, tensors, h=FD_STEP, rel_tol=REL_TOL,
                           abs_floor=ABS_FLOOR, context=""):
    """Compare autograd gradients with central differences.

    ``tensors`` are float64 leaves with requires_grad; ``loss_fn`` must
    recompute the scalar loss from their current values on every call.
    """
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    for idx, tensor in enumerate(tensors):
        analytic = tensor.grad
        assert analytic is not None, f"{context}: tensor {idx} got no gradient"
        with torch.no_grad():
            numeric = finite_diff_grad(loss_fn, tensor, h)
        scale = torch.maximum(analytic.abs(), numeric.abs())
        err = (analytic - numeric).abs()
        bad = err > rel_tol * scale + abs_floor
        assert not bool(bad.any()), (
            f"{context}: tensor {idx} gradient mismatch, "
            f"max abs err {float(err.max()):.3e}, "
            f"max rel err {float((err / (scale + 1e-12)).max()):.3e}"
        )
