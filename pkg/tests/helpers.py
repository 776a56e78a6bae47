import torch


def central_difference_check(fn, param, indices, step=1e-4):
    """Max relative error between autograd and central differences of scalar ``fn()``.

    ``param`` must be float64; ``indices`` are flat positions to probe.
    """
    param.grad = None
    fn().backward()
    grad = param.grad.reshape(-1).clone()
    flat = param.data.view(-1)
    worst = 0.0
    for idx in indices:
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + step
            up = fn().item()
            flat[idx] = orig - step
            down = fn().item()
            flat[idx] = orig
        numeric = (up - down) / (2 * step)
        analytic = grad[idx].item()
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
