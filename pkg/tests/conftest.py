import numpy as np

from sinoflick.smallnet import PARAM_ORDER, NetParams, loss_and_grad


def as_dtype(params: NetParams, dtype) -> NetParams:
    return NetParams(*(t.astype(dtype) for t in params.tensors()))


def max_gradient_error(params, s_a, s_b, cfg, eps_scale=1e-3):
    """Worst relative gap between analytic gradients and central differences.

    The analytic side runs in the parameters' own precision; the
    difference-quotient oracle is evaluated in float64 at the same
    parameter values (exact upcast), so the comparison isolates the
    backward pass under test instead of the quotient's cancellation noise.
    """
    _, grads = loss_and_grad(params, s_a, s_b, cfg)
    p64 = as_dtype(params, np.float64)
    s_a64 = np.asarray(s_a, dtype=np.float64)
    s_b64 = np.asarray(s_b, dtype=np.float64)
    worst = 0.0
    for name in PARAM_ORDER:
        tensor = getattr(p64, name)
        analytic = getattr(grads, name)
        for idx in np.ndindex(tensor.shape):
            eps = eps_scale * max(abs(float(tensor[idx])), 0.1)
            orig = tensor[idx]
            tensor[idx] = orig + eps
            lp, _ = loss_and_grad(p64, s_a64, s_b64, cfg)
            tensor[idx] = orig - eps
            lm, _ = loss_and_grad(p64, s_a64, s_b64, cfg)
            tensor[idx] = orig
            fd = (lp - lm) / (2.0 * eps)
            rel = abs(float(analytic[idx]) - fd) / (abs(float(analytic[idx])) + 1e-8)
            worst = max(worst, rel)
    return worst
