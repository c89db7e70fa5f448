"""
Differentiation helpers on top of torch autograd: the Gamma log-density used by the time-to-event head and a
central finite-difference gradient checker.
"""
import logging
import re
from typing import Callable, Optional, Sequence

import torch

_ANOMALY_NODE = re.compile(r"Function '(\w+)' returned nan")


class NonFiniteError(FloatingPointError):
    """
    A NaN or infinite value produced while evaluating or differentiating a graph. `node` names the operation
    that produced it.
    """

    def __init__(self, node: str, detail: str = ""):
        self.node = node
        message = f"Non-finite value produced by [{node}]"
        super().__init__(f"{message}: {detail}" if detail else message)


def gamma_log_pdf(alpha: torch.Tensor, beta: torch.Tensor, t) -> torch.Tensor:
    """
    Log-density of a Gamma distribution with shape `alpha` and rate `beta`:
    alpha * log(beta) - lgamma(alpha) + (alpha - 1) * log(t) - beta * t.

    :param alpha: the shape, positive
    :param beta: the rate, positive
    :param t: the evaluation point, positive
    :return: the elementwise log-density
    """
    t = torch.as_tensor(t, dtype=alpha.dtype, device=alpha.device)
    if bool(torch.any(t <= 0)):
        raise ValueError("The Gamma density is only defined for positive time values.")
    return alpha * torch.log(beta) - torch.lgamma(alpha) + (alpha - 1.0) * torch.log(t) - beta * t


def check_finite(value: torch.Tensor, node: str):
    if not bool(torch.isfinite(value).all()):
        raise NonFiniteError(node, f"value={value.detach().flatten()[:4].tolist()}")


def _evaluate(f: Callable[[], torch.Tensor]) -> float:
    with torch.no_grad():
        value = f()
    check_finite(value, "forward")
    return float(value)


def analytic_gradients(f: Callable[[], torch.Tensor], params: Sequence[torch.Tensor]):
    """
    Evaluates f and its gradients with anomaly detection on, turning NaN failures into a NonFiniteError naming
    the backward node.
    """
    try:
        with torch.autograd.detect_anomaly(check_nan=True):
            value = f()
            check_finite(value, "forward")
            grads = torch.autograd.grad(value, list(params), allow_unused=True)
    except RuntimeError as e:
        match = _ANOMALY_NODE.search(str(e))
        if match is None:
            raise
        raise NonFiniteError(match.group(1), str(e).splitlines()[0])
    return value, [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def grad_check(f: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], epsilon: float = 1e-5,
               max_entries_per_param: Optional[int] = None, seed: int = 0) -> float:
    """
    Compares autograd gradients of a scalar function with central finite differences.

    :param f: a function of no argument returning a scalar tensor computed from `params`
    :param params: the leaf tensors to check, ideally float64
    :param epsilon: the finite difference step
    :param max_entries_per_param: optional: check a random subset of this many entries per tensor
    :param seed: the seed of the entry subset
    :return: max |analytic - numeric| / max(1, |analytic|) over all checked entries
    """
    _, grads = analytic_gradients(f, params)
    generator = torch.Generator().manual_seed(seed)
    max_error = 0.0
    for p_index, (param, grad) in enumerate(zip(params, grads)):
        flat = param.detach().view(-1)
        flat_grad = grad.detach().reshape(-1)
        entries = torch.arange(flat.numel())
        if max_entries_per_param is not None and flat.numel() > max_entries_per_param:
            entries = torch.randperm(flat.numel(), generator=generator)[:max_entries_per_param]
        for i in entries.tolist():
            original = float(flat[i])
            with torch.no_grad():
                flat[i] = original + epsilon
            plus = _evaluate(f)
            with torch.no_grad():
                flat[i] = original - epsilon
            minus = _evaluate(f)
            with torch.no_grad():
                flat[i] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            analytic = float(flat_grad[i])
            max_error = max(max_error, abs(analytic - numeric) / max(1.0, abs(analytic)))
        logging.debug("Gradient check param=%d entries=%d max_error=%.3e", p_index, len(entries), max_error)
    return max_error
