import math

import pytest
import torch
import torch.nn.functional as F

from timelinegpt.nn.autodiff import NonFiniteError, gamma_log_pdf, grad_check


def _scalar(value):
    return torch.tensor(value, dtype=torch.float64, requires_grad=True)


def test_gamma_log_pdf_exponential_case():
    assert float(gamma_log_pdf(_scalar(1.0), _scalar(1.0), 1.0)) == pytest.approx(-1.0, abs=1e-12)


def test_gamma_log_pdf_shape_two():
    assert float(gamma_log_pdf(_scalar(2.0), _scalar(1.0), 1.0)) == pytest.approx(-1.0, abs=1e-12)


def test_gamma_log_pdf_matches_torch_distribution():
    alpha, beta = _scalar(2.7), _scalar(0.3)
    expected = torch.distributions.Gamma(alpha, beta).log_prob(torch.tensor(4.2, dtype=torch.float64))
    assert float(gamma_log_pdf(alpha, beta, 4.2)) == pytest.approx(float(expected), abs=1e-10)


def test_gamma_rate_gradient():
    """Tests d(-log p)/d(beta) = t - alpha / beta, which is 0 at (1, 1, 1)"""
    alpha, beta = _scalar(1.0), _scalar(1.0)
    (-gamma_log_pdf(alpha, beta, 1.0)).backward()
    assert float(beta.grad) == pytest.approx(0.0, abs=1e-12)
    alpha, beta = _scalar(3.0), _scalar(2.0)
    (-gamma_log_pdf(alpha, beta, 5.0)).backward()
    assert float(beta.grad) == pytest.approx(5.0 - 3.0 / 2.0, abs=1e-12)


def test_gamma_shape_gradient_uses_digamma():
    alpha, beta = _scalar(2.5), _scalar(1.5)
    gamma_log_pdf(alpha, beta, 0.7).backward()
    expected = math.log(1.5) - float(torch.digamma(torch.tensor(2.5, dtype=torch.float64))) + math.log(0.7)
    assert float(alpha.grad) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_gamma_log_pdf_rejects_nonpositive_time(t):
    with pytest.raises(ValueError):
        gamma_log_pdf(_scalar(1.0), _scalar(1.0), t)


def test_grad_check_quadratic():
    x = _scalar(3.0)
    assert grad_check(lambda: x ** 2, [x]) < 1e-8


def test_grad_check_softmax_cross_entropy():
    generator = torch.Generator().manual_seed(0)
    logits = torch.randn(4, 7, dtype=torch.float64, generator=generator).requires_grad_()
    targets = torch.tensor([0, 3, 6, 2])
    assert grad_check(lambda: F.cross_entropy(logits, targets), [logits]) < 1e-6


def test_grad_check_gamma_log_pdf():
    alpha, beta = _scalar(1.7), _scalar(0.4)
    t = torch.tensor([0.5, 3.5, 40.5], dtype=torch.float64)
    assert grad_check(lambda: -gamma_log_pdf(alpha, beta, t).sum(), [alpha, beta]) < 1e-6


def test_grad_check_layer_norm_and_gelu():
    generator = torch.Generator().manual_seed(1)
    x = torch.randn(3, 6, dtype=torch.float64, generator=generator).requires_grad_()
    weight = torch.randn(6, dtype=torch.float64, generator=generator).requires_grad_()
    assert grad_check(lambda: F.gelu(F.layer_norm(x, (6,), weight)).pow(2).sum(), [x, weight]) < 1e-6


def test_grad_check_accumulates_shared_subexpressions():
    x = _scalar(2.0)

    def f():
        shared = x * x
        return shared + shared * 3.0

    assert grad_check(f, [x]) < 1e-8
    x.grad = None
    (x * x + (x * x) * 3.0).backward()
    assert float(x.grad) == pytest.approx(16.0)


def test_grad_check_subset_of_entries():
    w = torch.arange(100, dtype=torch.float64).requires_grad_()
    assert grad_check(lambda: (w ** 3).sum() / 1e4, [w], max_entries_per_param=5) < 1e-6


def test_grad_check_names_non_finite_forward():
    x = _scalar(-1.0)
    with pytest.raises(NonFiniteError) as e:
        grad_check(lambda: torch.sqrt(x), [x])
    assert e.value.node == "forward"


def test_grad_check_names_non_finite_backward_node():
    x = _scalar(1.0)
    with pytest.raises(NonFiniteError) as e:
        grad_check(lambda: torch.sqrt(x - x) * 0.0, [x])
    assert e.value.node == "SqrtBackward0"
    assert isinstance(e.value, FloatingPointError)


def test_softmax_is_normalized():
    generator = torch.Generator().manual_seed(2)
    probs = torch.softmax(torch.randn(5, 11, dtype=torch.float64, generator=generator) * 10, dim=-1)
    assert bool((probs >= 0).all())
    assert torch.allclose(probs.sum(dim=-1), torch.ones(5, dtype=torch.float64), atol=1e-9)
