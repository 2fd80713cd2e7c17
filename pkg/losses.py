"""
Classification, feature-reconstruction and composite transformation losses.

L_trans(x, x_hat, y) = L_class(x_hat, y) - alpha * L_feat(x, x_hat), averaged over a minibatch.
Gradients come from autograd; the feature term never reaches the classifier's weights.
"""

import math
from dataclasses import dataclass
from typing import Callable

import torch
from torch import nn

from errors import DomainError
from Networks.common import evaluating

EPS = 1e-12
LOG_EPS = math.log(EPS)


@dataclass
class LossBreakdown:
    """Scalar terms of the composite loss; total = class_term - alpha * feat_term"""
    class_term: float
    feat_term: float
    alpha: float
    total: float

    @classmethod
    def compose(cls, class_term: float, feat_term: float, alpha: float) -> "LossBreakdown":
        return cls(class_term, feat_term, alpha, class_term - alpha * feat_term)


@dataclass
class BatchTerms:
    """Minibatch means as tensors; total carries the autograd graph"""
    total: torch.Tensor
    class_term: torch.Tensor
    feat_term: torch.Tensor

    def breakdown(self, alpha: float) -> LossBreakdown:
        return LossBreakdown(float(self.class_term), float(self.feat_term), alpha, float(self.total))


def _as_batch(t: torch.Tensor, dims: int) -> torch.Tensor:
    return t.unsqueeze(0) if t.dim() == dims - 1 else t


def classification_loss(y_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """
    Cross-entropy -sum_j y(j) ln(max(y_hat(j), 1e-12)).

    Accepts single vectors [c] (returns a 0-dim tensor) or batches [m, c] (returns [m]).
    """
    if y_hat.shape != y.shape:
        raise DomainError(f"prediction shape {tuple(y_hat.shape)} does not match label shape {tuple(y.shape)}")
    return -(y * torch.log(y_hat.clamp_min(EPS))).sum(dim=-1)


def classification_loss_from_log_probs(log_probs: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Same value as classification_loss, computed from log-probabilities for stability"""
    if log_probs.shape != y.shape:
        raise DomainError(f"prediction shape {tuple(log_probs.shape)} does not match label shape {tuple(y.shape)}")
    return -(y * log_probs.clamp_min(LOG_EPS)).sum(dim=-1)


def feature_loss(x: torch.Tensor, x_hat: torch.Tensor, phi: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    """
    (1 / (C_k H_k W_k)) * ||phi(x_hat) - phi(x)||^2 per image.

    Single images [C, H, W] give a 0-dim tensor, batches [m, C, H, W] give [m].
    """
    if x.shape != x_hat.shape:
        raise DomainError(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    single = x.dim() == 3
    x, x_hat = _as_batch(x, 4), _as_batch(x_hat, 4)
    with torch.no_grad():
        target = phi(x)
    diff = phi(x_hat) - target
    per_image = diff.pow(2).flatten(1).mean(dim=1)
    return per_image[0] if single else per_image


def _log_probs(psi, x_hat: torch.Tensor) -> torch.Tensor:
    if hasattr(psi, "log_probs"):
        return psi.log_probs(x_hat)
    return torch.log(psi(x_hat).clamp_min(EPS))


def transformation_terms(x: torch.Tensor, x_hat: torch.Tensor, y: torch.Tensor, psi, phi,
                         alpha: float) -> BatchTerms:
    """Minibatch means of L_class, L_feat and L_trans with the autograd graph intact"""
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    x, x_hat, y = _as_batch(x, 4), _as_batch(x_hat, 4), _as_batch(y, 2)
    if not (len(x) == len(x_hat) == len(y)):
        raise DomainError(f"batch sizes differ: {len(x)}, {len(x_hat)}, {len(y)}")
    if len(x) == 0:
        raise DomainError("empty batch")

    class_terms = classification_loss_from_log_probs(_log_probs(psi, x_hat), y)
    if alpha == 0:
        # reported only
        with torch.no_grad():
            feat_terms = feature_loss(x, x_hat.detach(), phi).to(class_terms.dtype)
        totals = class_terms
    else:
        feat_terms = feature_loss(x, x_hat, phi)
        totals = class_terms - alpha * feat_terms
    return BatchTerms(totals.mean(), class_terms.mean(), feat_terms.mean())


def transformation_loss(x: torch.Tensor, x_hat: torch.Tensor, y: torch.Tensor, psi, phi,
                        alpha: float) -> LossBreakdown:
    """
    L_trans for one image (or the mean over a batch) as plain floats.

    psi is scored in eval mode without autograd, so batch-norm statistics are left untouched.
    """
    with evaluating(psi) if isinstance(psi, nn.Module) else torch.no_grad():
        terms = transformation_terms(x, x_hat, y, psi, phi, alpha)
    return LossBreakdown.compose(float(terms.class_term), float(terms.feat_term), alpha)


def batch_objective_terms(X: torch.Tensor, Y: torch.Tensor, h, psi, phi, alpha: float) -> BatchTerms:
    if X.dim() != 4 or len(X) == 0:
        raise DomainError("batch objective needs a non-empty [m, C, H, W] batch")
    if len(Y) != len(X):
        raise DomainError(f"{len(X)} images but {len(Y)} labels")
    return transformation_terms(X, h(X), Y, psi, phi, alpha)


def batch_objective(X: torch.Tensor, Y: torch.Tensor, h, psi, phi, alpha: float) -> torch.Tensor:
    """(1/m) sum_i L_trans(x_i, h(x_i), y_i) as a differentiable scalar"""
    return batch_objective_terms(X, Y, h, psi, phi, alpha).total
