"""Training objective: reconstruction + beta * classification + gamma * orthogonality."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def stop_targets(lengths: torch.Tensor, n_frames: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Stop labels and loss mask for ``n_frames`` decoded frames.

    The last real frame and every pad frame are labelled 1; frames past the
    first stop frame are masked out.
    """
    t = torch.arange(n_frames)[None, :]
    last = (lengths - 1)[:, None]
    return (t >= last), (t <= last)


def _bce_with_logits(logits, targets):
    # where() keeps perfect (+/-inf) logits at exactly zero loss
    return torch.where(targets, F.softplus(-logits), F.softplus(logits))


def recon_loss(pred, stop_logits, target, lengths, return_parts: bool = False):
    """Masked frame MSE plus stop-flag binary cross-entropy.

    ``pred`` has ``ceil(T/r)*r`` frames; ``target`` is zero-padded to match.
    """
    B, Tp, D = pred.shape
    padded = pred.new_zeros(B, Tp, D)
    padded[:, : target.shape[1]] = target[:, :Tp]
    stop, mask = stop_targets(lengths, Tp)
    m = mask.to(pred.dtype)
    mse = (((pred - padded) ** 2).sum(-1) * m).sum() / (m.sum() * D)
    bce = (_bce_with_logits(stop_logits, stop) * m).sum() / m.sum()
    total = mse + bce
    if return_parts:
        return total, mse, bce
    return total


def classification_loss(class_logits, labels):
    """Mean over sub-encoders of the cross-entropy of each head."""
    terms = [F.cross_entropy(logits, labels[:, n]) for n, logits in enumerate(class_logits)]
    return torch.stack(terms).mean()


def orthogonality_loss(ref_embs):
    """Sum over unordered pairs i < j of ||Hi^T Hj||_F^2 with L2-normalised rows."""
    if len(ref_embs) < 2:
        return ref_embs[0].new_zeros(())
    hs = [F.normalize(h, dim=1) for h in ref_embs]
    total = hs[0].new_zeros(())
    for i in range(len(hs)):
        for j in range(i + 1, len(hs)):
            total = total + (hs[i].T @ hs[j]).pow(2).sum()
    return total


def combine(recon, cls, orth, beta: float, gamma: float):
    return recon + beta * cls + gamma * orth


def total_loss(outputs: dict, batch, beta: float = 1.0, gamma: float = 0.02):
    """Return the scalar objective and a float breakdown for logging.

    The auxiliary classification and orthogonality terms are only active
    with more than one sub-encoder.
    """
    recon, mse, bce = recon_loss(
        outputs["pred"], outputs["stop_logits"], batch.target, batch.target_lengths, return_parts=True
    )
    if len(outputs["ref_embs"]) > 1:
        cls = classification_loss(outputs["class_logits"], batch.labels)
        orth = orthogonality_loss(outputs["ref_embs"])
    else:
        cls = recon.new_zeros(())
        orth = recon.new_zeros(())
    total = combine(recon, cls, orth, beta, gamma)
    breakdown = {
        "recon": float(recon.detach()),
        "mse": float(mse.detach()),
        "stop": float(bce.detach()),
        "cls": float(cls.detach()),
        "orth": float(orth.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown
