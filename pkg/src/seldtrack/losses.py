"""Track-wise losses and frame-level permutation-invariant selection.

Per frame and track the objective sums three terms:

* SED: cross entropy of the track's class logits against the target class
  (index n_classes = silence), computed from stabilized log-softmax
* EAD: binary cross entropy of the activity probability
* DoA: masked p=1 difference, 0.5 * (|wrapped d_azimuth| + |d_elevation|),
  weighted by the activity mask (ground truth during training)

Frame-level PIT evaluates that sum for every permutation of the target
tracks, keeps the minimum (ties break to the lexicographically smallest
permutation), and lets gradients flow only through the selected pairing. The
DoA total is normalized by the mask sum after selection; the per-frame
minimum itself uses the raw masked sum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import torch

from .errors import ValidationError
from .model import TrackOutputs
from .scenes import LabelGrid

BCE_EPS = 1e-7
PI = math.pi


def wrap_angle(x: torch.Tensor) -> torch.Tensor:
    """Wrap radians into [-pi, pi)."""
    return torch.remainder(x + PI, 2 * PI) - PI


@dataclass
class FrameTargets:
    """Ground truth per frame and track, batched: class index (n_classes =
    silence), activity in {0,1}, DoA angles (zeros where inactive)."""

    class_idx: torch.Tensor  # (B, T, n_track) long
    ead: torch.Tensor        # (B, T, n_track) float
    doa: torch.Tensor        # (B, T, n_track, 2) float
    n_classes: int

    @classmethod
    def from_grid(cls, grid: LabelGrid, n_classes: int, dtype=torch.float32) -> "FrameTargets":
        if grid.active.any() and int(grid.class_id[grid.active].max()) >= n_classes:
            raise ValidationError("grid contains classes beyond n_classes")
        active = torch.from_numpy(grid.active)
        class_idx = torch.from_numpy(grid.class_id).long()
        class_idx = torch.where(active, class_idx, torch.full_like(class_idx, n_classes))
        doa = torch.stack(
            [torch.from_numpy(grid.azimuth), torch.from_numpy(grid.elevation)], dim=-1
        ).to(dtype)
        return cls(
            class_idx.unsqueeze(0),
            active.to(dtype).unsqueeze(0),
            doa.unsqueeze(0),
            n_classes,
        )

    @classmethod
    def stack(cls, items: list["FrameTargets"]) -> "FrameTargets":
        return cls(
            torch.cat([i.class_idx for i in items]),
            torch.cat([i.ead for i in items]),
            torch.cat([i.doa for i in items]),
            items[0].n_classes,
        )

    @property
    def n_track(self) -> int:
        return self.class_idx.shape[-1]


def sed_loss_frame(logits: torch.Tensor, class_idx: torch.Tensor) -> torch.Tensor:
    """-log softmax(logits)[class]; logits (..., C), class (...)."""
    log_probs = torch.log_softmax(logits, dim=-1)
    return -log_probs.gather(-1, class_idx.unsqueeze(-1)).squeeze(-1)


def ead_loss_frame(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = prob.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p))


def doa_loss_frame(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """0.5 * (|wrapped azimuth error| + |elevation error|) * mask; inputs
    (..., 2) with mask (...)."""
    d_az = wrap_angle(pred[..., 0] - target[..., 0]).abs()
    d_el = (pred[..., 1] - target[..., 1]).abs()
    return 0.5 * (d_az + d_el) * mask


def ead_mask(
    mode: str,
    ead_values: torch.Tensor,
    sed_logits: torch.Tensor | None = None,
    n_classes: int | None = None,
    threshold: float = 0.5,
) -> torch.Tensor:
    """Activity mask for the DoA path. ``train`` passes the ground-truth
    activity through; ``test`` requires the predicted activity above the
    threshold AND the SED argmax to land on a non-silence class."""
    if mode == "train":
        return ead_values.float()
    if mode == "test":
        if sed_logits is None or n_classes is None:
            raise ValidationError("test-mode mask needs sed_logits and n_classes")
        non_silent = sed_logits.argmax(dim=-1) < n_classes
        return ((ead_values > threshold) & non_silent).float()
    raise ValidationError(f"unknown mask mode {mode!r}")


def track_permutations(n_track: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.permutations(range(n_track)))


@dataclass
class LossBreakdown:
    """Everything the PIT selection saw: per-frame per-permutation component
    losses, the selected permutation per frame, and the aggregated totals."""

    total_tpit: torch.Tensor   # sum over frames of the per-frame minimum
    total_sed: torch.Tensor    # sum over frames/tracks under selection
    total_ead: torch.Tensor
    total_doa: torch.Tensor    # mask-normalized (0 when the mask is empty)
    selected_perm: torch.Tensor  # (B, T) index into ``permutations``
    permutations: tuple[tuple[int, ...], ...]
    frame_loss: torch.Tensor   # (B, T) per-frame minimum
    per_perm: dict[str, torch.Tensor]  # component losses, each (B, T, P)
    n_frames: int
    mask_total: torch.Tensor


def tpit_loss(outputs: TrackOutputs, targets: FrameTargets) -> LossBreakdown:
    """Frame-level PIT over all target-track permutations."""
    sed_logits, ead_prob, doa_pred = outputs.sed_logits, outputs.ead_prob, outputs.doa
    if sed_logits.shape[1] != targets.class_idx.shape[1] or sed_logits.shape[0] != targets.class_idx.shape[0]:
        raise ValidationError(
            f"outputs cover {tuple(sed_logits.shape[:2])} frames, targets "
            f"{tuple(targets.class_idx.shape[:2])}"
        )
    if outputs.n_track != targets.n_track:
        raise ValidationError("track count mismatch between outputs and targets")

    log_probs = torch.log_softmax(sed_logits, dim=-1)
    perms = track_permutations(outputs.n_track)

    sed_pp, ead_pp, doa_pp = [], [], []
    for perm in perms:
        idx = list(perm)
        cls_p = targets.class_idx[..., idx]
        ead_p = targets.ead[..., idx]
        doa_p = targets.doa[..., idx, :]
        sed_l = -log_probs.gather(-1, cls_p.unsqueeze(-1)).squeeze(-1)
        ead_l = ead_loss_frame(ead_prob, ead_p)
        doa_l = doa_loss_frame(doa_pred, doa_p, ead_p)
        sed_pp.append(sed_l.sum(dim=-1))
        ead_pp.append(ead_l.sum(dim=-1))
        doa_pp.append(doa_l.sum(dim=-1))

    sed_pp = torch.stack(sed_pp, dim=-1)  # (B, T, P)
    ead_pp = torch.stack(ead_pp, dim=-1)
    doa_pp = torch.stack(doa_pp, dim=-1)
    total_pp = sed_pp + ead_pp + doa_pp

    # first strict minimum in lexicographic permutation order
    with torch.no_grad():
        best = total_pp[..., 0].clone()
        sel = torch.zeros_like(best, dtype=torch.long)
        for p in range(1, len(perms)):
            better = total_pp[..., p] < best
            best = torch.where(better, total_pp[..., p], best)
            sel = torch.where(better, torch.full_like(sel, p), sel)

    gather_idx = sel.unsqueeze(-1)
    frame_loss = total_pp.gather(-1, gather_idx).squeeze(-1)
    sed_sel = sed_pp.gather(-1, gather_idx).squeeze(-1)
    ead_sel = ead_pp.gather(-1, gather_idx).squeeze(-1)
    doa_sel = doa_pp.gather(-1, gather_idx).squeeze(-1)

    mask_total = targets.ead.sum()
    total_doa = doa_sel.sum() / mask_total if float(mask_total) > 0 else doa_sel.sum() * 0.0

    return LossBreakdown(
        total_tpit=frame_loss.sum(),
        total_sed=sed_sel.sum(),
        total_ead=ead_sel.sum(),
        total_doa=total_doa,
        selected_perm=sel,
        permutations=perms,
        frame_loss=frame_loss,
        per_perm={"sed": sed_pp, "ead": ead_pp, "doa": doa_pp, "total": total_pp},
        n_frames=int(frame_loss.numel()),
        mask_total=mask_total,
    )
