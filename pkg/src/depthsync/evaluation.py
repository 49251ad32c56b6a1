"""Masked depth losses and metrics.

The joint mask is ``m & m_seg``: ``m`` defaults to the pixels where ground
truth exists, ``m_seg`` to all ones. Missing predictions count as 0 depth.
"""

import warnings

import numpy as np

from .errors import InvalidInputError

MM_PER_M = 1000.0


class EmptyMaskWarning(UserWarning):
    pass


def _joint_mask(pred, gt, m, m_seg):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    mask = gt > 0 if m is None else np.asarray(m, dtype=bool)
    if mask.shape != gt.shape:
        raise InvalidInputError(f"validity mask shape {mask.shape} != {gt.shape}")
    if m_seg is not None:
        m_seg = np.asarray(m_seg, dtype=bool)
        if m_seg.shape != gt.shape:
            raise InvalidInputError(f"segmentation mask shape {m_seg.shape} != {gt.shape}")
        mask = mask & m_seg
    return pred, gt, mask


def masked_l1(pred, gt, m=None, m_seg=None, reduction="mean"):
    """L1 depth error in meters over the joint mask; ``reduction`` is "mean" or "sum"."""
    pred, gt, mask = _joint_mask(pred, gt, m, m_seg)
    n = int(mask.sum())
    if n == 0:
        warnings.warn("empty joint mask; loss reported as 0", EmptyMaskWarning, stacklevel=2)
        return 0.0
    total = float(np.abs(pred[mask] - gt[mask]).sum())
    if reduction == "sum":
        return total
    if reduction != "mean":
        raise InvalidInputError(f"unknown reduction {reduction!r}")
    return total / n


def masked_mse(pred, gt, m=None, m_seg=None):
    """Mean squared depth error in mm² over the joint mask."""
    pred, gt, mask = _joint_mask(pred, gt, m, m_seg)
    n = int(mask.sum())
    if n == 0:
        warnings.warn("empty joint mask; MSE reported as 0", EmptyMaskWarning, stacklevel=2)
        return 0.0
    diff = (pred[mask] - gt[mask]) * MM_PER_M
    return float(np.mean(diff * diff))


def evaluate_dataset(predictions, dataset, use_seg=True):
    """Per-record metrics and their mean.

    ``predictions`` is a list of depth arrays aligned with ``dataset.records``.
    """
    if len(predictions) != len(dataset.records):
        raise InvalidInputError(f"{len(predictions)} predictions for {len(dataset.records)} records")
    rows = []
    for n, (pred, rec) in enumerate(zip(predictions, dataset.records)):
        seg = rec.lq_frame.mask if use_seg else None
        pred_a, gt, mask = _joint_mask(pred, rec.depth, rec.mask, seg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyMaskWarning)
            mse = masked_mse(pred_a, gt, mask)
            l1 = masked_l1(pred_a, gt, mask)
        rows.append({"index": n, "lq_index": rec.lq_index, "timestamp_us": rec.lq_frame.timestamp_us,
                     "n_pixels": int(mask.sum()), "mse_mm2": mse, "rmse_mm": float(np.sqrt(mse)),
                     "l1_mm": l1 * MM_PER_M})
    summary = {"n_frames": len(rows)}
    for key in ("mse_mm2", "rmse_mm", "l1_mm"):
        summary[f"mean_{key}"] = float(np.mean([r[key] for r in rows])) if rows else 0.0
    summary["sqrt_mean_mse_mm"] = float(np.sqrt(summary["mean_mse_mm2"]))
    return rows, summary


def error_heatmap(pred, gt, m=None, m_seg=None, scale_mm=100.0):
    """8-bit absolute-error image: 0 outside the mask, 255 at ``scale_mm`` or more."""
    pred, gt, mask = _joint_mask(pred, gt, m, m_seg)
    err = np.abs(pred - gt) * MM_PER_M
    img = np.clip(np.rint(err / scale_mm * 255), 0, 255).astype(np.uint8)
    img[~mask] = 0
    return img
