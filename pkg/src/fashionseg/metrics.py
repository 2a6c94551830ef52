"""Segmentation and classification evaluation metrics."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValueRangeError


def iou(a, b):
    """Intersection over union of two binary foreground masks.

    Both-empty masks score 1.0: a correct all-background prediction is not
    penalized for the 0/0 case.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError("iou mask shapes differ: %s vs %s" % (a.shape, b.shape))
    fa = a != 0
    fb = b != 0
    union = np.count_nonzero(fa | fb)
    if union == 0:
        return 1.0
    return np.count_nonzero(fa & fb) / union


def mean_iou(ious):
    if len(ious) == 0:
        raise ValueRangeError("mean_iou of empty list")
    return float(sum(ious)) / len(ious)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[t][p] = true class t predicted as p
    labels: list

    @property
    def total(self):
        return int(self.counts.sum())

    def row_normalized(self):
        c = self.counts.astype(np.float64)
        sums = c.sum(axis=1, keepdims=True)
        sums[sums == 0] = 1.0
        return c / sums


def confusion(true_labels, predicted_labels, k):
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape:
        raise ShapeError("label list lengths differ: %d vs %d"
                         % (true_labels.size, predicted_labels.size))
    for name, arr in (("true", true_labels), ("predicted", predicted_labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueRangeError("%s label outside [0, %d)" % (name, k))
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted_labels), 1)
    return ConfusionMatrix(counts=counts, labels=list(range(k)))


def accuracy(cm):
    total = cm.total
    if total == 0:
        raise ValueRangeError("accuracy of empty confusion matrix")
    return float(np.trace(cm.counts)) / total


@dataclass
class MetricReport:
    per_image_iou: list = field(default_factory=list)
    mean_iou: float = None
    accuracy: float = None
    confusion: ConfusionMatrix = None
    item_count: int = 0


def seg_report(per_image_iou):
    return MetricReport(per_image_iou=list(per_image_iou),
                        mean_iou=mean_iou(per_image_iou),
                        item_count=len(per_image_iou))


def cls_report(true_labels, predicted_labels, k):
    cm = confusion(true_labels, predicted_labels, k)
    return MetricReport(accuracy=accuracy(cm), confusion=cm, item_count=cm.total)
