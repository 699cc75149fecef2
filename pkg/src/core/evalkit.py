"""
Flow losses and errors, classification metrics and identity-diversity statistics.

The Mixture-of-Laplace terms of the two training objectives are taken as
externally supplied scalars.
"""
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from src.core.flow_field import FlowField, check_same_shape
from src.utils.errors import EmptyClassError, MetricError, UnknownLabelError

UNPARSED = "UNPARSED"
DEFAULT_ALPHA = 0.5
CV_MEAN_FLOOR = 1e-8


# ---------------------------------------------------------------- flow losses

def _endpoint_errors(pred: FlowField, gt: FlowField) -> np.ndarray:
    check_same_shape(pred, gt)
    return np.sqrt((pred.u - gt.u) ** 2 + (pred.v - gt.v) ** 2)


def _binary_mask(mask, shape: tuple[int, int]) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != shape:
        raise MetricError(f"Mask shape {mask.shape} differs from flow shape {shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise MetricError("Mask must be binary (values 0 or 1)")
    return mask.astype(np.float64)


def epe(pred: FlowField, gt: FlowField) -> float:
    """Mean end-point error over all pixels."""
    return float(_endpoint_errors(pred, gt).mean())


def roi_epe(pred: FlowField, gt: FlowField, mask) -> float:
    """
    EPE of the masked difference (pred − gt) ⊙ mask, averaged over all N
    pixels: pixels outside the mask contribute exact zeros.
    """
    check_same_shape(pred, gt)
    m = _binary_mask(mask, pred.shape)
    du = (pred.u - gt.u) * m
    dv = (pred.v - gt.v) * m
    return float(np.sqrt(du ** 2 + dv ** 2).mean())


def stage1_loss(mol_facial: float, pred: FlowField, gt: FlowField, mask) -> float:
    """Facial-flow objective: MoL term + ROI end-point error."""
    if not np.isfinite(mol_facial):
        raise MetricError("mol_facial must be finite")
    return float(mol_facial) + roi_epe(pred, gt, mask)


def stage2_loss(
    mol_head: float,
    pred_expr: FlowField,
    gt_expr: FlowField,
    mask,
    alpha: float = DEFAULT_ALPHA,
) -> float:
    """Expression objective: α·MoL(head) + ROI EPE(expr) + EPE(expr)."""
    if not np.isfinite(mol_head):
        raise MetricError("mol_head must be finite")
    if not alpha > 0:
        raise MetricError(f"alpha must be positive, got {alpha}")
    return alpha * float(mol_head) + roi_epe(pred_expr, gt_expr, mask) + epe(pred_expr, gt_expr)


@dataclass(frozen=True)
class EpeRecord:
    sample_id: str
    epe: float
    roi_epe: Optional[float] = None


def epe_report(records: list[EpeRecord]) -> dict:
    """Per-sample EPE entries plus their means, ready for JSON."""
    roi_values = [r.roi_epe for r in records if r.roi_epe is not None]
    return {
        "count": len(records),
        "mean_epe": float(np.mean([r.epe for r in records])) if records else 0.0,
        "mean_roi_epe": float(np.mean(roi_values)) if roi_values else None,
        "samples": [
            {"id": r.sample_id, "epe": r.epe, "roi_epe": r.roi_epe}
            for r in records
        ],
    }


# ------------------------------------------------------- classification metrics

@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """
    Rows are ground truth, columns predictions. Unparsed predictions sit in a
    separate overflow column: they count as misses for their true class and
    as predictions of no class.
    """
    labels: tuple[str, ...]
    counts: np.ndarray     # (C, C) int64
    unparsed: np.ndarray   # (C,) int64

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.unparsed.sum())

    @property
    def unparsed_count(self) -> int:
        return int(self.unparsed.sum())

    def true_positives(self) -> np.ndarray:
        return np.diag(self.counts)

    def support(self) -> np.ndarray:
        """TP + FN per class, unparsed included."""
        return self.counts.sum(axis=1) + self.unparsed

    def predicted(self) -> np.ndarray:
        """TP + FP per class."""
        return self.counts.sum(axis=0)


def confusion_matrix(pairs: Iterable[tuple[str, str]], labels: Iterable[str]) -> ConfusionMatrix:
    """
    Count (ground truth, prediction) pairs. A prediction outside the label set
    (UNPARSED included) goes to the overflow column.

    Raises:
        UnknownLabelError: a ground-truth label is not in `labels`
    """
    labels = tuple(labels)
    index = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    unparsed = np.zeros(len(labels), dtype=np.int64)

    for gt, pred in pairs:
        if gt not in index:
            raise UnknownLabelError(f"Ground-truth label '{gt}' not in {labels}")
        if pred in index:
            counts[index[gt], index[pred]] += 1
        else:
            unparsed[index[gt]] += 1

    return ConfusionMatrix(labels, counts, unparsed)


def _check_support(cm: ConfusionMatrix) -> np.ndarray:
    support = cm.support()
    empty = [label for label, n in zip(cm.labels, support) if n == 0]
    if empty:
        raise EmptyClassError(f"Classes without ground-truth samples: {', '.join(empty)}")
    return support


def per_class_recall(cm: ConfusionMatrix) -> np.ndarray:
    support = _check_support(cm)
    return cm.true_positives() / support


def per_class_precision(cm: ConfusionMatrix) -> np.ndarray:
    """TP / (TP + FP); a class never predicted has precision 0."""
    predicted = cm.predicted()
    tp = cm.true_positives()
    return np.divide(tp, predicted, out=np.zeros(len(cm.labels)), where=predicted > 0)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """2PR / (P + R), with F1 = 0 where P + R = 0."""
    p = per_class_precision(cm)
    r = per_class_recall(cm)
    denom = p + r
    return np.divide(2.0 * p * r, denom, out=np.zeros(len(cm.labels)), where=denom > 0)


def uar(cm: ConfusionMatrix) -> float:
    """Unweighted average recall."""
    return float(per_class_recall(cm).mean())


def uf1(cm: ConfusionMatrix) -> float:
    """Unweighted (macro) F1."""
    return float(per_class_f1(cm).mean())


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricError("Accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts) / cm.total)


@dataclass(frozen=True)
class MetricsReport:
    labels: tuple[str, ...]
    uf1: float
    uar: float
    acc: float
    per_class_recall: tuple[float, ...]
    per_class_precision: tuple[float, ...]
    per_class_f1: tuple[float, ...]
    unparsed_rate: float
    total: int


def metrics_report(cm: ConfusionMatrix) -> MetricsReport:
    recall = per_class_recall(cm)
    f1 = per_class_f1(cm)
    return MetricsReport(
        labels=cm.labels,
        uf1=float(f1.mean()),
        uar=float(recall.mean()),
        acc=accuracy(cm),
        per_class_recall=tuple(float(x) for x in recall),
        per_class_precision=tuple(float(x) for x in per_class_precision(cm)),
        per_class_f1=tuple(float(x) for x in f1),
        unparsed_rate=cm.unparsed_count / cm.total,
        total=cm.total,
    )


# ---------------------------------------------------------- identity diversity

@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    values: np.ndarray  # (n, d)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise MetricError(f"Embeddings must be a 2D matrix, got shape {values.shape}")
        if values.shape[0] < 2:
            raise MetricError("Diversity needs at least two embeddings")
        if not np.all(np.isfinite(values)):
            raise MetricError("Embeddings must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_bytes(cls, buffer: bytes) -> "EmbeddingMatrix":
        """Binary layout: int32 n, int32 d, then n*d little-endian float32, row-major."""
        if len(buffer) < 8:
            raise MetricError("Embedding file too short for its header")
        n, d = struct.unpack_from("<ii", buffer, 0)
        if n <= 0 or d <= 0:
            raise MetricError(f"Non-positive embedding dimensions {n}x{d}")
        if len(buffer) < 8 + 4 * n * d:
            raise MetricError(f"Truncated embedding payload for {n}x{d}")
        values = np.frombuffer(buffer, dtype="<f4", count=n * d, offset=8).reshape(n, d)
        return cls(values.astype(np.float64))

    def to_bytes(self) -> bytes:
        return struct.pack("<ii", self.n, self.d) + self.values.astype("<f4").tobytes()

    @classmethod
    def from_file(cls, path: str | Path) -> "EmbeddingMatrix":
        """`.csv` files are comma-separated rows; anything else uses the binary layout."""
        path = Path(path)
        if path.suffix.lower() == ".csv":
            return cls(np.loadtxt(path, delimiter=",", ndmin=2))
        return cls.from_bytes(path.read_bytes())


@dataclass(frozen=True)
class DiversityReport:
    std_global: float
    cv_global: float
    sim_std_raw: float
    sim_std_x100: float
    note: str = "population standard deviations (divisor n)"


def _population_std(values: np.ndarray, axis: int | None = None) -> np.ndarray:
    """Divisor-n std, shifted by the first entry so constant input gives exactly 0."""
    reference = values[0] if axis == 0 else values.flat[0]
    return np.std(values - reference, axis=axis)


def pairwise_cosine(values: np.ndarray) -> np.ndarray:
    """All n(n−1)/2 cosine similarities of the L2-normalized rows (upper triangle order)."""
    norms = np.linalg.norm(values, axis=1)
    if np.any(norms == 0):
        raise MetricError("Zero-norm embedding row: cosine similarity undefined")
    unit = values / norms[:, None]
    sims = unit @ unit.T
    rows, cols = np.triu_indices(values.shape[0], k=1)
    return sims[rows, cols]


def diversity_metrics(embeddings: EmbeddingMatrix) -> DiversityReport:
    """
    std_global: mean per-dimension std; cv_global: mean of std_d / max(|mean_d|, 1e-8);
    sim_std: std of pairwise cosine similarities (raw and ×100).
    """
    values = embeddings.values
    std = _population_std(values, axis=0)
    mean = values.mean(axis=0)
    cv = std / np.maximum(np.abs(mean), CV_MEAN_FLOOR)
    sim_std = float(_population_std(pairwise_cosine(values)))
    return DiversityReport(
        std_global=float(std.mean()),
        cv_global=float(cv.mean()),
        sim_std_raw=sim_std,
        sim_std_x100=100.0 * sim_std,
    )


# -------------------------------------------------------------- JSON rendering

_FIXED = re.compile(r'"@fixed:(-?\d+\.\d{6})"')


def _mark_floats(value):
    if isinstance(value, float):
        return f"@fixed:{value:.6f}"
    if isinstance(value, dict):
        return {k: _mark_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_mark_floats(v) for v in value]
    return value


def to_fixed_json(data: dict) -> str:
    """JSON with every float written as a 6-decimal fixed-point number."""
    text = json.dumps(_mark_floats(data), indent=2, ensure_ascii=False)
    return _FIXED.sub(r"\1", text) + "\n"


def report_to_json(report: MetricsReport | DiversityReport) -> str:
    if isinstance(report, MetricsReport):
        data = {
            "labels": list(report.labels),
            "uf1": report.uf1,
            "uar": report.uar,
            "acc": report.acc,
            "per_class_recall": list(report.per_class_recall),
            "per_class_precision": list(report.per_class_precision),
            "per_class_f1": list(report.per_class_f1),
            "unparsed_rate": report.unparsed_rate,
            "total": report.total,
        }
    else:
        data = {
            "std_global": report.std_global,
            "cv_global": report.cv_global,
            "sim_std_raw": report.sim_std_raw,
            "sim_std_x100": report.sim_std_x100,
            "note": report.note,
        }
    return to_fixed_json(data)
