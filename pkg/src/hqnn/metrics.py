"""Classification metrics: confusion matrix, precision/recall/F1, ROC/AUC,
and the paired t-test used for multi-seed significance reporting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import stdtr

from .errors import ContractError, DataError


@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    degenerate: bool = False


@dataclass
class MetricsReport:
    n: int
    accuracy: float
    confusion: np.ndarray  # rows = actual, cols = predicted
    precision: list[float]  # per class
    recall: list[float]
    f1: list[float]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    auc: float | None
    roc_fpr: np.ndarray | None
    roc_tpr: np.ndarray | None
    roc_thresholds: np.ndarray | None
    loss: float | None = None
    degenerate_classes: list[int] = field(default_factory=list)

    # Binary convenience: the positive class is malignant (label 1).
    @property
    def positive_precision(self) -> float:
        return self.precision[1]

    @property
    def positive_recall(self) -> float:
        return self.recall[1]

    @property
    def positive_f1(self) -> float:
        return self.f1[1]


def confusion_matrix(y_true, y_pred, n_classes: int = 2) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ContractError(
            f"label/prediction lengths disagree: {y_true.shape} vs {y_pred.shape}"
        )
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[t, p] += 1
    return cm


def prf_from_confusion(cm: np.ndarray):
    """Per-class precision/recall/F1; absent denominators report 0 + a flag."""
    n_classes = cm.shape[0]
    precision, recall, f1, degenerate = [], [], [], []
    for c in range(n_classes):
        tp = cm[c, c]
        pred_c = cm[:, c].sum()
        actual_c = cm[c, :].sum()
        if pred_c == 0 or actual_c == 0:
            degenerate.append(c)
        p = tp / pred_c if pred_c else 0.0
        r = tp / actual_c if actual_c else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(2 * p * r / (p + r)) if (p + r) else 0.0)
    return precision, recall, f1, degenerate


def roc_auc(scores, labels):
    """Threshold-sweep ROC with tied scores grouped; trapezoidal AUC.

    The resulting AUC equals the Mann-Whitney pairwise statistic with ties
    counted 1/2. Returns ((fpr, tpr, thresholds), auc).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise DataError("roc_auc requires both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    fpr = [0.0]
    tpr = [0.0]
    thresholds = [np.inf]
    tp = fp = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tp += int((y[i:j] == 1).sum())
        fp += int((y[i:j] == 0).sum())
        fpr.append(fp / neg)
        tpr.append(tp / pos)
        thresholds.append(float(s[i]))
        i = j
    fpr = np.array(fpr)
    tpr = np.array(tpr)
    auc = float(np.trapezoid(tpr, fpr))
    return (fpr, tpr, np.array(thresholds)), auc


def compute_metrics(labels, predictions, scores=None, loss=None,
                    n_classes: int = 2) -> MetricsReport:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    cm = confusion_matrix(labels, predictions, n_classes)
    precision, recall, f1, degenerate = prf_from_confusion(cm)
    auc = None
    fpr = tpr = thr = None
    if scores is not None and len(set(labels.tolist())) == 2:
        (fpr, tpr, thr), auc = roc_auc(scores, labels)
    return MetricsReport(
        n=int(cm.sum()),
        accuracy=float(np.trace(cm) / cm.sum()),
        confusion=cm,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        auc=auc,
        roc_fpr=fpr,
        roc_tpr=tpr,
        roc_thresholds=thr,
        loss=loss,
        degenerate_classes=degenerate,
    )


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired t-test on per-run metric lists.

    Zero-variance differences are flagged degenerate: |t| is reported as
    infinity (p = 0) when the common difference is nonzero, and t = 0
    (p = 1) when the runs are elementwise identical.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"paired lists must match: {a.shape} vs {b.shape}")
    n = len(a)
    if n < 2:
        raise ContractError(f"paired t-test needs n >= 2, got {n}")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, df=df, degenerate=True)
        return TTestResult(t=float(np.sign(mean)) * float("inf"), p=0.0,
                           df=df, degenerate=True)
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * float(stdtr(df, -abs(t)))
    return TTestResult(t=float(t), p=p, df=df, degenerate=False)


def format_metrics_report(rep: MetricsReport, class_names=("normal", "malignant")) -> str:
    """Deterministic key = value rendering (the metrics.txt schema)."""
    lines = [
        f"n = {rep.n}",
        f"accuracy = {rep.accuracy:.12g}",
    ]
    if rep.loss is not None:
        lines.append(f"loss = {rep.loss:.12g}")
    cm = " ".join(str(int(v)) for v in rep.confusion.reshape(-1))
    lines.append(f"confusion = {cm}")
    for c, name in enumerate(class_names):
        lines.append(f"precision.{name} = {rep.precision[c]:.12g}")
        lines.append(f"recall.{name} = {rep.recall[c]:.12g}")
        lines.append(f"f1.{name} = {rep.f1[c]:.12g}")
    lines.append(f"precision.macro = {rep.macro_precision:.12g}")
    lines.append(f"recall.macro = {rep.macro_recall:.12g}")
    lines.append(f"f1.macro = {rep.macro_f1:.12g}")
    if rep.auc is not None:
        lines.append(f"auc = {rep.auc:.12g}")
    if rep.degenerate_classes:
        names = ",".join(class_names[c] for c in rep.degenerate_classes)
        lines.append(f"degenerate_classes = {names}")
    return "\n".join(lines) + "\n"
