"""Independent reference computations used by the tests.

Nothing here calls the package's own backward passes or metric code.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ifc_grl.nn import MaxPoolSet, Module, Parameter, ReLU

H = 1e-5
# denominators below this are treated as this value, so a gradient that is
# zero up to rounding is compared in absolute terms
REL_FLOOR = 1e-4


def rel_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    """Max-norm relative error ||a - n|| / max(||a||, ||n||, floor)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``x`` (modified in place, then restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def check_layer(layer: Module, x: np.ndarray, rng: np.random.Generator) -> Dict[str, float]:
    """Relative errors of d<R, layer(x)>/dx and d/dparam for a random projection R."""
    out = layer.forward(x)
    r = rng.standard_normal(out.shape)

    def loss() -> float:
        return float((layer.forward(x) * r).sum())

    layer.zero_grad()
    layer.forward(x)
    gx = layer.backward(r)
    errors = {"input": rel_error(gx, numeric_grad(loss, x))}
    for name, p in layer.named_parameters():
        errors[name] = rel_error(p.grad, numeric_grad(loss, p.value))
    return errors


def softmax_ce_reference(logits: np.ndarray, labels: Sequence[int]) -> float:
    """Row-by-row cross-entropy in plain Python floats (log-sum-exp with max shift)."""
    total = 0.0
    for row, y in zip(np.asarray(logits, dtype=np.float64).tolist(), labels):
        m = max(row)
        lse = m + np.log(sum(np.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)


# ---------------------------------------------------------------------------
# End-to-end directional check
# ---------------------------------------------------------------------------

def _activation_pattern(model: Module) -> List[bytes]:
    pattern = []
    for m in model.modules():
        if isinstance(m, ReLU):
            pattern.append(np.packbits(m._mask).tobytes())
        elif isinstance(m, MaxPoolSet):
            pattern.append(m._idx.tobytes())
    return pattern


def directional_check(model: Module, loss_fn: Callable[[], float], rng: np.random.Generator,
                      groups: Optional[Sequence[Sequence[Parameter]]] = None,
                      h: float = H, floor: float = REL_FLOOR,
                      max_redraws: int = 50) -> Tuple[float, int, int]:
    """Compare analytic and central-difference directional derivatives.

    The caller has already run forward and backward, so ``.grad`` holds the
    analytic gradient of ``loss_fn``. Each group of parameters (default:
    every tensor on its own) is moved along one random unit direction. A
    probe whose +-h evaluations switch a ReLU mask or a max-pool winner
    crosses a kink and is redrawn; after ``max_redraws`` attempts the group
    is counted as skipped. Returns (worst relative error, redraws, skipped).
    """
    if groups is None:
        groups = [[p] for p in model.parameters()]
    grads = {id(p): p.grad.copy() for group in groups for p in group}
    loss_fn()
    base = _activation_pattern(model)
    worst = 0.0
    redraws = skipped = 0
    for group in groups:
        for _ in range(max_redraws):
            dirs = [rng.standard_normal(p.shape) for p in group]
            norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
            dirs = [d / norm for d in dirs]
            olds = [p.value.copy() for p in group]
            for p, d, old in zip(group, dirs, olds):
                p.value[...] = old + h * d
            fp = loss_fn()
            pat_p = _activation_pattern(model)
            for p, d, old in zip(group, dirs, olds):
                p.value[...] = old - h * d
            fm = loss_fn()
            pat_m = _activation_pattern(model)
            for p, old in zip(group, olds):
                p.value[...] = old
            if pat_p == base and pat_m == base:
                numeric = (fp - fm) / (2 * h)
                analytic = sum(float((grads[id(p)] * d).sum()) for p, d in zip(group, dirs))
                worst = max(worst, rel_error(analytic, numeric, floor))
                break
            redraws += 1
        else:
            skipped += 1
    return worst, redraws, skipped


# ---------------------------------------------------------------------------
# Metric oracles
# ---------------------------------------------------------------------------

def brute_force_metrics(pred: Sequence[int], true: Sequence[int]) -> Dict[str, float]:
    """Per-sample loops; no confusion matrix involved."""
    n = len(true)
    classes = sorted(set(true) | set(pred))
    acc = sum(p == t for p, t in zip(pred, true)) / n
    recalls, wp, wr, wf = [], 0.0, 0.0, 0.0
    for c in classes:
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        support = sum(1 for t in true if t == c)
        predicted = sum(1 for p in pred if p == c)
        rec = tp / support if support else 0.0
        prec = tp / predicted if predicted else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        if support:
            recalls.append(rec)
        w = support / n
        wp += w * prec
        wr += w * rec
        wf += w * f1
    return {"accuracy": acc, "balanced_accuracy": sum(recalls) / len(recalls),
            "precision": wp, "recall": wr, "f1": wf}


def brute_force_confusion_rate(pred: Sequence[int], true: Sequence[int], a: int, b: int) -> Fraction:
    crossed = sum(1 for p, t in zip(pred, true) if (t, p) in ((a, b), (b, a)))
    n = sum(1 for t in true if t in (a, b))
    return Fraction(crossed, n)
