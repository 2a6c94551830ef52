"""Central finite-difference verification of reverse-mode gradients."""

import numpy as np

from .errors import ValueRangeError
from .tensor import Tensor


class GradCheckReport:
    """Per-element relative errors of analytic vs numeric gradients."""

    def __init__(self, name, max_rel_err, worst_index, tol):
        self.name = name
        self.max_rel_err = max_rel_err
        self.worst_index = worst_index
        self.tol = tol

    @property
    def passed(self):
        return self.max_rel_err < self.tol

    def __repr__(self):
        return "GradCheckReport(%s: max_rel_err=%.3e, tol=%.1e, %s)" % (
            self.name, self.max_rel_err, self.tol, "PASS" if self.passed else "FAIL")


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def finite_diff_gradcheck(fn, x, h=1e-5, tol=1e-4, name="x"):
    """Check d fn / dx elementwise against central differences.

    `fn` maps a float64 Tensor to a scalar Tensor and must be deterministic;
    a mismatch between two baseline evaluations raises. The analytic side
    comes from one backward pass; each element then gets two perturbed
    forward evaluations.
    """
    if x.dtype != np.float64:
        x = Tensor(x.data.astype(np.float64), requires_grad=True)
    base1 = float(fn(x).data)
    base2 = float(fn(x).data)
    if base1 != base2:
        raise ValueRangeError("gradcheck function is non-deterministic: %r != %r"
                              % (base1, base2))

    x.zero_grad()
    out = fn(x)
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    aflat = analytic.reshape(-1)
    max_err = 0.0
    worst = 0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(x).data)
        flat[i] = orig - h
        fm = float(fn(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        err = _rel_err(aflat[i], numeric)
        if err > max_err:
            max_err = err
            worst = i
    return GradCheckReport(name, max_err, worst, tol)


def gradcheck_params(loss_fn, params, h=1e-5, tol=1e-4):
    """Gradcheck a scalar loss against a dict of named parameter tensors.

    `loss_fn()` rebuilds the forward graph from the current parameter
    values. Returns a list of reports, one per parameter tensor.
    """
    base1 = float(loss_fn().data)
    base2 = float(loss_fn().data)
    if base1 != base2:
        raise ValueRangeError("gradcheck loss is non-deterministic: %r != %r"
                              % (base1, base2))

    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    reports = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        max_err = 0.0
        worst = 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = _rel_err(aflat[i], numeric)
            if err > max_err:
                max_err = err
                worst = i
        reports.append(GradCheckReport(name, max_err, worst, tol))
    return reports
