"""Central finite-difference gradient checking.

Used by the test suite and the acceptance runner; lives in the package so both
share one definition of "gradients agree".
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad


def finite_difference(fn: Callable[[], Tensor], leaf: Tensor, step: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. every entry of ``leaf``.

    ``fn`` must re-read ``leaf.data`` on each call.
    """
    base = leaf.data.copy()
    out = np.zeros(base.shape, dtype=np.float64)
    flat = out.reshape(-1)
    # recording stays ON: fn may need the tape internally (e.g. gradient penalties)
    for i in range(base.size):
        pert = base.reshape(-1).copy()
        orig = float(pert[i])
        # evaluate at the float32 values actually used, and divide by their
        # exact float64 difference, so step quantization cancels out
        hi = np.float32(orig + step)
        lo = np.float32(orig - step)
        pert[i] = hi
        leaf.data = pert.reshape(base.shape)
        f_plus = float(fn().data.reshape(-1)[0])
        pert[i] = lo
        leaf.data = pert.reshape(base.shape)
        f_minus = float(fn().data.reshape(-1)[0])
        flat[i] = (f_plus - f_minus) / (float(hi) - float(lo))
    leaf.data = base
    return out


def _fd_single(fn: Callable[[], Tensor], leaf: Tensor, flat_index: int,
               step: float) -> float:
    """Central finite difference for one entry of one leaf."""
    base = leaf.data.copy()
    pert = base.reshape(-1).copy()
    orig = float(pert[flat_index])
    hi, lo = np.float32(orig + step), np.float32(orig - step)
    pert[flat_index] = hi
    leaf.data = pert.reshape(base.shape)
    f_plus = float(fn().data.reshape(-1)[0])
    pert[flat_index] = lo
    leaf.data = pert.reshape(base.shape)
    f_minus = float(fn().data.reshape(-1)[0])
    leaf.data = base
    return (f_plus - f_minus) / (float(hi) - float(lo))


def gradcheck(fn: Callable[[], Tensor], leaves: Sequence[Tensor],
              step: float = 1e-3, rtol: float = 1e-2, atol: float = 1e-4) -> float:
    """Compare analytic gradients of scalar ``fn()`` against finite differences.

    Passes when |analytic - fd| <= atol + rtol * max(|analytic|, |fd|)
    elementwise for every leaf. An entry that fails is re-probed at step/4:
    when central differences straddle a kink (leaky ReLU), the wide-step
    estimate is an artifact and the narrow probe is authoritative; a genuinely
    wrong gradient fails both. Returns the worst excess (<= 0 means pass);
    raises AssertionError otherwise.
    """

    def excess_of(a: np.ndarray, fd: np.ndarray) -> np.ndarray:
        return np.abs(a - fd) - (atol + rtol * np.maximum(np.abs(a), np.abs(fd)))

    out = fn()
    analytic = grad(out, list(leaves))
    worst = -np.inf
    for leaf, g in zip(leaves, analytic):
        fd = finite_difference(fn, leaf, step=step)
        a = g.data.astype(np.float64)
        excess = excess_of(a, fd)
        for flat in np.flatnonzero(excess.reshape(-1) > 0):
            a_e = float(a.reshape(-1)[flat])
            fine_excess = np.inf
            fd_fine = np.nan
            for shrink in (4.0, 16.0):
                fd_fine = _fd_single(fn, leaf, int(flat), step / shrink)
                fine_excess = float(excess_of(np.array(a_e), np.array(fd_fine)))
                if fine_excess <= 0:
                    break
            if fine_excess > 0:
                idx = np.unravel_index(int(flat), a.shape)
                raise AssertionError(
                    f"gradient mismatch at {idx}: analytic={a_e:.6g} "
                    f"fd={fd.reshape(-1)[flat]:.6g} fd(fine)={fd_fine:.6g} "
                    f"(excess {fine_excess:.3g})")
            excess.reshape(-1)[flat] = fine_excess
        worst = max(worst, float(excess.max()))
    return worst
