"""
Central finite-difference check of analytic gradients.
"""
import logging
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from sceneintent.constants import GRAD_CHECK_FLOOR, GRAD_CHECK_STEP

from .layers import Params

logger = logging.getLogger(__name__)

# forward(params, inputs) -> (output, backward); backward(d_output) -> parameter gradients
Forward = Callable[[Params, Any], Tuple[Any, Callable[[Any], Params]]]
# loss(output) -> (value, d_output)
Loss = Callable[[Any], Tuple[float, Any]]


def _loss_at(forward: Forward, params: Params, inputs: Any, loss: Loss) -> float:
    output, _ = forward(params, inputs)
    value, _ = loss(output)
    return float(value)


def grad_check(
    forward: Forward,
    params: Params,
    inputs: Any,
    loss: Loss,
    step: float = GRAD_CHECK_STEP,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Max over checked entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

    With ``max_entries`` set, at most that many entries per parameter are checked,
    chosen with ``rng``.
    """
    output, backward = forward(params, inputs)
    _, d_output = loss(output)
    analytic: Dict[str, np.ndarray] = backward(d_output)

    worst = 0.0
    worst_name = ''
    for name in sorted(params):
        base = np.asarray(params[name], dtype=np.float64)
        grad = np.asarray(analytic.get(name, np.zeros_like(base)), dtype=np.float64).reshape(base.shape)
        flat_indices = np.arange(base.size)
        if max_entries is not None and base.size > max_entries:
            chooser = rng if rng is not None else np.random.default_rng(0)
            flat_indices = np.sort(chooser.choice(base.size, size=max_entries, replace=False))
        for flat in flat_indices:
            index = np.unravel_index(flat, base.shape)
            shifted = base.copy()
            shifted[index] = base[index] + step
            plus = _loss_at(forward, {**params, name: shifted}, inputs, loss)
            shifted[index] = base[index] - step
            minus = _loss_at(forward, {**params, name: shifted}, inputs, loss)
            numeric = (plus - minus) / (2.0 * step)
            exact = float(grad[index])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), GRAD_CHECK_FLOOR)
            if error > worst:
                worst, worst_name = error, f'{name}{list(index)}'
    logger.debug(f"Gradient check: max relative error {worst:.3e} at {worst_name or '-'}")
    return worst
