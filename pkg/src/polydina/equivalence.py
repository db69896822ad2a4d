"""Parameter maps between the GPDINA and sequential models.

When every category of an item requires the same attributes, both models
describe the same family of distributions.  The sequential pass
probabilities are ratios of tail sums of the GPDINA category probabilities,
and conversely each GPDINA category probability is "reach ``l``, then stop".

The maps preserve the ``[0, 1]`` ranges and the per-item mass constraint but
not the category-wise ordering ``minus < plus``: for instance sequential
``beta_plus = (0.9, 0.9)``, ``beta_minus = (0.5, 0.1)`` gives
``theta_plus[0] = 0.09 < theta_minus[0] = 0.45``.  Validation on both sides
therefore checks ranges only.
"""

from __future__ import annotations

import numpy as np

from .core import ParameterError, QMatrix, QMatrixError
from .gpdina import GpdinaParams
from .seqdina import SeqParams


def _seq_branch_to_theta(beta: np.ndarray) -> np.ndarray:
    reach = np.cumprod(beta)
    stop = 1.0 - np.append(beta[1:], 0.0)
    return reach * stop


def _theta_branch_to_seq(theta: np.ndarray, item: int, branch: str) -> np.ndarray:
    # tail[l] = sum_{h >= l} theta_h, with theta_0 the complement so tail[0] = 1.
    tail = np.append(np.cumsum(theta[::-1])[::-1], 0.0)
    denominators = np.concatenate([[1.0], tail[:-2]])
    if np.any(denominators <= 0):
        l = int(np.flatnonzero(denominators <= 0)[0]) + 1
        raise ParameterError(
            f"item {item + 1}, category {l} ({branch}): no probability mass at or above category {l - 1}, "
            "so the pass probability is undefined"
        )
    return tail[:-1] / denominators


def seq_to_gpdina(params: SeqParams, q: QMatrix) -> GpdinaParams:
    """Map sequential pass probabilities to GPDINA category probabilities.

    ``theta[l] = (1 - beta[l+1]) * prod_{h <= l} beta[h]`` with
    ``beta[H+1] = 0``.  Requires an unrestricted Q-matrix and no zero
    guessing probability below an item's top category (which would make
    the higher pass probabilities undefined for some profiles).
    """
    if not q.is_unrestricted():
        raise QMatrixError("the two models only coincide when all categories of an item share one q-vector")
    params.validate(q, ordered=False)
    for j, minus in enumerate(params.beta_minus):
        zeros = np.flatnonzero(minus[:-1] == 0)
        if zeros.size:
            raise ParameterError(
                f"item {j + 1}: zero guessing probability at category {int(zeros[0]) + 1} blocks higher categories"
            )
    plus = tuple(_seq_branch_to_theta(b) for b in params.beta_plus)
    minus = tuple(_seq_branch_to_theta(b) for b in params.beta_minus)
    return GpdinaParams(plus, minus)


def gpdina_to_seq(params: GpdinaParams) -> SeqParams:
    """Map GPDINA category probabilities to sequential pass probabilities.

    ``beta[l] = sum_{h >= l} theta[h] / sum_{h >= l-1} theta[h]`` where the
    denominator includes category 0 when ``l = 1``.
    """
    params.validate(ordered=False)
    plus = tuple(_theta_branch_to_seq(t, j, "plus") for j, t in enumerate(params.theta_plus))
    minus = tuple(_theta_branch_to_seq(t, j, "minus") for j, t in enumerate(params.theta_minus))
    return SeqParams(plus, minus)
