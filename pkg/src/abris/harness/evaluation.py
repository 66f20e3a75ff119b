"""Batch model evaluation with bounded concurrency and call counting."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from abris.errors import InputError, ModelEvaluationError


def batch_evaluate(model, thetas, limit=1):
    """Evaluate ``model`` on every row of ``thetas`` with at most ``limit`` in flight.

    Args:
        model (callable): Maps a single parameter vector to a float.
        thetas (np.ndarray): (n, d) inputs.
        limit (int): Maximum concurrent evaluations.

    Returns:
        np.ndarray of n values in input order.

    Raises:
        ModelEvaluationError: One or more rows raised; ``rows`` lists them and
            ``partial`` holds the completed values (NaN for failed rows).
    """
    if int(limit) < 1:
        raise InputError("parallelism limit must be >= 1")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    out = np.full(thetas.shape[0], np.nan)
    failed = []

    def one(k):
        try:
            return k, float(model(thetas[k])), None
        except Exception as err:  # noqa: BLE001 - surfaced with the row index below
            return k, np.nan, err

    if limit == 1:
        results = map(one, range(thetas.shape[0]))
    else:
        pool = ThreadPoolExecutor(max_workers=int(limit))
        with pool:
            results = list(pool.map(one, range(thetas.shape[0])))
    for k, value, err in results:
        out[k] = value
        if err is not None:
            failed.append((k, err))
    if failed:
        rows = [k for k, _ in failed]
        err = ModelEvaluationError(f"model failed on rows {rows}: {failed[0][1]!r}", rows=rows)
        err.partial = out
        raise err
    return out


class BatchModel:
    """Turn a single-point model into a batch callable.

    Attributes:
        func (callable): Single-point model.
        limit (int): Parallelism limit.
    """

    def __init__(self, func, limit=1):
        self.func = func
        self.limit = int(limit)

    def __call__(self, thetas):
        return batch_evaluate(self.func, thetas, self.limit)


class CountingModel:
    """Batch-model wrapper that counts evaluated rows."""

    def __init__(self, model):
        self.model = model
        self.calls = 0

    def __call__(self, thetas):
        thetas = np.atleast_2d(thetas)
        self.calls += thetas.shape[0]
        return self.model(thetas)
