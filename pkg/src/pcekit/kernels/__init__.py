"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once, at import time.  Set ``PCEKIT_NUMBA=0`` in the
environment to force the numpy path (useful for debugging, profiling and
platforms without numba).  Both paths are kept numerically equivalent and
are cross-checked in the test suite.
"""
import importlib
import os

import numpy as np

from . import _numpy

ENV_FLAG = "PCEKIT_NUMBA"


def _numba_requested():
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in {"0", "false", "off", "no"}


_numba = None
if _numba_requested():
    try:
        _numba = importlib.import_module("._numba", __name__)
    except ImportError:  # numba missing or broken: stay on numpy
        _numba = None

BACKEND = "numba" if _numba is not None else "numpy"
_impl = _numba if _numba is not None else _numpy


def backend_module(name):
    """Return the kernel module for ``name`` ("numpy" or "numba")."""
    if name == "numpy":
        return _numpy
    if name == "numba":
        return _numba if _numba is not None else importlib.import_module("._numba", __name__)
    raise ValueError(f"unknown kernel backend {name!r}")


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def softmax_rows(z):
    """Row-wise softmax over the last axis of an array of any rank."""
    shape = z.shape
    return _impl.softmax_rows(_f64(z).reshape(-1, shape[-1])).reshape(shape)


def softmax_rows_backward(p, g):
    shape = p.shape
    k = shape[-1]
    return _impl.softmax_rows_backward(_f64(p).reshape(-1, k), _f64(g).reshape(-1, k)).reshape(shape)


def layer_norm(x, gamma, beta, eps):
    """Normalize over the last axis; returns (y, xhat, rstd) with rstd flat."""
    shape = x.shape
    y, xhat, rstd = _impl.layer_norm(_f64(x).reshape(-1, shape[-1]), _f64(gamma), _f64(beta), float(eps))
    return y.reshape(shape), xhat.reshape(shape), rstd


def layer_norm_backward(g, xhat, rstd, gamma):
    shape = g.shape
    k = shape[-1]
    dx, dgamma, dbeta = _impl.layer_norm_backward(
        _f64(g).reshape(-1, k), _f64(xhat).reshape(-1, k), _f64(rstd), _f64(gamma)
    )
    return dx.reshape(shape), dgamma, dbeta


def lstm_pointwise(gates, c_prev):
    return _impl.lstm_pointwise(_f64(gates), _f64(c_prev))


def lstm_pointwise_backward(dh, dc, cache, c_prev):
    return _impl.lstm_pointwise_backward(_f64(dh), _f64(dc), _f64(cache), _f64(c_prev))


def transition_fill(local_idx, k, counted=False):
    return _impl.transition_fill(_i64(local_idx), int(k), bool(counted))


def token_bias_gather(amplified, tok):
    return _impl.token_bias_gather(_f64(amplified), _i64(tok))


def gaze_walk(u, n_vis, n_txt, partner, p_off, p_cross, p_match):
    return _impl.gaze_walk(
        _f64(u), int(n_vis), int(n_txt), _i64(partner), float(p_off), float(p_cross), float(p_match)
    )


def confusion_counts(gold, pred, k=3):
    return _impl.confusion_counts(_i64(gold), _i64(pred), int(k))
