"""Symmetric swapped-magnitude reconstruction loss, its gradients, and training.

Gradients are derived by hand.  With ``s = re / r`` and ``c = im / r`` the
reconstruction of ``a`` given the magnitudes of ``b`` is
``w_re.T @ (r_b * s_a) + w_im.T @ (r_b * c_a)``, so the backward pass only
needs the Jacobian of ``(r, s, c)`` with respect to ``(re, im)``.  Where a
magnitude is exactly zero the local gradient is taken as zero.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from invariant_cae.basis import ComplexBasis
from invariant_cae.data_io import input_dropout
from invariant_cae.errors import NumericError, ParameterError, ShapeError, ValidationError

log = logging.getLogger(__name__)

NORM_MODES = ("none", "penalty", "reset")


@dataclass
class TrainConfig:
    n_basis: int = 256
    p_norm: int = 1
    learning_rate: float = 1e-3
    batch_size: int = 1000
    epochs: int = 500
    transforms_per_epoch: int = 100_000
    dropout_p: float = 0.5
    norm_mode: str = "none"
    lambda_mean: float = 1e-2
    lambda_dev: float = 1e-2
    target_norm: float = 0.4
    optimizer: str = "adam"
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.p_norm not in (1, 2):
            raise ParameterError(f"p_norm must be 1 or 2, got {self.p_norm}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError("dropout_p must lie in [0, 1)")
        if self.norm_mode not in NORM_MODES:
            raise ParameterError(f"norm_mode must be one of {NORM_MODES}")
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError("optimizer must be 'adam' or 'sgd'")
        if self.lambda_mean < 0 or self.lambda_dev < 0:
            raise ParameterError("norm penalty weights must be >= 0")
        if self.target_norm <= 0:
            raise ParameterError("target_norm must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GradientSet:
    d_w_re: np.ndarray
    d_w_im: np.ndarray

    def __add__(self, other: GradientSet) -> GradientSet:
        return GradientSet(self.d_w_re + other.d_w_re, self.d_w_im + other.d_w_im)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.d_w_re)) and np.all(np.isfinite(self.d_w_im)))


def _elementwise_loss(residual, p):
    return np.abs(residual) if p == 1 else residual**2


def loss(x, x_hat, tx, tx_hat, p: int = 2) -> float:
    """Mean reconstruction error of both pair members, summed."""
    arrays = [np.asarray(v, dtype=np.float64) for v in (x, x_hat, tx, tx_hat)]
    if len({a.shape for a in arrays}) != 1:
        raise ShapeError(f"loss inputs have shapes {[a.shape for a in arrays]}")
    if p not in (1, 2):
        raise ParameterError(f"p must be 1 or 2, got {p}")
    x, x_hat, tx, tx_hat = arrays
    return float(np.mean(_elementwise_loss(x - x_hat, p)) + np.mean(_elementwise_loss(tx - tx_hat, p)))


def _polar_parts(re, im):
    r = np.hypot(re, im)
    nz = r > 0
    safe = np.where(nz, r, 1.0)
    s = np.where(nz, re / safe, 0.0)
    c = np.where(nz, im / safe, 1.0)
    return r, s, c, nz, safe


def forward(basis: ComplexBasis, a, b):
    """Reconstructions ``(a_hat, b_hat)`` of a batch of pairs with swapped magnitudes."""
    ra, sa, ca, _, _ = _polar_parts(a @ basis.w_re.T, a @ basis.w_im.T)
    rb, sb, cb, _, _ = _polar_parts(b @ basis.w_re.T, b @ basis.w_im.T)
    a_hat = (rb * sa) @ basis.w_re + (rb * ca) @ basis.w_im
    b_hat = (ra * sb) @ basis.w_re + (ra * cb) @ basis.w_im
    return a_hat, b_hat


def batch_loss(basis: ComplexBasis, a, b, p: int, a_target=None, b_target=None) -> float:
    a_target = a if a_target is None else a_target
    b_target = b if b_target is None else b_target
    a_hat, b_hat = forward(basis, a, b)
    per_sample = np.mean(_elementwise_loss(a_target - a_hat, p), axis=1) + np.mean(
        _elementwise_loss(b_target - b_hat, p), axis=1
    )
    return float(np.mean(per_sample))


def backward(basis: ComplexBasis, a, b, p: int, a_target=None, b_target=None):
    """Mean batch loss and its gradient with respect to ``w_re`` and ``w_im``.

    ``a`` and ``b`` are the projected inputs (possibly after dropout); the
    reconstructions are compared against ``a_target``/``b_target``, which
    default to the inputs themselves.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    a_target = a if a_target is None else np.atleast_2d(np.asarray(a_target, dtype=np.float64))
    b_target = b if b_target is None else np.atleast_2d(np.asarray(b_target, dtype=np.float64))
    if a.shape[0] == 0:
        raise ValidationError("empty batch")
    for arr in (a, b, a_target, b_target):
        if arr.shape != a.shape or arr.shape[1] != basis.n_input:
            raise ShapeError(f"batch shape {arr.shape} incompatible with basis N={basis.n_input}")
    if p not in (1, 2):
        raise ParameterError(f"p must be 1 or 2, got {p}")

    # overflow is detected and reported below; silence numpy's duplicate warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _backward(basis, a, b, p, a_target, b_target)


def _backward(basis, a, b, p, a_target, b_target):
    w_re, w_im = basis.w_re, basis.w_im
    n_batch, n = a.shape
    ra, sa, ca, nza, safe_a = _polar_parts(a @ w_re.T, a @ w_im.T)
    rb, sb, cb, nzb, safe_b = _polar_parts(b @ w_re.T, b @ w_im.T)

    ua, va = rb * sa, rb * ca
    ub, vb = ra * sb, ra * cb
    res_a = a_target - (ua @ w_re + va @ w_im)
    res_b = b_target - (ub @ w_re + vb @ w_im)

    per_sample = np.mean(_elementwise_loss(res_a, p), axis=1) + np.mean(_elementwise_loss(res_b, p), axis=1)
    bad = ~np.isfinite(per_sample)
    if np.any(bad):
        raise NumericError(f"non-finite loss at batch index {int(np.flatnonzero(bad)[0])}")
    value = float(np.mean(per_sample))

    scale = 1.0 / (n_batch * n)
    if p == 2:
        ea, eb = -2.0 * scale * res_a, -2.0 * scale * res_b
    else:
        ea, eb = -scale * np.sign(res_a), -scale * np.sign(res_b)

    d_w_re = ua.T @ ea + ub.T @ eb
    d_w_im = va.T @ ea + vb.T @ eb

    du_a, dv_a = ea @ w_re.T, ea @ w_im.T
    du_b, dv_b = eb @ w_re.T, eb @ w_im.T

    # a_hat depends on (s_a, c_a) and r_b; b_hat on (s_b, c_b) and r_a
    dr_b = du_a * sa + dv_a * ca
    dr_a = du_b * sb + dv_b * cb
    ds_a, dc_a = du_a * rb, dv_a * rb
    ds_b, dc_b = du_b * ra, dv_b * ra

    for x_in, s, c, nz, safe, ds, dc, dr in (
        (a, sa, ca, nza, safe_a, ds_a, dc_a, dr_a),
        (b, sb, cb, nzb, safe_b, ds_b, dc_b, dr_b),
    ):
        t = (ds * c - dc * s) / safe
        d_re = np.where(nz, c * t + dr * s, 0.0)
        d_im = np.where(nz, -s * t + dr * c, 0.0)
        d_w_re += d_re.T @ x_in
        d_w_im += d_im.T @ x_in

    grads = GradientSet(d_w_re, d_w_im)
    if not grads.is_finite():
        rows = np.flatnonzero(~np.all(np.isfinite(d_re), axis=1) | ~np.all(np.isfinite(d_im), axis=1))
        index = int(rows[0]) if rows.size else -1
        raise NumericError(f"non-finite gradient (batch index {index})")
    return grads, value


def norm_penalty(basis: ComplexBasis, lambda_mean: float, lambda_dev: float):
    """Penalty on the mean row norm and the spread of row norms, with gradients."""
    if lambda_mean < 0 or lambda_dev < 0:
        raise ParameterError("penalty weights must be >= 0")
    norms = basis.row_norms()
    m = norms.size
    mean_norm = norms.mean()
    dev = norms - mean_norm
    value = lambda_mean * mean_norm + lambda_dev * np.mean(dev**2)
    # the mean-norm term of the deviation gradient cancels since sum(dev) = 0
    d_norm = lambda_mean / m + lambda_dev * 2.0 * dev / m
    safe = np.where(norms > 0, norms, 1.0)
    coeff = np.where(norms > 0, d_norm / safe, 0.0)[:, None]
    return float(value), GradientSet(coeff * basis.w_re, coeff * basis.w_im)


def renormalize_basis(basis: ComplexBasis, target_norm: float) -> ComplexBasis:
    """Rescale every complex row in place to the given norm."""
    if target_norm <= 0:
        raise ParameterError("target_norm must be > 0")
    norms = basis.row_norms()
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise NumericError(f"basis row {int(zero[0])} has zero norm")
    factor = (target_norm / norms)[:, None]
    basis.w_re *= factor
    basis.w_im *= factor
    return basis


class Optimizer:
    """Adam (beta1=0.9, beta2=0.999, eps=1e-8) or plain SGD over both weight matrices."""

    def __init__(self, kind: str = "adam", beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in ("adam", "sgd"):
            raise ParameterError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, basis: ComplexBasis, grads: GradientSet, learning_rate: float) -> ComplexBasis:
        if grads.d_w_re.shape != basis.w_re.shape or grads.d_w_im.shape != basis.w_im.shape:
            raise ShapeError("gradient shapes do not match the basis")
        self.t += 1
        if self.kind == "sgd":
            basis.w_re -= learning_rate * grads.d_w_re
            basis.w_im -= learning_rate * grads.d_w_im
            return basis
        g = (grads.d_w_re, grads.d_w_im)
        if self.m is None:
            self.m = [np.zeros_like(x) for x in g]
            self.v = [np.zeros_like(x) for x in g]
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for k, (gk, w) in enumerate(zip(g, (basis.w_re, basis.w_im))):
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gk
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gk * gk
            m_hat = self.m[k] / bias1
            v_hat = self.v[k] / bias2
            w -= learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return basis


def optimizer_step(basis, grads, state: Optimizer, learning_rate: float) -> ComplexBasis:
    return state.step(basis, grads, learning_rate)


@dataclass
class TrainResult:
    basis: ComplexBasis
    loss_history: list = field(default_factory=list)


def train(
    config: TrainConfig,
    sampler: Callable,
    n_input: int,
    basis: ComplexBasis | None = None,
    progress: Callable | None = None,
) -> TrainResult:
    """Train a complex basis on transform pairs.

    ``sampler(batch_size, rng)`` returns an object with ``a`` and ``b`` arrays
    of shape ``(batch_size, n_input)``.  Dropout is applied to both members
    before projection; reconstruction targets stay clean.
    """
    rng = np.random.default_rng(config.rng_seed)
    if basis is None:
        basis = ComplexBasis.random(config.n_basis, n_input, rng)
    if config.norm_mode == "reset":
        renormalize_basis(basis, config.target_norm)
    opt = Optimizer(config.optimizer)
    history = []
    steps = max(1, config.transforms_per_epoch // config.batch_size)
    for epoch in range(config.epochs):
        total = 0.0
        for step in range(steps):
            batch = sampler(config.batch_size, rng)
            a, b = np.asarray(batch.a, dtype=np.float64), np.asarray(batch.b, dtype=np.float64)
            if a.shape[1] != n_input:
                raise ShapeError(f"sampler produced N={a.shape[1]}, expected {n_input}")
            a_in = input_dropout(a, config.dropout_p, rng)
            b_in = input_dropout(b, config.dropout_p, rng)
            try:
                grads, value = backward(basis, a_in, b_in, config.p_norm, a, b)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} step {step}: {exc}") from exc
            if config.norm_mode == "penalty":
                pen, pgrads = norm_penalty(basis, config.lambda_mean, config.lambda_dev)
                grads = grads + pgrads
                value += pen
            if not np.isfinite(value):
                raise NumericError(f"divergence at epoch {epoch} step {step}")
            opt.step(basis, grads, config.learning_rate)
            if config.norm_mode == "reset":
                renormalize_basis(basis, config.target_norm)
            total += value
        history.append(total / steps)
        if progress is not None:
            progress(epoch, history[-1])
        log.debug("epoch %d loss %.6g", epoch, history[-1])
    return TrainResult(basis, history)


def _numeric_gradient(fn, w, h):
    g = np.zeros_like(w)
    it = np.nditer(w, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = w[idx]
        w[idx] = old + h
        up = fn()
        w[idx] = old - h
        down = fn()
        w[idx] = old
        g[idx] = (up - down) / (2.0 * h)
    return g


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Max element-wise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradient_check(basis: ComplexBasis, a, b, p: int, h: float = 1e-5, grad_fn=None) -> dict:
    """Compare analytic gradients against central finite differences.

    Returns the max relative error for each weight block.  ``grad_fn`` can
    replace :func:`backward` to test the checker itself.
    """
    grad_fn = backward if grad_fn is None else grad_fn
    grads, _ = grad_fn(basis, a, b, p)
    fn = lambda: batch_loss(basis, a, b, p)  # noqa: E731
    num_re = _numeric_gradient(fn, basis.w_re, h)
    num_im = _numeric_gradient(fn, basis.w_im, h)
    return {
        "w_re": relative_error(grads.d_w_re, num_re),
        "w_im": relative_error(grads.d_w_im, num_im),
    }


def min_abs_residual(basis: ComplexBasis, a, b) -> float:
    a_hat, b_hat = forward(basis, a, b)
    return float(min(np.min(np.abs(a - a_hat)), np.min(np.abs(b - b_hat))))
