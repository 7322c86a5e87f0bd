"""Training losses with analytic gradients, and a finite-difference checker.

Spectral losses take uncompressed complex spectra (arrays or linear
:class:`~tbnn_aec.dsp.Spectrogram`) and compress internally.  Gradients of
real losses with respect to a complex argument ``z = a + jb`` are returned as
the complex array ``dL/da + j dL/db``; gradients for real arguments are real.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dsp import Spectrogram
from .errors import ContractError
from .validation import check_positive

VAD_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    w_mask: float = 0.5
    w_vad: float = 0.1
    alpha: float = 10.0
    plcpa_p: float = 0.5
    echo_weight_beta: float = 1.0

    def __post_init__(self):
        for name in ("w_mask", "w_vad", "alpha", "echo_weight_beta"):
            check_positive(getattr(self, name), name, strict=False)
        check_positive(self.plcpa_p, "plcpa_p")


@dataclass
class LossResult:
    """``value`` and ``grad``; unpacks as ``value, grad``."""

    value: float
    grad: np.ndarray
    flags: tuple = field(default_factory=tuple)

    def __iter__(self):
        return iter((self.value, self.grad))

    def __getitem__(self, i):
        return (self.value, self.grad)[i]


class EmptyActiveSetWarning(UserWarning):
    pass


def _spectrum(x, name):
    if isinstance(x, Spectrogram):
        if x.compressed:
            raise ContractError(f"{name}: expected an uncompressed spectrogram")
        x = x.data
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ContractError(f"{name}: non-finite values")
    return x.astype(np.complex128)


def _same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ContractError(f"shape mismatch: {sorted(shapes)}")


def _mag_p(z, p):
    r = np.abs(z)
    return r, r ** p


def _dmag_p(z, r, p):
    """Gradient of |z|^p as ``d/da + j d/db``; zero at the origin."""
    out = np.zeros_like(z)
    nz = r > 0
    out[nz] = p * r[nz] ** (p - 2) * z[nz]
    return out


def loss_plcpa(est, ref, p=0.5):
    """Compressed magnitude MSE plus compressed phase-aware complex MSE."""
    s_hat, s = _spectrum(est, "est"), _spectrum(ref, "ref")
    _same_shape(s_hat, s)
    n = s.size
    r_hat, a_hat = _mag_p(s_hat, p)
    r, a = _mag_p(s, p)
    c = np.zeros_like(s)
    c[r > 0] = s[r > 0] / r[r > 0] * a[r > 0]
    c_hat = np.zeros_like(s_hat)
    nz = r_hat > 0
    c_hat[nz] = s_hat[nz] / r_hat[nz] * a_hat[nz]
    dm = a - a_hat
    dc = c - c_hat
    value = float(np.sum(dm ** 2 + np.abs(dc) ** 2) / n)

    # complex term: dC/dz = (p+1)/2 r^(p-1), dC/dconj(z) = (p-1)/2 z^2 r^(p-3)
    g = -2.0 * dm * _dmag_p(s_hat, r_hat, p)
    gc = np.zeros_like(s_hat)
    rn, zn = r_hat[nz], s_hat[nz]
    gc[nz] = -2.0 * (np.conj(dc[nz]) * 0.5 * (p - 1) * zn ** 2 * rn ** (p - 3)
                     + dc[nz] * 0.5 * (p + 1) * rn ** (p - 1))
    return LossResult(value, (g + gc) / n)


def echo_weights(echo, p=0.5, beta=1.0):
    """Per-bin weight ``1 + beta |Z|^p / mean(|Z|^p)``; all ones for silent echo."""
    z = _spectrum(echo, "echo")
    zp = np.abs(z) ** p
    m = zp.mean() if zp.size else 0.0
    if m <= 0:
        return np.ones(z.shape)
    return 1.0 + beta * zp / m


def loss_echo_weighted(est, ref, echo, p=0.5, beta=1.0):
    s_hat, s = _spectrum(est, "est"), _spectrum(ref, "ref")
    z = _spectrum(echo, "echo")
    _same_shape(s_hat, s, z)
    check_positive(beta, "beta", strict=False)
    w = echo_weights(z, p, beta)
    r_hat, a_hat = _mag_p(s_hat, p)
    dm = np.abs(s) ** p - a_hat
    n = s.size
    value = float(np.sum(w * dm ** 2) / n)
    return LossResult(value, -2.0 * w * dm * _dmag_p(s_hat, r_hat, p) / n)


def ideal_mask(target, mixture, clip=2.0):
    """Complex ratio ``target / mixture`` with magnitude clipped at ``clip``; 0 where mixture is 0."""
    s, i = _spectrum(target, "target"), _spectrum(mixture, "mixture")
    _same_shape(s, i)
    m = np.zeros_like(s)
    nz = np.abs(i) > 0
    m[nz] = s[nz] / i[nz]
    mag = np.abs(m)
    big = mag > clip
    m[big] *= clip / mag[big]
    return m


def activity_mask(mixture, floor_db=-60.0):
    """Bins whose energy is within ``floor_db`` of the utterance peak bin."""
    e = np.abs(_spectrum(mixture, "mixture")) ** 2
    peak = e.max() if e.size else 0.0
    if peak <= 0:
        return np.zeros(e.shape, dtype=bool)
    return e > peak * 10.0 ** (floor_db / 10.0)


def loss_mask(est_mask, ideal, active):
    """MSE over real and imaginary parts of the active bins."""
    m_hat = np.asarray(est_mask, dtype=np.complex128)
    m = np.asarray(ideal, dtype=np.complex128)
    act = np.asarray(active, dtype=bool)
    _same_shape(m_hat, m, act)
    n = int(act.sum())
    if n == 0:
        warnings.warn("mask loss: no active bins", EmptyActiveSetWarning, stacklevel=2)
        return LossResult(0.0, np.zeros_like(m_hat), ("empty_active_set",))
    diff = np.where(act, m_hat - m, 0)
    value = float(np.sum(np.abs(diff) ** 2) / (2 * n))
    return LossResult(value, diff / n)


def loss_vad(pred, label, eps=VAD_EPS):
    """Mean binary cross-entropy; predictions are clamped to ``[eps, 1 - eps]``."""
    q = np.asarray(pred, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    _same_shape(q, y)
    if q.size == 0:
        raise ContractError("loss_vad: empty input")
    if np.any((y != 0) & (y != 1)):
        raise ContractError("loss_vad: labels must be 0 or 1")
    qc = np.clip(q, eps, 1 - eps)
    value = float(-np.mean(y * np.log(qc) + (1 - y) * np.log1p(-qc)))
    grad = (qc - y) / (qc * (1 - qc)) / q.size
    grad[(q < eps) | (q > 1 - eps)] = 0.0
    return LossResult(value, grad)


def loss_wb(components, weights=LossWeights()):
    c = components
    return (c.get("echo_weighted", 0.0) + c.get("plcpa", 0.0)
            + weights.w_mask * c.get("mask", 0.0) + weights.w_vad * c.get("vad", 0.0))


def loss_hb(components, weights=LossWeights()):
    c = components
    return c.get("echo_weighted", 0.0) + c.get("plcpa", 0.0) + weights.w_mask * c.get("mask", 0.0)


def loss_final(l_hb, l_wb, weights=LossWeights()):
    return weights.alpha * l_hb + l_wb


def _coords(point, n_coords, seed):
    size = np.asarray(point).size
    is_complex = np.iscomplexobj(point)
    total = size * (2 if is_complex else 1)
    if n_coords is None:
        n_coords = total if total <= 1000 else 200
    if n_coords >= total:
        return np.arange(total), is_complex
    return np.sort(np.random.default_rng(seed).choice(total, n_coords, replace=False)), is_complex


def grad_check(loss_op, point, step=1e-4, n_coords=None, seed=0):
    """Max relative error between the analytic gradient and central differences.

    ``loss_op(point)`` must return ``(value, grad)``.  Complex points are
    perturbed along their real and imaginary parts separately.  Per-coordinate
    errors are relative to ``max(|analytic|, |numeric|)`` floored at 1e-6 of the
    largest analytic component, so coordinates with vanishing gradient do not
    report pure roundoff.
    """
    x0 = np.array(point, dtype=np.complex128 if np.iscomplexobj(point) else np.float64)
    _, g = loss_op(x0)
    g = np.asarray(g).ravel()
    idx, is_complex = _coords(x0, n_coords, seed)
    size = x0.size
    num, ana = np.empty(len(idx)), np.empty(len(idx))
    for k, c in enumerate(idx):
        j, imag = (c % size, c >= size) if is_complex else (c, False)
        delta = (1j if imag else 1.0) * step
        xp, xm = x0.copy().ravel(), x0.copy().ravel()
        xp[j] += delta
        xm[j] -= delta
        fp = loss_op(xp.reshape(x0.shape))[0]
        fm = loss_op(xm.reshape(x0.shape))[0]
        num[k] = (fp - fm) / (2 * step)
        ana[k] = g[j].imag if imag else g[j].real
    floor = 1e-6 * max(np.max(np.abs(g.real)), np.max(np.abs(g.imag)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
    return float(np.max(np.abs(ana - num) / denom))


def grad_sweep(loss_op, point, steps=(1e-3, 1e-4, 1e-5, 1e-6), n_coords=None, seed=0):
    return {float(h): grad_check(loss_op, point, h, n_coords, seed) for h in steps}
