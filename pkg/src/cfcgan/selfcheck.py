"""Invariant battery behind the ``verify`` command.

Every check pairs a production code path with an independent oracle:
round trips against the analytic inverse, log-determinants against a
cofactor expansion, power-iteration estimates against LAPACK's SVD, and
wavelet synthesis against the original image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularMatrix
from .invertible import Generator, sn_sigma, spectral_normalize, top_singular_value
from .tensor import Tensor
from .training import cycle_loss_probe
from .wavelet import dwt2, idwt2, wavelet_residual


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def det_cofactor(m: np.ndarray) -> float:
    """Determinant by first-row cofactor expansion (independent of LAPACK)."""
    n = m.shape[0]
    if n == 1:
        return float(m[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += (-1.0) ** j * float(m[0, j]) * det_cofactor(minor)
    return total


def _check_round_trip(gen: Generator, rng: np.random.Generator) -> CheckResult:
    r = Tensor(rng.standard_normal((1, 1, 64, 64)))
    try:
        err = float(np.abs(gen.inverse(gen.forward(r)).data - r.data).max())
    except SingularMatrix as exc:
        return CheckResult("round_trip", False, str(exc))
    return CheckResult("round_trip", bool(err <= 1e-10), f"max |G^-1(G(r)) - r| = {err:.3e}")


def _check_cycle_probe(gen: Generator, rng: np.random.Generator) -> CheckResult:
    x = Tensor(rng.standard_normal((1, 1, 32, 32)))
    y = Tensor(rng.standard_normal((1, 1, 32, 32)))
    try:
        probe = cycle_loss_probe(x, y, gen)
    except SingularMatrix as exc:
        return CheckResult("cycle_loss_probe", False, str(exc))
    return CheckResult("cycle_loss_probe", bool(probe <= 1e-8), f"probe = {probe:.3e}")


def _check_logdet(gen: Generator) -> CheckResult:
    h = w = 8
    try:
        total = gen.logdet(h, w)
    except SingularMatrix as exc:
        return CheckResult("logdet_vs_cofactor", False, str(exc))
    oracle = 0.0
    for block in gen.blocks:
        det = det_cofactor(block.mix.w.data.astype(np.float64))
        if abs(det) <= 1e-300:
            return CheckResult("logdet_vs_cofactor", False,
                               f"cofactor det underflow: |det W| = {abs(det):.3e}")
        oracle += (h // 2) * (w // 2) * np.log(abs(det))
    err = abs(total - oracle)
    return CheckResult("logdet_vs_cofactor", bool(err <= 1e-10),
                       f"|logdet - cofactor oracle| = {err:.3e}")


def _check_spectral_norm(gen: Generator) -> CheckResult:
    # range clause after the 50-iteration warmup; the SVD cross-check runs
    # the estimator to convergence (narrow spectral gaps converge slowly)
    worst_range = 0.0
    worst_err = 0.0
    for block in gen.blocks:
        for net in block.nets:
            for w, state in net.sn_weights():
                for _ in range(50):
                    spectral_normalize(w, state, update=True)
                w_bar = spectral_normalize(w, state, update=False)
                top = top_singular_value(w_bar.data.reshape(w_bar.data.shape[0], -1))
                worst_range = max(worst_range, abs(top - 1.0))
                prev = sn_sigma(w, state)
                for _ in range(1000):
                    spectral_normalize(w, state, update=True)
                    cur = sn_sigma(w, state)
                    if abs(cur - prev) < 1e-13:
                        break
                    prev = cur
                mat = w.data.reshape(w.data.shape[0], -1)
                sigma_svd = float(np.linalg.svd(mat, compute_uv=False)[0])
                worst_err = max(worst_err, abs(sn_sigma(w, state) - sigma_svd))
    ok = bool(worst_err <= 1e-6 and worst_range <= 0.05)
    return CheckResult("spectral_norm", ok,
                       f"converged |sigma_hat - svd| = {worst_err:.3e}, "
                       f"warmup |sigma(W_bar) - 1| = {worst_range:.3e}")


def _check_wavelet(rng: np.random.Generator) -> CheckResult:
    img = rng.standard_normal((1, 1, 64, 64))
    rec = idwt2(dwt2(img, 3)).data
    rel = float(np.abs(rec - img).max() / np.abs(img).max())
    res, low = wavelet_residual(img, 2)
    ident = float(np.abs(res.data + low.data - img).max())
    ok = bool(rel <= 1e-10 and ident <= 1e-10)
    return CheckResult("wavelet_reconstruction",
                       ok, f"PR rel err = {rel:.3e}, residual identity = {ident:.3e}")


def run_battery(gen: Generator, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        _check_round_trip(gen, rng),
        _check_cycle_probe(gen, rng),
        _check_logdet(gen),
        _check_spectral_norm(gen),
        _check_wavelet(rng),
    ]
