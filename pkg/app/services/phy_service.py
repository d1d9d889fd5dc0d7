"""
PHY Service: compress-forward cooperation rates, virtual-MIMO streams,
MU-MIMO rates under regularized zero-forcing, cut-set bound and the
cooperative / non-cooperative SNR metrics.

All rates are in bits/s/Hz (log base 2). H matrices hold one user per row,
so y = H x and h Q h^* is the received power of row h.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from app.core.exceptions import DomainError
from app.models import CooperativePair, Distortion, EffectiveStream, FadingGrid, RateReport, StreamId

logger = logging.getLogger(__name__)

WATER_FILL_TOL = 1e-9
TRACE_TOL = 1e-9


def _as_distortion(D) -> Distortion:
    if isinstance(D, Distortion):
        return D
    if D is None or np.isinf(D):
        return Distortion.unavailable()
    if D < 0:
        raise DomainError("distortion must be non-negative")
    return Distortion(float(D))


def fading_grid(points: int = 16) -> FadingGrid:
    """Midpoint-quantile discretization of |zeta|^2 ~ Exp(1), equal weights."""
    if points < 1:
        raise DomainError("fading grid needs at least one point")
    u = (np.arange(points) + 0.5) / points
    return FadingGrid(points=-np.log1p(-u), weights=np.full(points, 1.0 / points))


def conditional_variance(sigma: np.ndarray) -> float:
    """Var(y2 | y1) = S22 - |S21|^2 / S11 for a 2x2 covariance; S22 when S11 = 0."""
    sigma = np.asarray(sigma)
    s11 = float(np.real(sigma[0, 0]))
    s22 = float(np.real(sigma[1, 1]))
    if s11 <= 0:
        return max(s22, 0.0)
    return max(s22 - float(np.abs(sigma[1, 0]) ** 2) / s11, 0.0)


def output_covariance(H: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Sigma = I + H Q H^*."""
    return np.eye(H.shape[0]) + H @ Q @ H.conj().T


def conditional_variance_from_covariance(H: np.ndarray, Q: np.ndarray) -> float:
    """sigma^2_{2|1} = det(I + HQH^*) / (1 + h1 Q h1^*)."""
    return conditional_variance(output_covariance(H, Q))


def wz_distortion(cond_var: float, g: complex, self_pair: bool = False) -> Distortion:
    if cond_var < 0:
        raise DomainError("conditional variance must be non-negative")
    if self_pair:
        return Distortion.zero()
    power = abs(g) ** 2
    if power == 0:
        return Distortion.unavailable()
    return Distortion(cond_var / power)


def _check_covariance(Q: np.ndarray) -> None:
    if not np.allclose(Q, Q.conj().T, atol=1e-9):
        raise DomainError("input covariance must be Hermitian")
    eig = np.linalg.eigvalsh(Q)
    if eig.min() < -1e-9:
        raise DomainError("input covariance must be positive semidefinite")
    if np.real(np.trace(Q)) > 1 + TRACE_TOL:
        raise DomainError("input covariance trace exceeds the power budget")


def _whiten(H: np.ndarray, D: Distortion) -> np.ndarray:
    """K^{-1/2} H with K = diag(1, 1 + D)."""
    scale = np.array([1.0, np.sqrt(D.inverse_noise())])
    return H * scale[:, None]


def mimo_rate(H: np.ndarray, D, Q: np.ndarray) -> float:
    """log2 det(I + K^-1 H Q H^*)."""
    D = _as_distortion(D)
    Q = np.asarray(Q, dtype=complex)
    _check_covariance(Q)
    return _mimo_rate(np.asarray(H, dtype=complex), D, Q)


def _mimo_rate(H: np.ndarray, D: Distortion, Q: np.ndarray) -> float:
    A = _whiten(H, D)
    _, logdet = np.linalg.slogdet(np.eye(A.shape[0]) + A @ Q @ A.conj().T)
    return max(float(logdet) / np.log(2.0), 0.0)


def water_filling(gains: np.ndarray, power: float = 1.0, tol: float = WATER_FILL_TOL) -> np.ndarray:
    """Powers p_k = max(mu - 1/g_k, 0) with sum p = power; bisection on mu."""
    gains = np.asarray(gains, dtype=float)
    active = gains > 0
    p = np.zeros_like(gains)
    if power <= 0 or not np.any(active):
        return p
    inv = 1.0 / gains[active]
    lo, hi = 0.0, power + inv.max()
    while hi - lo > tol:
        mu = 0.5 * (lo + hi)
        if np.sum(np.maximum(mu - inv, 0.0)) > power:
            hi = mu
        else:
            lo = mu
    p_active = np.maximum(lo - inv, 0.0)
    total = p_active.sum()
    if total > 0:
        p_active *= power / total
    p[active] = p_active
    return p


def optimize_input_covariance(H: np.ndarray, D=0.0) -> tuple[np.ndarray, float]:
    """Water-filling over the singular modes of K^{-1/2} H, trace(Q) <= 1."""
    D = _as_distortion(D)
    H = np.asarray(H, dtype=complex)
    A = _whiten(H, D)
    _, s, Vh = np.linalg.svd(A, full_matrices=True)
    gains = s**2
    powers = water_filling(gains)
    V = Vh.conj().T[:, : gains.size]
    Q = (V * powers) @ V.conj().T
    rate = float(np.sum(np.log2(1.0 + gains * powers)))
    return Q, rate


def stream_rates(H: np.ndarray, D, P1: float, P2: float) -> tuple[float, float]:
    """Per-stream rates log2(1 + s_d^2 P_d / (1 + |u_2d|^2 D)), SVD taken on H."""
    if P1 < 0 or P2 < 0 or P1 + P2 > 1 + TRACE_TOL:
        raise DomainError("stream powers must be non-negative with P1 + P2 <= 1")
    D = _as_distortion(D)
    U, s, _ = np.linalg.svd(np.asarray(H, dtype=complex))
    s = np.pad(s, (0, max(0, 2 - s.size)))
    out = []
    for d, power in enumerate((P1, P2)):
        u2 = abs(U[1, d]) ** 2
        if D.available:
            noise = 1.0 + u2 * D.value
            out.append(float(np.log2(1.0 + s[d] ** 2 * power / noise)))
        elif u2 == 0:
            out.append(float(np.log2(1.0 + s[d] ** 2 * power)))
        else:
            out.append(0.0)
    return out[0], out[1]


def top_singular_closed_form(h_i: np.ndarray, h_j: np.ndarray):
    """
    s1^2 of [h_i; h_j] from the 2x2 Gram eigenvalues:
    1/2 (a + b + sqrt(a^2 + b^2 + 2ab cos 2T)), cos^2 T = |<h_i, h_j>|^2 / (ab).

    Works along the last axis, so stacks of vectors are accepted.
    """
    h_i = np.asarray(h_i)
    h_j = np.asarray(h_j)
    a = np.sum(np.abs(h_i) ** 2, axis=-1)
    b = np.sum(np.abs(h_j) ** 2, axis=-1)
    c = np.abs(np.sum(h_i * h_j.conj(), axis=-1)) ** 2
    # a^2 + b^2 + 2ab cos 2T with cos 2T = 2c/(ab) - 1
    disc = np.maximum((a - b) ** 2 + 4.0 * c, 0.0)
    return 0.5 * (a + b + np.sqrt(disc))


def cutset_bound(H: np.ndarray, g: complex) -> float:
    H = np.asarray(H, dtype=complex)
    _, mimo_cut = optimize_input_covariance(H, 0.0)
    broadcast_cut = float(np.log2(1.0 + np.sum(np.abs(H[0]) ** 2)) + np.log2(1.0 + abs(g) ** 2))
    return min(mimo_cut, broadcast_cut)


def cooperative_rate(H: np.ndarray, g: complex, Q: np.ndarray) -> tuple[float, Distortion]:
    """R_MIMO(Q) with the distortion induced by Q itself."""
    D = wz_distortion(conditional_variance_from_covariance(H, Q), g)
    return _mimo_rate(H, D, Q), D


def _row_space_covariance(V: np.ndarray, x: np.ndarray) -> np.ndarray:
    t, m, angle = x
    t = float(np.clip(t, 0.0, 1.0))
    off = float(np.clip(m, 0.0, 1.0)) * np.sqrt(t * (1.0 - t)) * np.exp(1j * angle)
    A = np.array([[t, off], [np.conj(off), 1.0 - t]])
    return V @ A @ V.conj().T


def _row_space_params(V: np.ndarray, Q: np.ndarray) -> np.ndarray:
    A = V.conj().T @ Q @ V
    tr = float(np.real(np.trace(A)))
    if tr <= 0:
        return np.array([0.5, 0.0, 0.0])
    a11 = float(np.real(A[0, 0])) / tr
    a22 = 1.0 - a11
    denom = np.sqrt(max(a11 * a22, 1e-300))
    m = min(abs(A[0, 1]) / tr / denom, 1.0) if a11 * a22 > 0 else 0.0
    return np.array([a11, m, float(np.angle(A[0, 1]))])


def cooperative_covariance(H: np.ndarray, g: complex) -> tuple[np.ndarray, float, Distortion]:
    """
    Maximize R_MIMO(Q) when the Wyner-Ziv distortion depends on Q.

    Candidates: water-filling covariance, matched beam on h1 and a short
    fixed-point refinement; the best is polished over the row space of H.
    """
    H = np.asarray(H, dtype=complex)
    M = H.shape[1]
    if M == 1:
        Q = np.ones((1, 1), dtype=complex)
        rate, D = cooperative_rate(H, g, Q)
        return Q, rate, D

    candidates = []
    Q_wf, _ = optimize_input_covariance(H, 0.0)
    candidates.append(Q_wf)
    h1 = H[0]
    norm1 = float(np.real(h1 @ h1.conj()))
    if norm1 > 0:
        candidates.append(np.outer(h1.conj(), h1) / norm1)
    Q = Q_wf
    for _ in range(5):
        D = wz_distortion(conditional_variance_from_covariance(H, Q), g)
        Q, _ = optimize_input_covariance(H, D)
        candidates.append(Q)

    scored = [(cooperative_rate(H, g, Q)[0], k) for k, Q in enumerate(candidates)]
    best_rate, best_idx = max(scored)
    best_Q = candidates[best_idx]

    _, _, Vh = np.linalg.svd(H, full_matrices=True)
    V = Vh.conj().T[:, :2]

    def objective(x):
        return -cooperative_rate(H, g, _row_space_covariance(V, x))[0]

    bounds = [(0.0, 1.0), (0.0, 1.0), (-np.pi, np.pi)]
    for Q0 in (best_Q, Q_wf):
        result = minimize(objective, _row_space_params(V, Q0), method="L-BFGS-B", bounds=bounds)
        if -result.fun > best_rate:
            best_rate = -float(result.fun)
            best_Q = _row_space_covariance(V, result.x)

    best_Q = 0.5 * (best_Q + best_Q.conj().T)
    rate, D = cooperative_rate(H, g, best_Q)
    return best_Q, rate, D


def gap_check(H: np.ndarray, g: complex) -> RateReport:
    H = np.asarray(H, dtype=complex)
    Q, rate, D = cooperative_covariance(H, g)
    cut = cutset_bound(H, g)
    _, _, Vh = np.linalg.svd(H, full_matrices=True)
    powers = np.real(np.einsum("km,mn,kn->k", Vh[:2], Q, Vh.conj()[:2]))
    powers = np.clip(powers, 0.0, None)
    if powers.sum() > 1:
        powers = powers / powers.sum()
    r1, r2 = stream_rates(H, D, float(powers[0]), float(powers[1]) if powers.size > 1 else 0.0)
    report = RateReport(r_mimo=rate, stream_rates=(r1, r2), cutset=cut, gap=cut - rate)
    if not report.within_bound:
        logger.error("capacity gap %.6f outside [0, 2] (cutset %.6f, rate %.6f)", report.gap, cut, rate)
    return report


def random_relay_instance(
    M: int, rng: np.random.Generator, low_db: float = -20.0, high_db: float = 20.0
) -> CooperativePair:
    """Relay pair with log-uniform gains; used by gap sweeps."""
    gains_db = rng.uniform(low_db, high_db, size=3)
    gains = 10.0 ** (gains_db / 10.0)
    raw = (rng.standard_normal((2, M)) + 1j * rng.standard_normal((2, M))) / np.sqrt(2.0)
    H = raw * np.sqrt(gains[:2] / M)[:, None]
    phase = np.exp(2j * np.pi * rng.uniform())
    g = np.sqrt(gains[2]) * phase
    return CooperativePair(H[0], H[1], complex(g))


def gap_sweep(trials: int, seed: int, antennas: Sequence[int] = (2, 4, 8)) -> list[tuple[int, int, RateReport]]:
    """`trials` random instances per antenna count; (trial, M, report) rows."""
    rows = []
    children = np.random.SeedSequence(seed).spawn(len(antennas))
    for M, child in zip(antennas, children):
        rng = np.random.default_rng(child)
        for trial in range(trials):
            pair = random_relay_instance(M, rng)
            rows.append((trial, M, gap_check(pair.H, pair.d2d_gain)))
    worst = max((r.gap for _, _, r in rows), default=0.0)
    logger.info("gap sweep: %d instances, max gap %.6f", len(rows), worst)
    return rows


# --- virtual users and MU-MIMO ------------------------------------------------


def pair_matrix(H: np.ndarray, i: int, j: int) -> np.ndarray:
    return np.vstack([H[i], H[j]])


def virtual_channels(
    schedule: Sequence[StreamId],
    H: np.ndarray,
    distortions: Mapping[tuple[int, int], Distortion],
) -> list[EffectiveStream]:
    """Effective single-antenna users h~ = u_d^* H_ij with noise 1 + |u_d(2)|^2 D_ij."""
    out = []
    for sid in schedule:
        i, j, d = sid.dest, sid.relay, sid.stream
        if sid.is_self:
            h = np.asarray(H[i], dtype=complex)
            out.append(
                EffectiveStream(
                    stream_id=sid,
                    eff_vector=h,
                    noise_var=1.0,
                    singular_value=float(np.linalg.norm(h)),
                    left_column=np.array([1.0, 0.0], dtype=complex),
                )
            )
            continue
        D = _as_distortion(distortions.get((i, j), Distortion.unavailable()))
        Hij = pair_matrix(H, i, j)
        U, s, _ = np.linalg.svd(Hij)
        s = np.pad(s, (0, max(0, 2 - s.size)))
        u = U[:, d - 1]
        if not D.available:
            # dead side channel: stream 1 falls back to the direct link, stream 2 carries nothing
            if d == 1:
                h = np.asarray(H[i], dtype=complex)
                out.append(EffectiveStream(sid, h, 1.0, float(np.linalg.norm(h)), np.array([1.0, 0.0], dtype=complex)))
            else:
                out.append(EffectiveStream(sid, u.conj() @ Hij, None, float(s[1]), u))
            continue
        out.append(
            EffectiveStream(
                stream_id=sid,
                eff_vector=u.conj() @ Hij,
                noise_var=1.0 + abs(u[1]) ** 2 * D.value,
                singular_value=float(s[d - 1]),
                left_column=u,
            )
        )
    return out


def rzf_precoder(eff: np.ndarray, regularization: Optional[float] = None) -> np.ndarray:
    """
    W = H~^* (H~ H~^* / s + reg I)^-1 with s = mean ||h~||^2, unit-norm columns.

    `eff` is (..., K, M); returns (..., M, K). Default reg = K / s, which
    is the MMSE choice for the un-normalised Gram.
    """
    eff = np.asarray(eff, dtype=complex)
    K = eff.shape[-2]
    gram = eff @ eff.conj().swapaxes(-1, -2)
    norms = np.real(np.einsum("...km,...km->...k", eff, eff.conj()))
    scale = norms.mean(axis=-1)
    scale = np.where(scale > 0, scale, 1.0)
    reg = K / scale if regularization is None else np.full_like(scale, float(regularization))
    A = gram / scale[..., None, None] + reg[..., None, None] * np.eye(K)
    try:
        A_inv = np.linalg.inv(A)
        if not np.all(np.isfinite(A_inv)):
            raise np.linalg.LinAlgError("non-finite inverse")
    except np.linalg.LinAlgError:
        logger.warning("regularized Gram matrix is singular; using the pseudo-inverse")
        A_inv = np.linalg.pinv(A)
    W = eff.conj().swapaxes(-1, -2) @ A_inv
    col = np.linalg.norm(W, axis=-2, keepdims=True)
    return W / np.where(col > 0, col, 1.0)


def _signal_interference(eff: np.ndarray, W: np.ndarray, power) -> tuple[np.ndarray, np.ndarray]:
    X = eff @ W
    gains = np.abs(X) ** 2
    signal = np.diagonal(gains, axis1=-2, axis2=-1)
    interference = gains.sum(axis=-1) - signal
    p = np.asarray(power)[..., None]
    return p * signal, p * interference


def mu_mimo_rates(
    streams: Sequence[EffectiveStream],
    regularization: Optional[float] = None,
    snr_backoff_db: float = 0.0,
    noise_scale: float = 1.0,
) -> np.ndarray:
    """Per-stream rates log2(1 + SINR / backoff); unusable streams get 0 and no power."""
    if len(streams) > 0 and len(streams) > streams[0].eff_vector.size:
        raise DomainError("more streams than transmit antennas")
    rates = np.zeros(len(streams))
    usable = [k for k, x in enumerate(streams) if x.usable]
    if not usable:
        return rates
    eff = np.array([streams[k].eff_vector for k in usable])
    noise = np.array([streams[k].noise_var for k in usable]) * noise_scale
    W = rzf_precoder(eff, regularization)
    signal, interference = _signal_interference(eff, W, 1.0 / len(usable))
    backoff = 10.0 ** (snr_backoff_db / 10.0)
    sinr = signal / (noise + interference)
    rates[usable] = np.log2(1.0 + sinr / backoff)
    return rates


@dataclass(frozen=True)
class PairDecomposition:
    """Left singular vectors of every stacked pair matrix [h_i; h_j] in a frame."""

    H: np.ndarray
    U: dict[tuple[int, int], np.ndarray]

    def stream_arrays(self, sid: StreamId) -> tuple[np.ndarray, np.ndarray, float]:
        """(h~ row, pair matrix with zero second row for self streams, |u_d(2)|^2)."""
        if sid.is_self:
            h = self.H[sid.dest]
            return h, np.vstack([h, np.zeros_like(h)]), 0.0
        Hij = pair_matrix(self.H, sid.dest, sid.relay)
        u = self.U[sid.pair][:, sid.stream - 1]
        return u.conj() @ Hij, Hij, float(abs(u[1]) ** 2)


def decompose_pairs(H: np.ndarray, pairs: Sequence[tuple[int, int]]) -> PairDecomposition:
    H = np.asarray(H, dtype=complex)
    pairs = [p for p in dict.fromkeys(pairs) if p[0] != p[1]]
    U = {}
    if pairs:
        stacks = np.stack([pair_matrix(H, i, j) for i, j in pairs])
        Us, _, _ = np.linalg.svd(stacks)
        U = {p: Us[k] for k, p in enumerate(pairs)}
    return PairDecomposition(H=H, U=U)


def batch_schedule_rates(
    eff: np.ndarray,
    pair_H: np.ndarray,
    u2_sq: np.ndarray,
    d2d_power: np.ndarray,
    weights: np.ndarray,
    regularization: Optional[float] = None,
    snr_backoff_db: float = 0.0,
    noise_scale: float = 1.0,
    precoder_eff: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Expected per-stream rates for C schedule sets of equal size K.

    eff (C, K, M), pair_H (C, K, 2, M), u2_sq (C, K), d2d_power (C, K, Z)
    holding |g|^2 at each fading point, weights (Z,). The precoder is built
    once per set, from `precoder_eff` when given (channel estimate) and
    from `eff` otherwise; fading enters only through the relay distortion.
    """
    C, K, _ = eff.shape
    W = rzf_precoder(eff if precoder_eff is None else precoder_eff, regularization)
    power = np.full(C, 1.0 / K)
    signal, interference = _signal_interference(eff, W, power)

    # relay-side conditional variance under Q = W diag(P) W^*
    HW = pair_H @ W[:, None, :, :]
    sigma = np.eye(2) + power[:, None, None, None] * (HW @ HW.conj().swapaxes(-1, -2))
    s11 = np.real(sigma[..., 0, 0])
    s22 = np.real(sigma[..., 1, 1])
    cond = np.maximum(s22 - np.abs(sigma[..., 1, 0]) ** 2 / s11, 0.0)

    safe_power = np.where(d2d_power > 0, d2d_power, np.inf)
    noise = 1.0 + (u2_sq * cond)[..., None] / safe_power
    noise = np.where((d2d_power > 0) | (u2_sq[..., None] == 0), noise, np.inf)
    backoff = 10.0 ** (snr_backoff_db / 10.0)
    sinr = signal[..., None] / (noise_scale * noise + interference[..., None])
    return np.log2(1.0 + sinr / backoff) @ weights


# --- SNR metrics --------------------------------------------------------------


@dataclass(frozen=True)
class SnrMetrics:
    coop: dict[int, float]
    expected_coop: dict[int, float]
    noncoop: float
    best_relay: Optional[int]


def coop_snr_terms(h_i: np.ndarray, h_j: np.ndarray):
    """
    (s1^2, |u1(2)|^2, sigma^2_{j|i}) for beamforming along the top right
    singular vector of [h_i; h_j]. Vectorised over leading axes.
    """
    a = np.sum(np.abs(h_i) ** 2, axis=-1)
    b = np.sum(np.abs(h_j) ** 2, axis=-1)
    x = np.sum(h_i * h_j.conj(), axis=-1)
    s1 = top_singular_closed_form(h_i, h_j)
    gap = s1 - a
    denom = np.abs(x) ** 2 + gap**2
    u2 = np.where(denom > 0, gap**2 / np.where(denom > 0, denom, 1.0), 0.0)
    u1 = 1.0 - u2
    cond = 1.0 + s1 * u2 / (1.0 + s1 * u1)
    return s1, u2, cond


def coop_snr(h_i: np.ndarray, h_j: np.ndarray, g_power):
    """s1^2 / (1 + |u1(2)|^2 sigma^2_{j|i} / |g|^2); zero D2D power gives 0."""
    s1, u2, cond = coop_snr_terms(h_i, h_j)
    g_power = np.asarray(g_power, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = s1 / (1.0 + u2 * cond / g_power)
    return np.where(g_power > 0, value, 0.0)


def coop_snr_lower_bound(h_j: np.ndarray, g):
    """1/2 min(||h_j||^2, |g|^2) - 1, a floor on the cooperative SNR through relay j.

    Vectorised over leading axes of ``h_j`` broadcast against ``g``.
    """
    value = 0.5 * np.minimum(np.sum(np.abs(h_j) ** 2, axis=-1), np.abs(g) ** 2) - 1.0
    return float(value) if np.ndim(value) == 0 else value


def snr_metrics(
    i: int,
    candidates: Sequence[int],
    H: np.ndarray,
    phi: np.ndarray,
    Z: np.ndarray,
    grid: Optional[FadingGrid] = None,
) -> SnrMetrics:
    """Cooperative SNR per candidate relay, non-cooperative SNR, and j*(i).

    The relay is chosen on the expectation over D2D fading given (phi_ij, h_j);
    pairs with no D2D gain are never selected.
    """
    grid = grid or fading_grid()
    h_i = H[i]
    coop, expected = {}, {}
    for j in candidates:
        if j == i:
            continue
        g_power = phi[i, j] * abs(Z[i, j]) ** 2
        coop[j] = float(coop_snr(h_i, H[j], g_power))
        if phi[i, j] > 0:
            expected[j] = float(coop_snr(h_i, H[j], phi[i, j] * grid.points) @ grid.weights)
    best = max(expected, key=lambda j: (expected[j], -j)) if expected else None
    return SnrMetrics(coop=coop, expected_coop=expected, noncoop=float(np.sum(np.abs(h_i) ** 2)), best_relay=best)
