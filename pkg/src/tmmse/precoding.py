"""Team-MMSE precoders for every stripe CSIT sharing pattern.

The distributed precoder of user k at TX l must be a function of the local
side information S_l only.  Each scheme splits into a statistical stage
(expectations over the fading distribution: the interference-response
matrices Pi and the coupling coefficients c) and a per-realization stage
(the local filters T_l and, for stripe sharing, the forward product of
update matrices).  All per-realization computations are batched over the
leading sample axis of an :class:`~tmmse.channel.Ensemble`, so exactness on
finite-support models falls out of the ensemble weights.

Matrix conventions: channels are (K, N*L) with users as rows; precoder
stacks are (S, N*L, K) with user columns; products of the stripe update
matrices are LEFT products, prod_{n=1}^{m} A_n = A_m ... A_1, empty product
the identity.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import herm, tx_block

RCOND_FLOOR = 1e-12
COEFF_RESIDUAL_TOL = 1e-10

SCHEMES = ("centralized", "bi", "uni", "no-share", "local-mmse")


class SingularSweepError(RuntimeError):
    """A stripe-sweep system (I - Pi P) was numerically singular."""

    def __init__(self, stripe, position, sample, rcond):
        self.stripe = stripe
        self.position = position
        self.sample = sample
        self.rcond = rcond
        super().__init__(
            f"singular sweep system at stripe={stripe} position={position} "
            f"sample={sample} (rcond={rcond:.3e})"
        )


class SingularCoefficientSystem(RuntimeError):
    """The statistical coefficient system could not be solved reliably."""

    def __init__(self, user, cond):
        self.user = user
        self.cond = cond
        super().__init__(
            f"coefficient system for user {user} is ill-conditioned (cond={cond:.3e}); "
            "statistics are likely broken"
        )


def _solve_sweep(a, b, stripe, position):
    """Batched solve of (I - Pi P) systems with a reciprocal-condition guard."""
    sv = np.linalg.svd(a, compute_uv=False)
    rcond = sv[..., -1] / sv[..., 0]
    if np.any(rcond < RCOND_FLOOR):
        bad = int(np.argmin(rcond))
        raise SingularSweepError(stripe, position, bad, float(np.min(rcond)))
    return np.linalg.solve(a, b)


def local_filter(h_hat, psi, w, total_power):
    """Regularized local MMSE filter T = (Hhat^H W Hhat + Psi + I/P)^-1 Hhat^H W^1/2.

    h_hat is (..., K, N); psi is the (N, N) error covariance; returns
    (..., N, K).  The system matrix is Hermitian positive definite for any
    finite total power, so a plain linear solve is used (no inversion).
    """
    h_hat = np.asarray(h_hat, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    w = np.asarray(w, dtype=float)
    if total_power <= 0:
        raise ValueError("total power must be positive")
    if not np.allclose(psi, herm(psi), atol=1e-10):
        raise ValueError("Psi must be Hermitian")
    if np.linalg.eigvalsh(psi).min() < -1e-10:
        raise ValueError("Psi must be positive semidefinite")
    n = h_hat.shape[-1]
    wh = w[:, None] * h_hat  # W Hhat
    a = herm(h_hat) @ wh + psi + np.eye(n) / total_power
    b = herm(h_hat) * np.sqrt(w)  # Hhat^H W^1/2, broadcast over trailing K axis
    return np.linalg.solve(a, b)


def _filters_and_responses(ensemble, l, psi_l, w, total_power):
    """Per-sample T_l (S, N, K) and P_l = W^1/2 Hhat_l T_l (S, K, K)."""
    hl = ensemble.h_hat_block(l)
    t = local_filter(hl, psi_l, w, total_power)
    p = np.sqrt(w)[None, :, None] * (hl @ t)
    return t, p


# --------------------------------------------------------------------------
# statistical stage
# --------------------------------------------------------------------------

@dataclass
class StripeStatistics:
    """Backward-recursion statistics of one stripe.

    pi[m] is the interference-response matrix seen upstream of position m
    (0-based: pi[0] is the master-unit matrix entering the coefficient
    system; pi[M] = 0 is the chain end).  mean_pv[m] and mean_vbar[m] hold
    E[P V] and E[Vbar] of position m+1 for diagnostics.
    """

    stripe: int
    pi: np.ndarray  # (M+1, K, K)
    mean_pv: np.ndarray  # (M, K, K)
    mean_vbar: np.ndarray  # (M, K, K)
    n_samples: int


def estimate_stripe_statistics(ensemble, stripe_txs, psi, w, total_power, stripe=0):
    """Backward sweep m = M..1 accumulating Pi_{m-1} = E[P_m V_m] + Pi_m E[Vbar_m].

    Expectations are weighted sums over the ensemble: exact on finite
    support, Monte Carlo averages otherwise.  The pool must be independent
    of the evaluation pool to keep rate estimates unbiased.
    """
    n_pos = len(stripe_txs)
    K = ensemble.num_users
    eye = np.eye(K)
    pi = np.zeros((n_pos + 1, K, K), dtype=complex)
    mean_pv = np.zeros((n_pos, K, K), dtype=complex)
    mean_vbar = np.zeros((n_pos, K, K), dtype=complex)
    wts = ensemble.weights
    for m in range(n_pos, 0, -1):
        l = stripe_txs[m - 1]
        _, p = _filters_and_responses(ensemble, l, psi[l], w, total_power)
        v = _solve_sweep(
            eye - pi[m] @ p,
            np.broadcast_to(eye - pi[m], p.shape),
            stripe,
            m - 1,
        )
        vbar = eye - p @ v
        mean_pv[m - 1] = np.einsum("s,sij->ij", wts, p @ v)
        mean_vbar[m - 1] = np.einsum("s,sij->ij", wts, vbar)
        pi[m - 1] = mean_pv[m - 1] + pi[m] @ mean_vbar[m - 1]
    return StripeStatistics(
        stripe=stripe,
        pi=pi,
        mean_pv=mean_pv,
        mean_vbar=mean_vbar,
        n_samples=ensemble.n_samples,
    )


def no_sharing_statistics(ensemble, psi, w, total_power):
    """Pi_l = E[W^1/2 Hhat_l T_l] for every TX -> (L, K, K)."""
    K = ensemble.num_users
    out = np.zeros((ensemble.num_txs, K, K), dtype=complex)
    for l in range(ensemble.num_txs):
        _, p = _filters_and_responses(ensemble, l, psi[l], w, total_power)
        out[l] = np.einsum("s,sij->ij", ensemble.weights, p)
    return out


def _solve_coefficient_columns(pi_by_unit, serving_units, num_units, K):
    """Coupling system c_u + sum_{j != u} Pi_j c_j = e_k per user.

    Returns (num_units, K, K) with column k of unit u holding c_{u,k};
    columns of non-serving units are zero.  The assembled block system is
    square and provably nonsingular for valid statistics; ill conditioning
    or a large residual therefore signals broken inputs and raises.
    """
    coeffs = np.zeros((num_units, K, K), dtype=complex)
    eye = np.eye(K)
    for k in range(K):
        units = list(serving_units[k])
        n = len(units)
        a = np.zeros((n * K, n * K), dtype=complex)
        for row in range(n):
            for col, j in enumerate(units):
                blk = eye if row == col else pi_by_unit[j]
                a[row * K : (row + 1) * K, col * K : (col + 1) * K] = blk
        rhs = np.tile(eye[:, k], n)
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or 1.0 / cond < RCOND_FLOOR:
            raise SingularCoefficientSystem(k, float(cond))
        x = np.linalg.solve(a, rhs)
        resid = np.linalg.norm(a @ x - rhs) / np.linalg.norm(rhs)
        if resid > COEFF_RESIDUAL_TOL:
            raise SingularCoefficientSystem(k, float(cond))
        for row, u in enumerate(units):
            coeffs[u][:, k] = x[row * K : (row + 1) * K]
    return coeffs


def solve_statistical_precoders_uni(association, stripe_stats):
    """Coefficients c_{q,k} coupling the serving stripes of each user."""
    pi0 = {st.stripe: st.pi[0] for st in stripe_stats}
    num_stripes = max(pi0) + 1
    K = association.num_users
    return _solve_coefficient_columns(
        pi0, association.serving_stripes, num_stripes, K
    )


def solve_statistical_precoders_bi(association, coupling):
    """Coefficients for the full-stripe-CSI scheme from E[Pbar_{q,0}] matrices."""
    return _solve_coefficient_columns(
        coupling, association.serving_stripes, len(coupling), association.num_users
    )


def solve_statistical_precoders_no_sharing(association, pi_by_tx):
    """Coefficients c_{l,k} coupling the serving TXs of each user."""
    K = association.num_users
    return _solve_coefficient_columns(
        pi_by_tx, association.serving_txs, len(pi_by_tx), K
    )


# --------------------------------------------------------------------------
# per-realization schemes
# --------------------------------------------------------------------------

def tmmse_unidirectional(ensemble, stripe_stats, coeffs, stripes, psi, w, total_power):
    """Forward-product precoders t_{q,m} = T_{q,m} V_{q,m} Vbar_{q,m-1}...Vbar_{q,1} c_q.

    V and Vbar are built from the local estimate of the current position
    and the statistical Pi matrices, so position m uses exactly the
    unidirectionally shared information (Hhat_{q,1}, ..., Hhat_{q,m}).
    """
    S, K = ensemble.n_samples, ensemble.num_users
    n = ensemble.n_antennas
    eye = np.eye(K)
    out = np.zeros((S, ensemble.num_txs * n, K), dtype=complex)
    for st in stripe_stats:
        txs = stripes[st.stripe]
        c_q = coeffs[st.stripe]
        if not np.any(c_q):
            continue
        prefix = np.broadcast_to(eye, (S, K, K)).astype(complex)
        for m, l in enumerate(txs, start=1):
            t, p = _filters_and_responses(ensemble, l, psi[l], w, total_power)
            v = _solve_sweep(
                eye - st.pi[m] @ p,
                np.broadcast_to(eye - st.pi[m], p.shape),
                st.stripe,
                m - 1,
            )
            out[:, l * n : (l + 1) * n, :] = t @ v @ prefix @ c_q
            if m < len(txs):
                prefix = (eye - p @ v) @ prefix
    return out


def _bidirectional_sweep(ensemble, txs, psi, w, total_power, stripe):
    """Backward per-realization sweep of one stripe.

    Returns the local filters, responses, update matrices V, and the
    realization-dependent chain response Pbar_{q,0} (S, K, K), which plays
    the role the statistical Pi plays in the unidirectional scheme.
    """
    S, K = ensemble.n_samples, ensemble.num_users
    eye = np.eye(K)
    filters, responses = [], []
    for l in txs:
        t, p = _filters_and_responses(ensemble, l, psi[l], w, total_power)
        filters.append(t)
        responses.append(p)
    v_list = [None] * len(txs)
    pbar = np.zeros((S, K, K), dtype=complex)
    for m in range(len(txs), 0, -1):
        p = responses[m - 1]
        v = _solve_sweep(eye - pbar @ p, eye - pbar, stripe, m - 1)
        v_list[m - 1] = v
        pv = p @ v
        pbar = pv + pbar @ (eye - pv)
    return filters, responses, v_list, pbar


def bidirectional_coupling(ensemble, stripe_txs, psi, w, total_power, stripe=0):
    """Statistical chain response E[Pbar_{q,0}] of the full-stripe-CSI sweep.

    This is the bidirectional counterpart of Pi_{q,0}: the cross-stripe
    coupling matrix entering the coefficient system.  It differs from the
    unidirectional Pi_{q,0} whenever the fading is non-degenerate, because
    the sweep uses realization-dependent update matrices.
    """
    _, _, _, pbar = _bidirectional_sweep(ensemble, stripe_txs, psi, w, total_power, stripe)
    return np.einsum("s,sij->ij", ensemble.weights, pbar)


def tmmse_bidirectional(ensemble, coeffs, stripes, psi, w, total_power):
    """Full-stripe-CSI precoders: the statistical Pi of the downstream chain is
    replaced by its per-realization value Pbar, computed in a backward sweep;
    the coupling coefficients c stay statistical (solved from E[Pbar_{q,0}])."""
    S, K = ensemble.n_samples, ensemble.num_users
    n = ensemble.n_antennas
    eye = np.eye(K)
    out = np.zeros((S, ensemble.num_txs * n, K), dtype=complex)
    for q, txs in enumerate(stripes):
        c_q = coeffs[q]
        if not np.any(c_q):
            continue
        filters, responses, v_list, _ = _bidirectional_sweep(
            ensemble, txs, psi, w, total_power, q
        )
        prefix = np.broadcast_to(eye, (S, K, K)).astype(complex)
        for m, l in enumerate(txs, start=1):
            out[:, l * n : (l + 1) * n, :] = filters[m - 1] @ v_list[m - 1] @ prefix @ c_q
            if m < len(txs):
                prefix = (eye - responses[m - 1] @ v_list[m - 1]) @ prefix
    return out


def tmmse_no_sharing(ensemble, coeffs, psi, w, total_power):
    """Purely local precoders t_{l} = T_l c_l with statistical coupling."""
    S, K = ensemble.n_samples, ensemble.num_users
    n = ensemble.n_antennas
    out = np.zeros((S, ensemble.num_txs * n, K), dtype=complex)
    for l in range(ensemble.num_txs):
        if not np.any(coeffs[l]):
            continue
        t, _ = _filters_and_responses(ensemble, l, psi[l], w, total_power)
        out[:, l * n : (l + 1) * n, :] = t @ coeffs[l]
    return out


def centralized_mmse(ensemble, psi, w, total_power, association=None, user_centric=False):
    """Full message and CSIT sharing reference: the conditional-MMSE solution on
    the stacked estimate with block-diagonal error covariance.

    By default the support spans all TXs (sum-power benchmark); with
    user_centric=True the entries outside each user's serving set are zeroed.
    """
    S, K = ensemble.n_samples, ensemble.num_users
    n = ensemble.n_antennas
    nl = ensemble.num_txs * n
    psi_full = np.zeros((nl, nl), dtype=complex)
    for l in range(ensemble.num_txs):
        psi_full[l * n : (l + 1) * n, l * n : (l + 1) * n] = psi[l]
    a = herm(ensemble.h_hat) * w[None, None, :] @ ensemble.h_hat
    a += psi_full + np.eye(nl) / total_power
    b = herm(ensemble.h_hat) * np.sqrt(w)[None, None, :]
    t = np.linalg.solve(a, b)
    if user_centric:
        if association is None:
            raise ValueError("user-centric mode needs an association map")
        keep = np.repeat(association.mask(), n, axis=0)  # (N*L, K)
        t = t * keep[None, :, :]
    return t


def local_mmse_coefficients(ensemble, association, psi, w, total_power):
    """Large-scale fading coefficients of the restricted per-TX scheme.

    The scheme constrains t_{l,k} = c_{l,k} T_l e_k with scalar c; the
    minimizing scalars solve the |L_k| x |L_k| normal equations of the
    quadratic objective, assembled from ensemble moments of the effective
    per-TX channels.  Singular normal equations fall back to c = 1 with a
    warning rather than failing the whole run.
    """
    S, K = ensemble.n_samples, ensemble.num_users
    n = ensemble.n_antennas
    L = ensemble.num_txs
    wts = ensemble.weights
    f_all = np.zeros((S, L, n, K), dtype=complex)
    for l in range(L):
        f_all[:, l], _ = _filters_and_responses(ensemble, l, psi[l], w, total_power)
    coeffs = np.zeros((L, K), dtype=complex)
    h_blocks = ensemble.h.reshape(S, K, L, n)
    for k in range(K):
        txs = list(association.serving_txs[k])
        f = f_all[:, txs][..., k]  # (S, n_serving, N)
        s_eff = np.einsum("siln,sln->sil", h_blocks[:, :, txs, :], f)  # (S, K, n_serving)
        gram = np.einsum("s,i,sia,sib->ab", wts, w, np.conj(s_eff), s_eff)
        reg = np.einsum("s,sln->l", wts, np.abs(f) ** 2) / total_power
        rhs = np.sqrt(w[k]) * np.einsum("s,sa->a", wts, np.conj(s_eff[:, k, :]))
        system = gram + np.diag(reg)
        cond = np.linalg.cond(system)
        if not np.isfinite(cond) or 1.0 / cond < RCOND_FLOOR:
            warnings.warn(
                f"singular local-MMSE normal equations for user {k}; using unit coefficients"
            )
            c = np.ones(len(txs), dtype=complex)
        else:
            c = np.linalg.solve(system, rhs)
        coeffs[txs, k] = c
    return coeffs


def local_mmse_baseline(ensemble, coefficients, psi, w, total_power):
    """Apply the restricted scheme t_{l,k} = c_{l,k} T_l e_k per realization."""
    S, K = ensemble.n_samples, ensemble.num_users
    n = ensemble.n_antennas
    out = np.zeros((S, ensemble.num_txs * n, K), dtype=complex)
    for l in range(ensemble.num_txs):
        if not np.any(coefficients[l]):
            continue
        t, _ = _filters_and_responses(ensemble, l, psi[l], w, total_power)
        out[:, l * n : (l + 1) * n, :] = t * coefficients[l][None, None, :]
    return out


# --------------------------------------------------------------------------
# sequential fronthaul protocol
# --------------------------------------------------------------------------

def stripe_forward_pass(
    h_hat,
    stripe_txs,
    stripe_stats,
    coeffs_q,
    served_users,
    messages,
    powers,
    psi,
    w,
    total_power,
):
    """One realization of the master-to-chain-end protocol of a single stripe.

    The master unit statistically precodes the messages of the users its
    stripe serves, u = sum_k sqrt(p_k) c_{q,k} U_k; each TX then transmits
    x_m = T_m V_m u and forwards the updated K-vector Vbar_m u downstream.
    Returns the per-TX transmit vectors and the per-hop payload size (K
    complex values).
    """
    K = len(w)
    u = np.zeros(K, dtype=complex)
    for k in served_users:
        u += np.sqrt(powers[k]) * coeffs_q[:, k] * messages[k]
    eye = np.eye(K)
    n = psi.shape[-1]
    xs = []
    for m, l in enumerate(stripe_txs, start=1):
        hl = tx_block(h_hat, l, n)
        t = local_filter(hl, psi[l], w, total_power)
        p = np.sqrt(w)[:, None] * (hl @ t)
        v = _solve_sweep(eye - stripe_stats.pi[m] @ p, eye - stripe_stats.pi[m],
                         stripe_stats.stripe, m - 1)
        vu = v @ u
        xs.append(t @ vu)
        u = u - p @ vu  # Vbar u, the K-complex payload forwarded to TX m+1
    return xs, K


# --------------------------------------------------------------------------
# scheme registry
# --------------------------------------------------------------------------

@dataclass
class SchemeState:
    """Statistical state fitted on the statistics pool, applied on any pool."""

    scheme: str
    stripe_stats: list = None
    stripe_coeffs: np.ndarray = None  # (Q, K, K)
    stripe_coupling: np.ndarray = None  # (Q, K, K), bidirectional E[Pbar_0]
    pi_by_tx: np.ndarray = None  # (L, K, K)
    tx_coeffs: np.ndarray = None  # (L, K, K)
    local_coefficients: np.ndarray = None  # (L, K)


def fit_scheme(scheme, ensemble, association, stripes, psi, w, total_power):
    """Statistical stage of the named scheme on the statistics pool."""
    if scheme == "centralized":
        return SchemeState(scheme=scheme)
    if scheme == "uni":
        stats = [
            estimate_stripe_statistics(ensemble, txs, psi, w, total_power, stripe=q)
            for q, txs in enumerate(stripes)
        ]
        coeffs = solve_statistical_precoders_uni(association, stats)
        return SchemeState(scheme=scheme, stripe_stats=stats, stripe_coeffs=coeffs)
    if scheme == "bi":
        coupling = np.stack(
            [
                bidirectional_coupling(ensemble, txs, psi, w, total_power, stripe=q)
                for q, txs in enumerate(stripes)
            ]
        )
        coeffs = solve_statistical_precoders_bi(association, coupling)
        return SchemeState(scheme=scheme, stripe_coupling=coupling, stripe_coeffs=coeffs)
    if scheme == "no-share":
        pi = no_sharing_statistics(ensemble, psi, w, total_power)
        coeffs = solve_statistical_precoders_no_sharing(association, pi)
        return SchemeState(scheme=scheme, pi_by_tx=pi, tx_coeffs=coeffs)
    if scheme == "local-mmse":
        coefs = local_mmse_coefficients(ensemble, association, psi, w, total_power)
        return SchemeState(scheme=scheme, local_coefficients=coefs)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def apply_scheme(state, ensemble, association, stripes, psi, w, total_power):
    """Per-realization precoders (S, N*L, K) for a fitted scheme."""
    if state.scheme == "centralized":
        return centralized_mmse(ensemble, psi, w, total_power)
    if state.scheme == "uni":
        return tmmse_unidirectional(
            ensemble, state.stripe_stats, state.stripe_coeffs, stripes, psi, w, total_power
        )
    if state.scheme == "bi":
        return tmmse_bidirectional(
            ensemble, state.stripe_coeffs, stripes, psi, w, total_power
        )
    if state.scheme == "no-share":
        return tmmse_no_sharing(ensemble, state.tx_coeffs, psi, w, total_power)
    if state.scheme == "local-mmse":
        return local_mmse_baseline(
            ensemble, state.local_coefficients, psi, w, total_power
        )
    raise ValueError(f"unknown scheme {state.scheme!r}")


# --------------------------------------------------------------------------
# debug dump of statistical state
# --------------------------------------------------------------------------

def write_matrix_dump(path, matrices):
    """Binary dump: per matrix a little-endian u32 (rows, cols) header followed
    by row-major complex entries as (re, im) float64 pairs."""
    with open(path, "wb") as f:
        for mat in matrices:
            mat = np.ascontiguousarray(np.asarray(mat, dtype="<c16"))
            if mat.ndim != 2:
                raise ValueError("dump expects 2-D matrices")
            f.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
            f.write(mat.tobytes())


def read_matrix_dump(path):
    out = []
    with open(path, "rb") as f:
        while True:
            head = f.read(8)
            if not head:
                break
            rows, cols = struct.unpack("<II", head)
            data = f.read(rows * cols * 16)
            out.append(np.frombuffer(data, dtype="<c16").reshape(rows, cols).copy())
    return out
