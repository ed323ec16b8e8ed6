"""Greedy user selection and weighted waterfilling power allocation.

Step 1 of the low-complexity scheduler: treating interference as fixed at its
mean, pick an active set and powers that maximize the queue-weighted rate
surrogate

    sum_k Q_k * log2(1 + a_k * P_k),   a_k = g_k |h_k^H v_k|^2 / (1 + chibar_k),

subject to sum_k P_k <= 1.  The set is grown greedily: at each step the
candidate whose addition (with zero-forcing re-derived and powers
re-waterfilled) most improves the objective is added; growth stops when no
candidate improves it or the zero-forcing limit min(M, K) is reached.

`greedy_select` / `weighted_waterfilling` are the per-cell reference
operations; `greedy_select_batch` evaluates all cells of a slot at once using
the Gram-inverse identity zfgain_k = 1 / [(H_S^H H_S)^-1]_{kk} and must agree
with the per-cell path (covered by an equivalence test).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .zfbf import DegenerateChannelError, zf_steering

_INV_LN2 = 1.0 / np.log(2.0)

#: Relative Schur-complement floor below which a candidate is treated as
#: collinear with the current active set (matches zfbf.RANK_RTOL squared).
_SCHUR_RTOL = 1e-18


@dataclass
class SelectionInput:
    """Per-cell inputs: H (M, K) with user columns, queue weights Q (K,),
    mean interference chibar (K,) and own-BS gains (K,)."""

    H: np.ndarray
    weights: np.ndarray
    mean_ici: np.ndarray
    own_gains: np.ndarray

    def __post_init__(self):
        K = self.H.shape[1]
        for name in ("weights", "mean_ici", "own_gains"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (K,):
                raise ValueError(f"SelectionInput.{name} must have shape ({K},)")
            setattr(self, name, arr)
        if np.any(self.weights < 0):
            raise ValueError("SelectionInput.weights must be nonnegative")


def weighted_waterfilling(weights: np.ndarray, eff: np.ndarray, budget: float = 1.0) -> np.ndarray:
    """Maximize sum_k Q_k log(1 + a_k P_k) over P >= 0 with sum P <= budget.

    The optimum is P_k = max(0, Q_k / lam - 1 / a_k) with the water level lam
    found by bisection until the budget binds to |sum P - budget| <= 1e-10.
    Empty input yields an empty allocation.
    """
    w = np.asarray(weights, dtype=float)
    a = np.asarray(eff, dtype=float)
    if w.size == 0:
        return np.zeros(0)
    if np.any(w <= 0) or np.any(a <= 0):
        raise ValueError("weighted_waterfilling requires positive weights and gains")
    if w.size == 1:
        return np.array([budget])

    def total(lam):
        return np.maximum(0.0, w / lam - 1.0 / a).sum()

    lam_hi = float(np.max(w * a))  # above this every P_k = 0
    lam_lo = lam_hi
    while total(lam_lo) < budget:
        lam_lo *= 0.5
        if lam_lo < 1e-300:
            break
    for _ in range(200):
        lam = 0.5 * (lam_lo + lam_hi)
        t = total(lam)
        if abs(t - budget) <= 1e-10:
            break
        if t > budget:
            lam_lo = lam
        else:
            lam_hi = lam
    return np.maximum(0.0, w / lam - 1.0 / a)


def waterfill_exact(weights: np.ndarray, eff: np.ndarray, budget: float = 1.0) -> np.ndarray:
    """Closed-form waterfilling over the trailing axis (batched).

    Sorting by Q_k * a_k makes the active set a prefix; the water level for a
    prefix of size m is lam_m = (sum Q) / (budget + sum 1/a), and the correct
    prefix is the largest m with lam_m < Q_(m) a_(m).  Exact up to rounding;
    used by the batched selection path.
    """
    w = np.asarray(weights, dtype=float)
    a = np.asarray(eff, dtype=float)
    wa = w * a
    order = np.argsort(-wa, axis=-1)
    w_s = np.take_along_axis(w, order, axis=-1)
    inva_s = np.take_along_axis(1.0 / a, order, axis=-1)
    wa_s = np.take_along_axis(wa, order, axis=-1)
    lam_m = np.cumsum(w_s, axis=-1) / (budget + np.cumsum(inva_s, axis=-1))
    m = np.maximum((lam_m < wa_s).sum(axis=-1), 1)
    lam = np.take_along_axis(lam_m, m[..., None] - 1, axis=-1)
    P_s = np.maximum(0.0, w_s / lam - inva_s)
    P = np.empty_like(P_s)
    np.put_along_axis(P, order, P_s, axis=-1)
    return P


def selection_objective_bits(weights, eff, powers) -> float:
    """Weighted surrogate rate sum_k Q_k log2(1 + a_k P_k) in bits."""
    return float(np.sum(weights * np.log1p(eff * powers)) * _INV_LN2)


def _set_objective(inp: SelectionInput, users: list[int]):
    """Objective, powers and ZF gains for a fixed active set (None if degenerate)."""
    H_S = inp.H[:, users]
    try:
        V = zf_steering(H_S)
    except DegenerateChannelError:
        return None
    zf_gain = np.abs(np.einsum("mk,mk->k", H_S.conj(), V)) ** 2
    a = inp.own_gains[users] * zf_gain / (1.0 + inp.mean_ici[users])
    P = weighted_waterfilling(inp.weights[users], a)
    # objective in nats; comparisons are base-invariant
    obj = float(np.sum(inp.weights[users] * np.log1p(a * P)))
    return obj, P, zf_gain


def greedy_select(inp: SelectionInput, max_users: int) -> list[int]:
    """Grow the active set greedily; returns selected users in selection order.

    Users with zero weight are never selected; an all-zero weight vector gives
    an empty set (the cell stays silent that slot).  Ties break toward the
    lowest user index.
    """
    if max_users < 1:
        raise ValueError("max_users must be >= 1")
    eligible = np.flatnonzero(inp.weights > 0)
    active: list[int] = []
    best_obj = 0.0
    while len(active) < max_users:
        best_k = -1
        best_cand = None
        for k in eligible:
            if k in active:
                continue
            res = _set_objective(inp, active + [int(k)])
            if res is None:
                continue
            if res[0] > best_obj and (best_cand is None or res[0] > best_cand[0]):
                best_k = int(k)
                best_cand = res
        if best_k < 0:
            break
        active.append(best_k)
        best_obj = best_cand[0]
    return active


@dataclass
class BatchSelection:
    """Selection outcome for all cells of one slot (padded to L = max_users).

    users[c, i] is the i-th selected user of cell c (-1 padding), powers and
    zf_gain align with users, steering[c] holds unit-norm columns.
    """

    users: np.ndarray      # (C, L) int
    counts: np.ndarray     # (C,)   int
    powers: np.ndarray     # (C, L) float
    zf_gain: np.ndarray    # (C, L) float  |h^H v|^2 for each selected user
    steering: np.ndarray   # (C, M, L) complex
    objective: np.ndarray  # (C,)   float, nats


def greedy_select_batch(
    H: np.ndarray,
    weights: np.ndarray,
    mean_ici: np.ndarray,
    own_gains: np.ndarray,
    max_users: int,
) -> BatchSelection:
    """Vectorized greedy selection across cells.

    H is (C, M, K); weights, mean_ici and own_gains are (C, K).  Implements the
    same growth rule as `greedy_select`, evaluating every candidate of every
    cell simultaneously.  ZF gains come from rank-one updates of the Gram
    inverse instead of explicit pseudoinverses.
    """
    H = np.asarray(H)
    C, M, K = H.shape
    L = min(max_users, M, K)
    w = np.asarray(weights, dtype=float)
    denom = 1.0 + np.asarray(mean_ici, dtype=float)
    g_own = np.asarray(own_gains, dtype=float)

    a_raw = np.einsum("cmk,cmk->ck", H.conj(), H).real  # ||h_k||^2
    scale = g_own / denom                               # a_k = scale * zfgain

    users = np.full((C, L), -1, dtype=np.int64)
    counts = np.zeros(C, dtype=np.int64)
    powers = np.zeros((C, L))
    zf_sel = np.zeros((C, L))
    Hsel = np.zeros((C, M, L), dtype=complex)
    Ginv = np.zeros((C, L, L), dtype=complex)
    cur_obj = np.zeros(C)
    done = ~np.any(w > 0, axis=1)

    w_sel = np.zeros((C, L))
    scale_sel = np.zeros((C, L))
    cells = np.arange(C)

    for t in range(L):
        taken = np.zeros((C, K), dtype=bool)
        for i in range(t):
            valid = users[:, i] >= 0
            taken[cells[valid], users[valid, i]] = True
        invalid = taken | (w <= 0) | done[:, None]

        if t == 0:
            a_cand = scale * a_raw  # (C, K)
            # single user gets the full budget
            obj = w * np.log1p(a_cand)
            P_stack = np.ones((C, K, 1))
            a_stack = a_cand[:, :, None]
            w_stack = w[:, :, None]
        else:
            Gi = Ginv[:, :t, :t]
            b = np.einsum("cml,cmk->clk", Hsel[:, :, :t].conj(), H)      # (C, t, K)
            u = np.einsum("cij,cjk->cik", Gi, b)                          # (C, t, K)
            s = a_raw - np.einsum("cik,cik->ck", b.conj(), u).real        # Schur complement
            degenerate = s <= _SCHUR_RTOL * a_raw
            s_safe = np.where(degenerate, 1.0, s)
            diag = np.einsum("cii->ci", Gi).real                          # (C, t)
            with np.errstate(divide="ignore", invalid="ignore"):
                # done cells carry zero Gram blocks; their candidates are masked below
                zf_old = 1.0 / (diag[:, :, None] + np.abs(u) ** 2 / s_safe[:, None, :])
                a_old = scale_sel[:, :t, None] * zf_old                  # (C, t, K)
            a_new = scale * s_safe                                        # (C, K)
            a_stack = np.concatenate(
                [np.swapaxes(a_old, 1, 2), a_new[:, :, None]], axis=2
            )                                                             # (C, K, t+1)
            w_stack = np.concatenate(
                [np.broadcast_to(w_sel[:, None, :t], (C, K, t)), w[:, :, None]], axis=2
            )
            invalid = invalid | degenerate
            # dummy positive entries keep the waterfill free of 0/0 on masked-out candidates
            a_stack = np.where(invalid[:, :, None], 1.0, a_stack)
            w_stack = np.where(invalid[:, :, None], 1.0, w_stack)
            if t == 1:
                # two-user closed form: both active unless one waterfills below zero
                w1, w2 = w_stack[..., 0], w_stack[..., 1]
                a1, a2 = a_stack[..., 0], a_stack[..., 1]
                lam = (w1 + w2) / (1.0 + 1.0 / a1 + 1.0 / a2)
                P1 = w1 / lam - 1.0 / a1
                P2 = w2 / lam - 1.0 / a2
                P1c = np.where(P2 < 0, 1.0, np.maximum(P1, 0.0))
                P2c = np.where(P1 < 0, 1.0, np.maximum(P2, 0.0))
                P_stack = np.stack([P1c, P2c], axis=-1)
            else:
                P_stack = waterfill_exact(w_stack, a_stack)
            obj = np.sum(w_stack * np.log1p(a_stack * P_stack), axis=2)

        obj = np.where(invalid, -np.inf, obj)
        best_k = np.argmax(obj, axis=1)
        best_obj = obj[cells, best_k]
        improve = (best_obj > cur_obj) & ~done & np.isfinite(best_obj)

        ci = cells[improve]
        if ci.size:
            ki = best_k[improve]
            users[ci, t] = ki
            counts[ci] += 1
            cur_obj[ci] = best_obj[improve]
            w_sel[ci, t] = w[ci, ki]
            scale_sel[ci, t] = scale[ci, ki]
            Hsel[ci, :, t] = H[ci, :, ki]
            powers[ci, : t + 1] = P_stack[ci, ki, :]
            if t == 0:
                zf_sel[ci, 0] = a_raw[ci, ki]
                Ginv[ci, 0, 0] = 1.0 / a_raw[ci, ki]
            else:
                zf_sel[ci, :t] = 1.0 / (
                    np.einsum("cii->ci", Ginv[ci, :t, :t]).real
                    + np.abs(u[ci, :, ki]) ** 2 / s[ci, ki, None]
                )
                zf_sel[ci, t] = s[ci, ki]
                # block update of the Gram inverse
                uk = u[ci, :, ki]                                         # (n, t)
                sk = s[ci, ki]
                Ginv[ci, :t, :t] += uk[:, :, None] * uk[:, None, :].conj() / sk[:, None, None]
                Ginv[ci, :t, t] = -uk / sk[:, None]
                Ginv[ci, t, :t] = -uk.conj() / sk[:, None]
                Ginv[ci, t, t] = 1.0 / sk
        done = done | ~improve
        if done.all():
            break

    # steering columns: raw_l = H_S Ginv e_l has squared norm [Ginv]_ll
    raw = np.einsum("cmj,cjl->cml", Hsel, Ginv)
    norm = np.sqrt(np.maximum(np.einsum("cll->cl", Ginv).real, 0.0))
    steering = np.divide(raw, norm[:, None, :], out=np.zeros_like(raw), where=norm[:, None, :] > 0)
    return BatchSelection(
        users=users,
        counts=counts,
        powers=powers,
        zf_gain=zf_sel,
        steering=steering,
        objective=cur_obj,
    )
