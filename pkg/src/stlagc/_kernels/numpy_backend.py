"""Pure-numpy closed-loop kernels: the fallback backend.

Literals and agents are grouped by shape signature at construction so one
right-hand-side evaluation is a fixed handful of batched array operations
independent of the agent count.  Semantics are identical to the compiled
core; the two are cross-checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .packing import (
    DYN_INTEGRATOR,
    DYN_LINEAR,
    DYN_ROBOT,
    DYN_ROOM,
    LIT_BALL,
    LIT_LINEAR,
    LIT_QUAD,
    PackedProblem,
)

__all__ = ["NumpyCore"]


@dataclass
class _LitGroup:
    family: int
    flat: np.ndarray  # packed literal indices (aligned with value buffer)
    sel: np.ndarray  # (G, k) global state indices
    sign: np.ndarray  # (G,)
    C: np.ndarray  # linear coeffs (G,k) | ball centers (G,v) | quad centers (G,k)
    d: np.ndarray  # (G,)
    S: np.ndarray | None = None  # (G, v, k)
    Q: np.ndarray | None = None  # (G, k, k)


@dataclass
class _DynGroup:
    family: int
    idx: np.ndarray  # (Ga,) 0-based agent indices
    x_idx: np.ndarray  # (Ga, n)
    u_idx: np.ndarray  # (Ga, m)
    w_idx: np.ndarray  # (Ga, p)
    par: dict


class NumpyCore:
    """Closed-loop evaluation engine over a :class:`PackedProblem`."""

    def __init__(self, problem: PackedProblem):
        self.p = problem
        self._lit_groups = self._build_literal_groups(problem)
        self._dyn_groups = self._build_dyn_groups(problem)
        counts = np.diff(problem.lit_off)
        self._lit_task = np.repeat(np.arange(problem.n_tasks), counts)

    # -- construction ---------------------------------------------------

    @staticmethod
    def _build_literal_groups(p: PackedProblem) -> list[_LitGroup]:
        buckets: dict[tuple, list[int]] = {}
        for ell in range(p.n_literals):
            k = p.lit_sel_off[ell + 1] - p.lit_sel_off[ell]
            key = (int(p.lit_family[ell]), int(k), int(p.lit_vdim[ell]))
            buckets.setdefault(key, []).append(ell)
        groups = []
        for (family, k, v), members in sorted(buckets.items()):
            flat = np.array(members, dtype=np.intp)
            sel = np.empty((len(members), k), dtype=np.intp)
            sign = p.lit_sign[flat].astype(float)
            d = np.empty(len(members))
            C = np.empty((len(members), v if family == LIT_BALL else k))
            S = np.empty((len(members), v, k)) if family == LIT_BALL else None
            Q = np.empty((len(members), k, k)) if family == LIT_QUAD else None
            for row, ell in enumerate(members):
                s0, s1 = p.lit_sel_off[ell], p.lit_sel_off[ell + 1]
                sel[row] = p.lit_sel[s0:s1]
                par = p.lit_par[p.lit_par_off[ell] : p.lit_par_off[ell + 1]]
                if family == LIT_LINEAR:
                    C[row], d[row] = par[:k], par[k]
                elif family == LIT_BALL:
                    S[row] = par[: v * k].reshape(v, k)
                    C[row], d[row] = par[v * k : v * k + v], par[v * k + v]
                else:
                    Q[row] = par[: k * k].reshape(k, k)
                    C[row], d[row] = par[k * k : k * k + k], par[k * k + k]
            groups.append(_LitGroup(family, flat, sel, sign, C, d, S, Q))
        return groups

    @staticmethod
    def _build_dyn_groups(p: PackedProblem) -> list[_DynGroup]:
        buckets: dict[tuple, list[int]] = {}
        for i in range(p.n_agents):
            n = p.x_off[i + 1] - p.x_off[i]
            m = p.u_off[i + 1] - p.u_off[i]
            q = p.w_off[i + 1] - p.w_off[i]
            buckets.setdefault((int(p.dyn_family[i]), int(n), int(m), int(q)), []).append(i)
        groups = []
        for (family, n, m, q), members in sorted(buckets.items()):
            idx = np.array(members, dtype=np.intp)
            ga = len(members)
            x_idx = np.empty((ga, n), dtype=np.intp)
            u_idx = np.empty((ga, m), dtype=np.intp)
            w_idx = np.empty((ga, q), dtype=np.intp)
            for row, i in enumerate(members):
                x_idx[row] = np.arange(p.x_off[i], p.x_off[i + 1])
                u_idx[row] = np.arange(p.u_off[i], p.u_off[i + 1])
                w_idx[row] = p.w_idx[p.w_off[i] : p.w_off[i + 1]]
            par: dict = {}
            if family == DYN_LINEAR:
                A = np.empty((ga, n, n))
                B = np.empty((ga, n, m))
                D = np.empty((ga, n, q))
                c = np.empty((ga, n))
                for row, i in enumerate(members):
                    raw = p.dyn_par[p.dyn_par_off[i] : p.dyn_par_off[i + 1]]
                    o = 0
                    A[row] = raw[o : o + n * n].reshape(n, n); o += n * n
                    B[row] = raw[o : o + n * m].reshape(n, m); o += n * m
                    D[row] = raw[o : o + n * q].reshape(n, q); o += n * q
                    c[row] = raw[o : o + n]
                par = {"A": A, "B": B, "D": D, "c": c}
            elif family == DYN_INTEGRATOR:
                D = np.empty((ga, n, q))
                for row, i in enumerate(members):
                    raw = p.dyn_par[p.dyn_par_off[i] : p.dyn_par_off[i + 1]]
                    D[row] = raw[: n * q].reshape(n, q)
                par = {"D": D}
            elif family == DYN_ROBOT:
                G0 = np.empty((ga, 3, 3))
                gain = np.empty(ga)
                reg = np.empty(ga)
                for row, i in enumerate(members):
                    raw = p.dyn_par[p.dyn_par_off[i] : p.dyn_par_off[i + 1]]
                    gain[row], reg[row] = raw[0], raw[1]
                    G0[row] = raw[2:11].reshape(3, 3)
                par = {"G0": G0, "gain": gain, "reg": reg}
            else:
                consts = np.empty((ga, 5))
                for row, i in enumerate(members):
                    consts[row] = p.dyn_par[p.dyn_par_off[i] : p.dyn_par_off[i] + 5]
                par = {"consts": consts}
            groups.append(_DynGroup(family, idx, x_idx, u_idx, w_idx, par))
        return groups

    # -- task layer -------------------------------------------------------

    def _literal_values_grads(self, x: np.ndarray, want_grads: bool):
        p = self.p
        vals = np.empty(p.n_literals)
        grads: list[np.ndarray | None] = []
        for g in self._lit_groups:
            Xs = x[g.sel]
            if g.family == LIT_LINEAR:
                v = np.einsum("gk,gk->g", g.C, Xs) + g.d
                grad = np.broadcast_to(g.C, Xs.shape) if want_grads else None
            elif g.family == LIT_BALL:
                R = np.einsum("gvk,gk->gv", g.S, Xs) - g.C
                nrm = np.linalg.norm(R, axis=1)
                v = g.d - nrm
                if want_grads:
                    grad = -np.einsum("gvk,gv->gk", g.S, R) / (nrm + p.grad_reg)[:, None]
                else:
                    grad = None
            else:
                R = Xs - g.C
                QR = np.einsum("gkl,gl->gk", g.Q, R)
                v = g.d - np.einsum("gk,gk->g", R, QR)
                grad = -2.0 * QR if want_grads else None
            vals[g.flat] = g.sign * v
            grads.append(grad)
        return vals, grads

    def task_values(self, x: np.ndarray) -> np.ndarray:
        """Smooth-mode body robustness of every task at one state."""
        if self.p.n_tasks == 0:
            return np.empty(0)
        vals, _ = self._literal_values_grads(np.asarray(x, float), want_grads=False)
        return self._smooth_by_task(vals)[0]

    def _smooth_by_task(self, vals: np.ndarray):
        p = self.p
        seg = p.lit_off[:-1]
        tmin = np.minimum.reduceat(vals, seg)
        shifted = np.exp(tmin[self._lit_task] - vals)
        denom = np.add.reduceat(shifted, seg)
        rho = tmin - np.log(denom)
        weights = shifted / denom[self._lit_task]
        return rho, weights

    def _funnel_terms(self, rho: np.ndarray, t: float):
        p = self.p
        g = (p.gamma0 - p.gamma_inf) * np.exp(-p.decay * t) + p.gamma_inf
        e_hat = (rho - p.rho_max) / g
        lo, hi = -1.0 + p.clamp_delta, -p.clamp_delta
        clamped = (e_hat < lo) | (e_hat > hi)
        e_hat = np.clip(e_hat, lo, hi)
        eps = np.log(-(e_hat + 1.0) / e_hat)
        jac = -1.0 / (g * e_hat * (1.0 + e_hat))
        return g, e_hat, eps, jac, clamped

    def _weighted_gradient(self, x: np.ndarray, t: float):
        """Sum over tasks of J_j eps_j grad rho_j, scattered into state space."""
        p = self.p
        w_grad = np.zeros(p.n)
        if p.n_tasks == 0:
            return w_grad, 0
        vals, grads = self._literal_values_grads(x, want_grads=True)
        rho, lit_w = self._smooth_by_task(vals)
        _, _, eps, jac, clamped = self._funnel_terms(rho, t)
        task_wt = jac * eps
        coeff = task_wt[self._lit_task] * lit_w
        for g, grad in zip(self._lit_groups, grads):
            contrib = (coeff[g.flat] * g.sign)[:, None] * grad
            np.add.at(w_grad, g.sel.ravel(), contrib.ravel())
        return w_grad, int(clamped.sum())

    # -- closed loop -------------------------------------------------------

    def rhs(self, x: np.ndarray, t: float):
        """Closed-loop derivative; returns (dx, number of clamped tasks)."""
        x = np.asarray(x, dtype=float)
        w_grad, n_clamped = self._weighted_gradient(x, t)
        dx = np.empty(self.p.n)
        for g in self._dyn_groups:
            X = x[g.x_idx]
            wg = w_grad[g.x_idx]
            W = x[g.w_idx] if g.w_idx.shape[1] else None
            if g.family == DYN_LINEAR:
                u = -np.einsum("gnm,gn->gm", g.par["B"], wg)
                dxb = np.einsum("gnm,gm->gn", g.par["A"], X) + g.par["c"]
                dxb += np.einsum("gnm,gm->gn", g.par["B"], u)
                if W is not None:
                    dxb += np.einsum("gnp,gp->gn", g.par["D"], W)
            elif g.family == DYN_INTEGRATOR:
                u = -wg
                dxb = u.copy()
                if W is not None:
                    dxb += np.einsum("gnp,gp->gn", g.par["D"], W)
            elif g.family == DYN_ROBOT:
                G = self._robot_input_matrix(g, X)
                u = -np.einsum("gnm,gn->gm", G, wg)
                dxb = np.einsum("gnm,gm->gn", G, u)
                dxb += self._robot_coupling(g, X, W)
            else:
                dxb, u = self._room_rhs(g, X, W, wg)
            dx[g.x_idx] = dxb
        return dx, n_clamped

    def controls(self, x: np.ndarray, t: float):
        """Stacked controller output at (x, t); returns (u, clamp count)."""
        x = np.asarray(x, dtype=float)
        w_grad, n_clamped = self._weighted_gradient(x, t)
        u_full = np.zeros(self.p.n_inputs)
        for g in self._dyn_groups:
            wg = w_grad[g.x_idx]
            if g.family == DYN_LINEAR:
                u = -np.einsum("gnm,gn->gm", g.par["B"], wg)
            elif g.family == DYN_INTEGRATOR:
                u = -wg
            elif g.family == DYN_ROBOT:
                G = self._robot_input_matrix(g, x[g.x_idx])
                u = -np.einsum("gnm,gn->gm", G, wg)
            else:
                X = x[g.x_idx]
                gain = self._room_input_gain(g, X)
                u = -gain * wg
            u_full[g.u_idx] = u
        return u_full, n_clamped

    def task_state(self, x: np.ndarray, t: float):
        """Per-task diagnostics (rho, e_hat, eps, J, clamped) at one sample."""
        rho = self.task_values(x)
        g, e_hat, eps, jac, clamped = self._funnel_terms(rho, t)
        return {
            "rho": rho, "gamma": g, "e_hat": e_hat, "epsilon": eps,
            "jacobian": jac, "clamped": clamped,
        }

    # -- family helpers ------------------------------------------------------

    @staticmethod
    def _robot_input_matrix(g: _DynGroup, X: np.ndarray) -> np.ndarray:
        c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
        rot = np.zeros((len(X), 3, 3))
        rot[:, 0, 0], rot[:, 0, 1] = c, -s
        rot[:, 1, 0], rot[:, 1, 1] = s, c
        rot[:, 2, 2] = 1.0
        return np.einsum("gij,gjk->gik", rot, g.par["G0"])

    @staticmethod
    def _robot_coupling(g: _DynGroup, X: np.ndarray, W: np.ndarray | None) -> np.ndarray:
        out = np.zeros_like(X)
        if W is None:
            return out
        n_nb = W.shape[1] // 3
        P = W.reshape(len(X), n_nb, 3)[:, :, :2]
        diff = X[:, None, :2] - P
        nrm = np.linalg.norm(diff, axis=2)
        terms = diff / (nrm + g.par["reg"][:, None])[:, :, None]
        out[:, :2] = -g.par["gain"][:, None] * terms.sum(axis=1)
        return out

    @staticmethod
    def _room_input_gain(g: _DynGroup, X: np.ndarray) -> np.ndarray:
        consts = g.par["consts"]
        return consts[:, 2:3] * (consts[:, 3:4] - X)

    def _room_rhs(self, g: _DynGroup, X, W, wg):
        consts = g.par["consts"]
        alpha, alpha_e = consts[:, 0:1], consts[:, 1:2]
        gain = self._room_input_gain(g, X)
        u = -gain * wg
        dxb = (-2.0 * alpha - alpha_e) * X + alpha_e * consts[:, 4:5] + gain * u
        if W is not None and W.shape[1]:
            dxb = dxb + alpha * W.sum(axis=1, keepdims=True)
        return dxb, u
