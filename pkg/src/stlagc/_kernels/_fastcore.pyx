# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled closed-loop kernels.

Semantically identical to the numpy backend; exists because the simulator
calls the right-hand side four times per integration step and the numpy
version pays per-call dispatch overhead on every batched operation.  One
FastCore instance carries scratch buffers and is not thread-safe; the
simulator drives it sequentially.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, log, sin, sqrt

cnp.import_array()

cdef enum DynFamily:
    DYN_LINEAR = 0
    DYN_INTEGRATOR = 1
    DYN_ROBOT = 2
    DYN_ROOM = 3

cdef enum LitFamily:
    LIT_LINEAR = 0
    LIT_BALL = 1
    LIT_QUAD = 2


cdef class FastCore:
    cdef int n, n_agents, n_tasks, n_literals, n_inputs
    cdef double clamp_delta, grad_reg
    cdef cnp.int32_t[::1] x_off, u_off, dyn_family, dyn_par_off, w_off, w_idx
    cdef cnp.int32_t[::1] lit_off, lit_family, lit_vdim, lit_sel_off, lit_sel
    cdef cnp.int32_t[::1] lit_par_off
    cdef double[::1] dyn_par, lit_sign, lit_par
    cdef double[::1] gamma0, gamma_inf, decay, rho_max
    cdef double[::1] wgrad, lit_vals

    def __init__(self, problem):
        def i32(a):
            return np.ascontiguousarray(a, dtype=np.int32)

        def f64(a):
            return np.ascontiguousarray(a, dtype=np.float64)

        self.n = problem.n
        self.n_agents = problem.n_agents
        self.n_tasks = problem.n_tasks
        self.n_literals = problem.n_literals
        self.n_inputs = problem.n_inputs
        self.clamp_delta = problem.clamp_delta
        self.grad_reg = problem.grad_reg
        self.x_off = i32(problem.x_off)
        self.u_off = i32(problem.u_off)
        self.dyn_family = i32(problem.dyn_family)
        self.dyn_par_off = i32(problem.dyn_par_off)
        self.w_off = i32(problem.w_off)
        self.w_idx = i32(problem.w_idx) if len(problem.w_idx) else i32([0])
        self.dyn_par = f64(problem.dyn_par) if len(problem.dyn_par) else f64([0.0])
        self.lit_off = i32(problem.lit_off)
        self.lit_family = i32(problem.lit_family) if self.n_literals else i32([0])
        self.lit_vdim = i32(problem.lit_vdim) if self.n_literals else i32([0])
        self.lit_sel_off = i32(problem.lit_sel_off)
        self.lit_sel = i32(problem.lit_sel) if len(problem.lit_sel) else i32([0])
        self.lit_par_off = i32(problem.lit_par_off)
        self.lit_sign = f64(problem.lit_sign) if self.n_literals else f64([0.0])
        self.lit_par = f64(problem.lit_par) if len(problem.lit_par) else f64([0.0])
        self.gamma0 = f64(problem.gamma0) if self.n_tasks else f64([0.0])
        self.gamma_inf = f64(problem.gamma_inf) if self.n_tasks else f64([0.0])
        self.decay = f64(problem.decay) if self.n_tasks else f64([0.0])
        self.rho_max = f64(problem.rho_max) if self.n_tasks else f64([0.0])
        self.wgrad = np.zeros(self.n)
        self.lit_vals = np.zeros(max(self.n_literals, 1))

    # -- literal evaluation -------------------------------------------------

    cdef double _lit_value(self, int ell, double[::1] x) noexcept:
        cdef int s0 = self.lit_sel_off[ell]
        cdef int k = self.lit_sel_off[ell + 1] - s0
        cdef int po = self.lit_par_off[ell]
        cdef int fam = self.lit_family[ell]
        cdef int v, r, a, b
        cdef double acc, rr, nrm
        if fam == LIT_LINEAR:
            acc = self.lit_par[po + k]
            for a in range(k):
                acc += self.lit_par[po + a] * x[self.lit_sel[s0 + a]]
            return self.lit_sign[ell] * acc
        if fam == LIT_BALL:
            v = self.lit_vdim[ell]
            nrm = 0.0
            for r in range(v):
                rr = -self.lit_par[po + v * k + r]
                for a in range(k):
                    rr += self.lit_par[po + r * k + a] * x[self.lit_sel[s0 + a]]
                nrm += rr * rr
            return self.lit_sign[ell] * (self.lit_par[po + v * k + v] - sqrt(nrm))
        # quadratic
        acc = 0.0
        for a in range(k):
            rr = 0.0
            for b in range(k):
                rr += self.lit_par[po + a * k + b] * (
                    x[self.lit_sel[s0 + b]] - self.lit_par[po + k * k + b]
                )
            acc += (x[self.lit_sel[s0 + a]] - self.lit_par[po + k * k + a]) * rr
        return self.lit_sign[ell] * (self.lit_par[po + k * k + k] - acc)

    cdef void _lit_scatter(self, int ell, double[::1] x, double coeff) noexcept:
        """wgrad += coeff * d(signed literal)/dx, scattered by selector."""
        cdef int s0 = self.lit_sel_off[ell]
        cdef int k = self.lit_sel_off[ell + 1] - s0
        cdef int po = self.lit_par_off[ell]
        cdef int fam = self.lit_family[ell]
        cdef double sgn = self.lit_sign[ell] * coeff
        cdef int v, r, a, b
        cdef double rr, nrm, scale
        if fam == LIT_LINEAR:
            for a in range(k):
                self.wgrad[self.lit_sel[s0 + a]] += sgn * self.lit_par[po + a]
            return
        if fam == LIT_BALL:
            v = self.lit_vdim[ell]
            nrm = 0.0
            for r in range(v):
                rr = -self.lit_par[po + v * k + r]
                for a in range(k):
                    rr += self.lit_par[po + r * k + a] * x[self.lit_sel[s0 + a]]
                nrm += rr * rr
            scale = -1.0 / (sqrt(nrm) + self.grad_reg)
            for r in range(v):
                rr = -self.lit_par[po + v * k + r]
                for a in range(k):
                    rr += self.lit_par[po + r * k + a] * x[self.lit_sel[s0 + a]]
                for a in range(k):
                    self.wgrad[self.lit_sel[s0 + a]] += (
                        sgn * scale * rr * self.lit_par[po + r * k + a]
                    )
            return
        for a in range(k):
            rr = 0.0
            for b in range(k):
                rr += self.lit_par[po + a * k + b] * (
                    x[self.lit_sel[s0 + b]] - self.lit_par[po + k * k + b]
                )
            self.wgrad[self.lit_sel[s0 + a]] += sgn * (-2.0 * rr)

    cdef int _weighted_gradient(self, double[::1] x, double t) noexcept:
        cdef int i, j, ell, l0, l1, clamp_count = 0
        cdef double vmin, ssum, rho, g, e_hat, lo, hi, eps_v, jac, wt
        for i in range(self.n):
            self.wgrad[i] = 0.0
        if self.n_tasks == 0:
            return 0
        lo = -1.0 + self.clamp_delta
        hi = -self.clamp_delta
        for j in range(self.n_tasks):
            l0 = self.lit_off[j]
            l1 = self.lit_off[j + 1]
            vmin = self._lit_value(l0, x)
            self.lit_vals[l0] = vmin
            for ell in range(l0 + 1, l1):
                self.lit_vals[ell] = self._lit_value(ell, x)
                if self.lit_vals[ell] < vmin:
                    vmin = self.lit_vals[ell]
            if l1 - l0 == 1:
                rho = vmin  # smooth conjunction of one literal is itself
                ssum = 1.0
            else:
                ssum = 0.0
                for ell in range(l0, l1):
                    ssum += exp(vmin - self.lit_vals[ell])
                rho = vmin - log(ssum)
            g = (self.gamma0[j] - self.gamma_inf[j]) * exp(-self.decay[j] * t) \
                + self.gamma_inf[j]
            e_hat = (rho - self.rho_max[j]) / g
            if e_hat < lo:
                e_hat = lo
                clamp_count += 1
            elif e_hat > hi:
                e_hat = hi
                clamp_count += 1
            eps_v = log(-(e_hat + 1.0) / e_hat)
            jac = -1.0 / (g * e_hat * (1.0 + e_hat))
            wt = jac * eps_v
            if l1 - l0 == 1:
                self._lit_scatter(l0, x, wt)
            else:
                for ell in range(l0, l1):
                    self._lit_scatter(
                        ell, x, wt * exp(vmin - self.lit_vals[ell]) / ssum
                    )
        return clamp_count

    # -- dynamics -------------------------------------------------------------

    cdef void _dynamics(self, double[::1] x, double[::1] dx, double[::1] u_out,
                        bint want_dx) noexcept:
        cdef int i, r, col, q, nb, n_nb, xo, uo, po, wo, n_i, m_i, p_i, fam
        cdef double T, gain, reg, u_r, acc, th, c, s, d0, d1, nrm
        cdef double G[3][3]
        cdef double uvec[3]
        for i in range(self.n_agents):
            fam = self.dyn_family[i]
            xo = self.x_off[i]
            uo = self.u_off[i]
            po = self.dyn_par_off[i]
            wo = self.w_off[i]
            n_i = self.x_off[i + 1] - xo
            m_i = self.u_off[i + 1] - uo
            p_i = self.w_off[i + 1] - wo
            if fam == DYN_ROOM:
                # par: [alpha, alpha_e, alpha_h, T_heater, T_outside]
                T = x[xo]
                gain = self.dyn_par[po + 2] * (self.dyn_par[po + 3] - T)
                u_r = -gain * self.wgrad[xo]
                u_out[uo] = u_r
                if want_dx:
                    acc = (-2.0 * self.dyn_par[po] - self.dyn_par[po + 1]) * T \
                        + self.dyn_par[po + 1] * self.dyn_par[po + 4] + gain * u_r
                    for q in range(p_i):
                        acc += self.dyn_par[po] * x[self.w_idx[wo + q]]
                    dx[xo] = acc
            elif fam == DYN_INTEGRATOR:
                # par: [D (n*p)]
                for r in range(n_i):
                    u_r = -self.wgrad[xo + r]
                    u_out[uo + r] = u_r
                    if want_dx:
                        acc = u_r
                        for q in range(p_i):
                            acc += self.dyn_par[po + r * p_i + q] * x[self.w_idx[wo + q]]
                        dx[xo + r] = acc
            elif fam == DYN_ROBOT:
                # par: [gain, reg, G0 (3x3)]
                gain = self.dyn_par[po]
                reg = self.dyn_par[po + 1]
                th = x[xo + 2]
                c = cos(th)
                s = sin(th)
                for col in range(3):
                    G[0][col] = c * self.dyn_par[po + 2 + col] \
                        - s * self.dyn_par[po + 5 + col]
                    G[1][col] = s * self.dyn_par[po + 2 + col] \
                        + c * self.dyn_par[po + 5 + col]
                    G[2][col] = self.dyn_par[po + 8 + col]
                for col in range(3):
                    uvec[col] = -(G[0][col] * self.wgrad[xo]
                                  + G[1][col] * self.wgrad[xo + 1]
                                  + G[2][col] * self.wgrad[xo + 2])
                    u_out[uo + col] = uvec[col]
                if want_dx:
                    for r in range(3):
                        dx[xo + r] = (G[r][0] * uvec[0] + G[r][1] * uvec[1]
                                      + G[r][2] * uvec[2])
                    n_nb = p_i / 3
                    for nb in range(n_nb):
                        d0 = x[xo] - x[self.w_idx[wo + 3 * nb]]
                        d1 = x[xo + 1] - x[self.w_idx[wo + 3 * nb + 1]]
                        nrm = sqrt(d0 * d0 + d1 * d1) + reg
                        dx[xo] -= gain * d0 / nrm
                        dx[xo + 1] -= gain * d1 / nrm
            else:
                # linear: par = [A (n*n), B (n*m), D (n*p), c (n)]
                for col in range(m_i):
                    acc = 0.0
                    for r in range(n_i):
                        acc += self.dyn_par[po + n_i * n_i + r * m_i + col] \
                            * self.wgrad[xo + r]
                    u_out[uo + col] = -acc
                if want_dx:
                    for r in range(n_i):
                        acc = self.dyn_par[po + n_i * n_i + n_i * m_i + n_i * p_i + r]
                        for q in range(n_i):
                            acc += self.dyn_par[po + r * n_i + q] * x[xo + q]
                        for q in range(m_i):
                            acc += self.dyn_par[po + n_i * n_i + r * m_i + q] \
                                * u_out[uo + q]
                        for q in range(p_i):
                            acc += self.dyn_par[po + n_i * n_i + n_i * m_i + r * p_i + q] \
                                * x[self.w_idx[wo + q]]
                        dx[xo + r] = acc
    # -- public API -----------------------------------------------------------

    def rhs(self, x, double t):
        """Closed-loop derivative; returns (dx, number of clamped tasks)."""
        cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        cdef cnp.ndarray dx = np.empty(self.n)
        cdef cnp.ndarray u = np.empty(self.n_inputs)
        cdef int clamped = self._weighted_gradient(xv, t)
        self._dynamics(xv, dx, u, True)
        return dx, clamped

    def controls(self, x, double t):
        """Stacked controller output at (x, t); returns (u, clamp count)."""
        cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        cdef cnp.ndarray dx = np.empty(self.n)
        cdef cnp.ndarray u = np.empty(self.n_inputs)
        cdef int clamped = self._weighted_gradient(xv, t)
        self._dynamics(xv, dx, u, False)
        return u, clamped
