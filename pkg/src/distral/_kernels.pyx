# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rollout kernels. Semantics mirror ``_kernels_py`` exactly."""

from libc.math cimport exp, log, INFINITY

ctypedef long long i64


cdef inline i64 _sample_next(const i64[:, :, ::1] next_idx, const double[:, :, ::1] next_cdf,
                             i64 s, i64 a, double u) noexcept nogil:
    cdef Py_ssize_t k, K = next_idx.shape[2]
    for k in range(K):
        if u < next_cdf[s, a, k]:
            return next_idx[s, a, k]
    return next_idx[s, a, K - 1]


cdef inline double _weight_total(const double[:, ::1] q, const double[:, ::1] prior,
                                 double beta, i64 s, double* m_out) noexcept nogil:
    """Sum of exp(prior + beta*q - max) at s; stores the max in m_out."""
    cdef Py_ssize_t a, A = q.shape[1]
    cdef double z, m = -INFINITY, tot = 0.0
    for a in range(A):
        z = prior[s, a] + beta * q[s, a]
        if z > m:
            m = z
    for a in range(A):
        tot += exp(prior[s, a] + beta * q[s, a] - m)
    m_out[0] = m
    return tot


def soft_q_rollout(double[:, ::1] q, const double[:, ::1] prior, double beta, double gamma,
                   double eta, const i64[:, :, ::1] next_idx, const double[:, :, ::1] next_cdf,
                   const double[:, ::1] reward, const unsigned char[::1] terminal,
                   const i64[::1] start_states, i64 max_steps, i64 n_steps,
                   const double[::1] u_act, const double[::1] u_trans, const double[::1] u_reset,
                   i64[::1] carry_i, double[::1] carry_f,
                   i64[::1] out_s, i64[::1] out_a, double[::1] out_r, i64[::1] out_s2,
                   i64[::1] out_t, unsigned char[::1] out_term, unsigned char[::1] out_trunc,
                   double[::1] out_ep_returns):
    cdef Py_ssize_t A = q.shape[1]
    cdef i64 n_start = start_states.shape[0]
    cdef i64 step, s, s2, a, chosen, idx, elapsed, n_ep = 0
    cdef double ep_ret, m, tot, target, cum, r, v_next
    cdef unsigned char term, trunc
    with nogil:
        s = carry_i[0]
        elapsed = carry_i[1]
        ep_ret = carry_f[0]
        for step in range(n_steps):
            if s < 0:
                idx = <i64>(u_reset[step] * n_start)
                if idx >= n_start:
                    idx = n_start - 1
                s = start_states[idx]
                elapsed = 0
                ep_ret = 0.0
            tot = _weight_total(q, prior, beta, s, &m)
            target = u_act[step] * tot
            cum = 0.0
            chosen = -1
            for a in range(A):
                cum += exp(prior[s, a] + beta * q[s, a] - m)
                if chosen < 0 and target < cum:
                    chosen = a
            if chosen < 0:
                chosen = A - 1
                while chosen > 0 and prior[s, chosen] == -INFINITY:
                    chosen -= 1
            a = chosen
            s2 = _sample_next(next_idx, next_cdf, s, a, u_trans[step])
            r = reward[s, a]
            term = terminal[s2]
            if term:
                v_next = 0.0
            else:
                tot = _weight_total(q, prior, beta, s2, &m)
                v_next = (m + log(tot)) / beta
            q[s, a] = q[s, a] + eta * (r + gamma * v_next - q[s, a])
            ep_ret = ep_ret + r
            trunc = (not term) and (elapsed + 1 >= max_steps)
            out_s[step] = s
            out_a[step] = a
            out_r[step] = r
            out_s2[step] = s2
            out_t[step] = elapsed
            out_term[step] = term
            out_trunc[step] = trunc
            if term or trunc:
                out_ep_returns[n_ep] = ep_ret
                n_ep += 1
                s = -1
            else:
                s = s2
                elapsed += 1
        carry_i[0] = s
        carry_i[1] = elapsed
        carry_f[0] = ep_ret
    return n_ep


def policy_rollout(const double[:, ::1] probs, const i64[:, :, ::1] next_idx,
                   const double[:, :, ::1] next_cdf, const double[:, ::1] reward,
                   const unsigned char[::1] terminal, const i64[::1] start_states,
                   i64 max_steps, i64 n_steps, i64 max_episodes,
                   const double[::1] u_act, const double[::1] u_trans, const double[::1] u_reset,
                   i64[::1] carry_i, double[::1] carry_f,
                   i64[::1] out_s, i64[::1] out_a, double[::1] out_r, i64[::1] out_s2,
                   i64[::1] out_t, unsigned char[::1] out_term, unsigned char[::1] out_trunc,
                   double[::1] out_ep_returns):
    cdef Py_ssize_t A = probs.shape[1]
    cdef i64 n_start = start_states.shape[0]
    cdef i64 step, s, s2, a, chosen, idx, elapsed, n_ep = 0, written = 0
    cdef double ep_ret, tot, target, cum, r
    cdef unsigned char term, trunc
    with nogil:
        s = carry_i[0]
        elapsed = carry_i[1]
        ep_ret = carry_f[0]
        for step in range(n_steps):
            if max_episodes > 0 and n_ep >= max_episodes:
                break
            if s < 0:
                idx = <i64>(u_reset[step] * n_start)
                if idx >= n_start:
                    idx = n_start - 1
                s = start_states[idx]
                elapsed = 0
                ep_ret = 0.0
            tot = 0.0
            for a in range(A):
                tot += probs[s, a]
            target = u_act[step] * tot
            cum = 0.0
            chosen = -1
            for a in range(A):
                cum += probs[s, a]
                if chosen < 0 and target < cum:
                    chosen = a
            if chosen < 0:
                chosen = A - 1
                while chosen > 0 and probs[s, chosen] == 0.0:
                    chosen -= 1
            a = chosen
            s2 = _sample_next(next_idx, next_cdf, s, a, u_trans[step])
            r = reward[s, a]
            term = terminal[s2]
            ep_ret = ep_ret + r
            trunc = (not term) and (elapsed + 1 >= max_steps)
            out_s[step] = s
            out_a[step] = a
            out_r[step] = r
            out_s2[step] = s2
            out_t[step] = elapsed
            out_term[step] = term
            out_trunc[step] = trunc
            written += 1
            if term or trunc:
                out_ep_returns[n_ep] = ep_ret
                n_ep += 1
                s = -1
            else:
                s = s2
                elapsed += 1
        carry_i[0] = s
        carry_i[1] = elapsed
        carry_f[0] = ep_ret
    return written, n_ep
