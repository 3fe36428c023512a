"""Pure-Python rollout kernels; the fallback when the compiled extension is absent.

Operation order matches ``_kernels.pyx`` so both backends agree to the bit
on the same inputs (both call the platform libm ``exp``/``log``).
"""

from math import exp, inf, log


def _sample_next(next_idx, next_cdf, s, a, u):
    row = next_cdf[s][a]
    for k in range(len(row)):
        if u < row[k]:
            return next_idx[s][a][k]
    return next_idx[s][a][len(row) - 1]


def _weight_total(q_row, prior_row, beta):
    m = -inf
    for a in range(len(q_row)):
        z = prior_row[a] + beta * q_row[a]
        if z > m:
            m = z
    tot = 0.0
    for a in range(len(q_row)):
        tot += exp(prior_row[a] + beta * q_row[a] - m)
    return tot, m


def soft_q_rollout(q, prior, beta, gamma, eta, next_idx, next_cdf, reward, terminal,
                   start_states, max_steps, n_steps, u_act, u_trans, u_reset,
                   carry_i, carry_f, out_s, out_a, out_r, out_s2, out_t, out_term,
                   out_trunc, out_ep_returns):
    # Rows are converted to Python lists on first touch; per-element ndarray
    # indexing is several times slower.
    ua, ut, ur = u_act.tolist(), u_trans.tolist(), u_reset.tolist()
    n_start = len(start_states)
    A = q.shape[1]
    s, elapsed = int(carry_i[0]), int(carry_i[1])
    ep_ret = float(carry_f[0])
    rows = {}
    prior_rows = {}

    def qrow(state):
        row = rows.get(state)
        if row is None:
            row = rows[state] = q[state].tolist()
        return row

    def prow(state):
        row = prior_rows.get(state)
        if row is None:
            row = prior_rows[state] = prior[state].tolist()
        return row

    n_ep = 0
    for step in range(n_steps):
        if s < 0:
            idx = int(ur[step] * n_start)
            if idx >= n_start:
                idx = n_start - 1
            s = int(start_states[idx])
            elapsed = 0
            ep_ret = 0.0
        q_s, p_s = qrow(s), prow(s)
        tot, m = _weight_total(q_s, p_s, beta)
        target = ua[step] * tot
        cum = 0.0
        chosen = -1
        for a in range(A):
            cum += exp(p_s[a] + beta * q_s[a] - m)
            if chosen < 0 and target < cum:
                chosen = a
        if chosen < 0:
            chosen = A - 1
            while chosen > 0 and p_s[chosen] == -inf:
                chosen -= 1
        a = chosen
        s2 = int(_sample_next(next_idx, next_cdf, s, a, ut[step]))
        r = float(reward[s, a])
        term = bool(terminal[s2])
        if term:
            v_next = 0.0
        else:
            tot2, m2 = _weight_total(qrow(s2), prow(s2), beta)
            v_next = (m2 + log(tot2)) / beta
        q_s[a] = q_s[a] + eta * (r + gamma * v_next - q_s[a])
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
    for state, row in rows.items():
        q[state] = row
    carry_i[0] = s
    carry_i[1] = elapsed
    carry_f[0] = ep_ret
    return n_ep


def policy_rollout(probs, next_idx, next_cdf, reward, terminal, start_states, max_steps,
                   n_steps, max_episodes, u_act, u_trans, u_reset, carry_i, carry_f,
                   out_s, out_a, out_r, out_s2, out_t, out_term, out_trunc, out_ep_returns):
    A = probs.shape[1]
    n_start = len(start_states)
    s, elapsed = int(carry_i[0]), int(carry_i[1])
    ep_ret = float(carry_f[0])
    n_ep = written = 0
    rows = {}
    for step in range(n_steps):
        if max_episodes > 0 and n_ep >= max_episodes:
            break
        if s < 0:
            idx = int(u_reset[step] * n_start)
            if idx >= n_start:
                idx = n_start - 1
            s = int(start_states[idx])
            elapsed = 0
            ep_ret = 0.0
        p_s = rows.get(s)
        if p_s is None:
            p_s = rows[s] = probs[s].tolist()
        tot = 0.0
        for a in range(A):
            tot += p_s[a]
        target = float(u_act[step]) * tot
        cum = 0.0
        chosen = -1
        for a in range(A):
            cum += p_s[a]
            if chosen < 0 and target < cum:
                chosen = a
        if chosen < 0:
            chosen = A - 1
            while chosen > 0 and p_s[chosen] == 0.0:
                chosen -= 1
        a = chosen
        s2 = int(_sample_next(next_idx, next_cdf, s, a, float(u_trans[step])))
        r = float(reward[s, a])
        term = bool(terminal[s2])
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
