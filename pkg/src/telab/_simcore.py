"""Event-driven simulator core, compiled with numba.

All mutable state lives in preallocated numpy arrays owned by the Python-side
SimState; the kernel advances one decision epoch per call. Events are ordered
by (time, sequence number), so runs are bit-reproducible. Random numbers come
from per-stream splitmix64 counters: one arrival stream and one path-choice
stream per session, so changing the split action never perturbs arrival
times.
"""

import numpy as np
from numba import njit

# event kinds
EV_ARRIVAL = 0   # arg: session index
EV_SVC_DONE = 1  # arg: link index
EV_HOP = 2       # arg: packet index

# ints[] slots
I_HEAP = 0   # heap size
I_SEQ = 1    # event sequence counter
I_FREE = 2   # packet pool free count
I_GEN = 3    # lifetime packets generated
I_DEL = 4    # lifetime packets delivered
I_DROP = 5   # lifetime packets dropped
I_LOG = 6    # delivery-log length (current epoch)
N_INTS = 8

# flts[] slots
F_CLOCK = 0  # epoch boundary clock
N_FLTS = 2

STATUS_OK = 0
STATUS_POOL_FULL = 1
STATUS_LOG_FULL = 2

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _uniform(states, i):
    """splitmix64 step for stream i, mapped to a double in [0, 1)."""
    states[i] += _SM_GAMMA
    z = states[i]
    z = (z ^ (z >> np.uint64(30))) * _SM_MUL1
    z = (z ^ (z >> np.uint64(27))) * _SM_MUL2
    z = z ^ (z >> np.uint64(31))
    return float(z >> np.uint64(11)) * _INV_2_53


@njit(cache=True)
def _heap_push(ht, hs, hk, ha, n, t, seq, kind, arg):
    i = n
    ht[i] = t
    hs[i] = seq
    hk[i] = kind
    ha[i] = arg
    while i > 0:
        p = (i - 1) >> 1
        if ht[p] < ht[i] or (ht[p] == ht[i] and hs[p] < hs[i]):
            break
        ht[p], ht[i] = ht[i], ht[p]
        hs[p], hs[i] = hs[i], hs[p]
        hk[p], hk[i] = hk[i], hk[p]
        ha[p], ha[i] = ha[i], ha[p]
        i = p
    return n + 1


@njit(cache=True)
def _heap_pop(ht, hs, hk, ha, n):
    t = ht[0]
    s = hs[0]
    k = hk[0]
    a = ha[0]
    n -= 1
    ht[0] = ht[n]
    hs[0] = hs[n]
    hk[0] = hk[n]
    ha[0] = ha[n]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= n:
            break
        m = i
        if ht[l] < ht[m] or (ht[l] == ht[m] and hs[l] < hs[m]):
            m = l
        r = l + 1
        if r < n and (ht[r] < ht[m] or (ht[r] == ht[m] and hs[r] < hs[m])):
            m = r
        if m == i:
            break
        ht[m], ht[i] = ht[i], ht[m]
        hs[m], hs[i] = hs[i], hs[m]
        hk[m], hk[i] = hk[i], hk[m]
        ha[m], ha[i] = ha[i], ha[m]
        i = m
    return t, s, k, a, n


@njit(cache=True)
def _enter_link(ints, ht, hs, hk, ha, rate, buf, serving, q, q_head, q_len,
                e, p, t, packet_bits):
    """Packet p reaches link e at time t. Returns 1 if tail-dropped."""
    if serving[e] < 0:
        serving[e] = p
        ints[I_HEAP] = _heap_push(ht, hs, hk, ha, ints[I_HEAP],
                                  t + packet_bits / rate[e], ints[I_SEQ],
                                  EV_SVC_DONE, e)
        ints[I_SEQ] += 1
        return 0
    if q_len[e] < buf[e]:
        q[e, (q_head[e] + q_len[e]) % q.shape[1]] = p
        q_len[e] += 1
        return 0
    return 1


@njit(cache=True)
def run_epoch_kernel(ints, flts, ht, hs, hk, ha,
                     arr_states, choice_states,
                     lam, path_off, path_len, n_paths, cum_w, path_links,
                     rate, prop, buf, serving, q, q_head, q_len,
                     pk_sess, pk_hop, pk_off, pk_plen, pk_created, free_list,
                     st_bits, st_cnt, st_delay, st_drop, st_gen,
                     lg_created, lg_time, lg_sess, lg_path, record_log,
                     packet_bits, epoch_len):
    t_end = flts[F_CLOCK] + epoch_len
    while ints[I_HEAP] > 0 and ht[0] < t_end:
        t, _, kind, arg, n = _heap_pop(ht, hs, hk, ha, ints[I_HEAP])
        ints[I_HEAP] = n

        if kind == EV_ARRIVAL:
            k = arg
            u = _uniform(arr_states, k)
            gap = -np.log1p(-u) / lam[k]
            ints[I_HEAP] = _heap_push(ht, hs, hk, ha, ints[I_HEAP], t + gap,
                                      ints[I_SEQ], EV_ARRIVAL, k)
            ints[I_SEQ] += 1

            if ints[I_FREE] == 0:
                flts[F_CLOCK] = t
                return STATUS_POOL_FULL
            ints[I_FREE] -= 1
            p = free_list[ints[I_FREE]]

            u2 = _uniform(choice_states, k)
            j = 0
            while j < n_paths[k] - 1 and u2 >= cum_w[k, j]:
                j += 1
            pk_sess[p] = k
            pk_created[p] = t
            pk_hop[p] = 0
            pk_off[p] = path_off[k, j]
            pk_plen[p] = path_len[k, j]
            st_gen[k] += 1
            ints[I_GEN] += 1

            e = path_links[pk_off[p]]
            if _enter_link(ints, ht, hs, hk, ha, rate, buf, serving, q, q_head,
                           q_len, e, p, t, packet_bits):
                st_drop[k] += 1
                ints[I_DROP] += 1
                free_list[ints[I_FREE]] = p
                ints[I_FREE] += 1

        elif kind == EV_SVC_DONE:
            e = arg
            p = serving[e]
            ints[I_HEAP] = _heap_push(ht, hs, hk, ha, ints[I_HEAP], t + prop[e],
                                      ints[I_SEQ], EV_HOP, p)
            ints[I_SEQ] += 1
            if q_len[e] > 0:
                p2 = q[e, q_head[e]]
                q_head[e] = (q_head[e] + 1) % q.shape[1]
                q_len[e] -= 1
                serving[e] = p2
                ints[I_HEAP] = _heap_push(ht, hs, hk, ha, ints[I_HEAP],
                                          t + packet_bits / rate[e],
                                          ints[I_SEQ], EV_SVC_DONE, e)
                ints[I_SEQ] += 1
            else:
                serving[e] = -1

        else:  # EV_HOP
            p = arg
            pk_hop[p] += 1
            k = pk_sess[p]
            if pk_hop[p] >= pk_plen[p]:
                st_cnt[k] += 1
                st_bits[k] += packet_bits
                st_delay[k] += t - pk_created[p]
                ints[I_DEL] += 1
                if record_log:
                    if ints[I_LOG] >= lg_created.shape[0]:
                        flts[F_CLOCK] = t
                        return STATUS_LOG_FULL
                    m = ints[I_LOG]
                    lg_created[m] = pk_created[p]
                    lg_time[m] = t
                    lg_sess[m] = k
                    lg_path[m] = pk_off[p]
                    ints[I_LOG] += 1
                free_list[ints[I_FREE]] = p
                ints[I_FREE] += 1
            else:
                e = path_links[pk_off[p] + pk_hop[p]]
                if _enter_link(ints, ht, hs, hk, ha, rate, buf, serving, q,
                               q_head, q_len, e, p, t, packet_bits):
                    st_drop[k] += 1
                    ints[I_DROP] += 1
                    free_list[ints[I_FREE]] = p
                    ints[I_FREE] += 1

    flts[F_CLOCK] = t_end
    return STATUS_OK
