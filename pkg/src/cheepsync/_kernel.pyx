# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel: CRC-24 and the per-receiver estimation loop.

Mirrors ``_kernel_py`` operation for operation.  Accumulators use __int128
(the pure kernel uses Python bigints; both are exact within the validated
scenario bounds), float expressions are evaluated in the same order, and the
extension is compiled with -ffp-contract=off, so results are bit-identical
to the pure kernel.
"""

import numpy as np

from libc.math cimport llrint, sqrt
from libc.stdlib cimport calloc, free

cdef extern from *:
    ctypedef long long int128 "__int128"

COMPILED = True

CRC24_POLY = 0x00065B
CRC24_INIT = 0x555555

cdef unsigned int[256] _REV8
cdef unsigned int[256] _CRC24_TABLE

cdef void _init_tables():
    cdef unsigned int i, v, r, s, fb, b
    for i in range(256):
        v = i
        r = 0
        for b in range(8):
            r = (r << 1) | (v & 1)
            v >>= 1
        _REV8[i] = r
    for i in range(256):
        s = i << 16
        for b in range(8):
            fb = (s >> 23) & 1
            s = (s << 1) & 0xFFFFFF
            if fb:
                s ^= 0x00065B
        _CRC24_TABLE[i] = s

_init_tables()


def crc24_register(data, init=CRC24_INIT):
    """LFSR register after clocking in ``data`` octets, LSB of each first."""
    cdef const unsigned char[:] buf = data
    cdef unsigned int state = init
    cdef Py_ssize_t i
    for i in range(buf.shape[0]):
        state = ((state << 8) & 0xFFFFFF) ^ _CRC24_TABLE[((state >> 16) ^ _REV8[buf[i]]) & 0xFF]
    return state


cdef inline long long _pymod(long long a, long long span) nogil:
    cdef long long r = a % span
    if r < 0:
        r += span
    return r


def run_receiver_loop(
    ts_arr,
    b_idx_arr,
    counter_arr,
    prev_delay_arr,
    wall_ref_arr,
    interval_arr,
    width_arr,
    int queue_cap,
    int window,
    double trim_factor,
    bint drift_comp,
    double k_max,
):
    """Sequential receiver pipeline; see ``_kernel_py.run_receiver_loop``."""
    cdef long long[:] ts = np.ascontiguousarray(ts_arr, dtype=np.int64)
    cdef int[:] b_idx = np.ascontiguousarray(b_idx_arr, dtype=np.int32)
    cdef long long[:] counter = np.ascontiguousarray(counter_arr, dtype=np.int64)
    cdef long long[:] prev_delay = np.ascontiguousarray(prev_delay_arr, dtype=np.int64)
    cdef long long[:] wall_ref = np.ascontiguousarray(wall_ref_arr, dtype=np.int64)
    cdef long long[:] interval_ns = np.ascontiguousarray(interval_arr, dtype=np.int64)
    cdef long long[:] width_bits = np.ascontiguousarray(width_arr, dtype=np.int64)

    cdef Py_ssize_t n = ts.shape[0]
    cdef int nb = <int>interval_ns.shape[0]

    matched_np = np.zeros(n, dtype=np.int64)
    elapsed_np = np.zeros(n, dtype=np.int64)
    offset_np = np.zeros(n, dtype=np.int64)
    err_np = np.zeros(n, dtype=np.int64)
    flags_np = np.zeros(n, dtype=np.uint8)
    est_k_np = np.zeros(n, dtype=np.float64)
    est_off0_np = np.zeros(n, dtype=np.float64)
    est_rms_np = np.zeros(n, dtype=np.float64)
    cdef long long[:] matched = matched_np
    cdef long long[:] elapsed_out = elapsed_np
    cdef long long[:] offset_out = offset_np
    cdef long long[:] err = err_np
    cdef unsigned char[:] flags = flags_np
    cdef double[:] est_k = est_k_np
    cdef double[:] est_off0 = est_off0_np
    cdef double[:] est_rms = est_rms_np

    # reception queue ring
    q_ts_np = np.zeros(queue_cap, dtype=np.int64)
    q_b_np = np.zeros(queue_cap, dtype=np.int32)
    q_count_np = np.zeros(queue_cap, dtype=np.int64)
    cdef long long[:] q_ts = q_ts_np
    cdef int[:] q_b = q_b_np
    cdef long long[:] q_count = q_count_np
    cdef int q_len = 0
    cdef int q_next = 0

    # per-beacon counter accounting
    have_last_np = np.zeros(nb, dtype=np.uint8)
    last_count_np = np.zeros(nb, dtype=np.int64)
    cum_elapsed_np = np.zeros(nb, dtype=np.int64)
    first_adj_np = np.zeros(nb, dtype=np.int64)
    last_elapsed_np = np.zeros(nb, dtype=np.int64)
    cdef unsigned char[:] have_last = have_last_np
    cdef long long[:] last_count = last_count_np
    cdef long long[:] cum_elapsed = cum_elapsed_np
    cdef long long[:] first_adj = first_adj_np
    cdef long long[:] last_elapsed = last_elapsed_np

    # per-beacon window rings, counts, and exact int128 moments
    w_t_np = np.zeros((nb, window), dtype=np.int64)
    w_o_np = np.zeros((nb, window), dtype=np.int64)
    cdef long long[:, :] w_t = w_t_np
    cdef long long[:, :] w_o = w_o_np
    w_len_np = np.zeros(nb, dtype=np.int32)
    w_next_np = np.zeros(nb, dtype=np.int32)
    m_n_np = np.zeros(nb, dtype=np.int32)
    cdef int[:] w_len = w_len_np
    cdef int[:] w_next = w_next_np
    cdef int[:] m_n = m_n_np

    cdef int128* m_st = <int128*>calloc(nb, sizeof(int128))
    cdef int128* m_so = <int128*>calloc(nb, sizeof(int128))
    cdef int128* m_stt = <int128*>calloc(nb, sizeof(int128))
    cdef int128* m_sto = <int128*>calloc(nb, sizeof(int128))
    if not (m_st and m_so and m_stt and m_sto):
        free(m_st); free(m_so); free(m_stt); free(m_sto)
        raise MemoryError()

    have_est_np = np.zeros(nb, dtype=np.uint8)
    cur_k_np = np.zeros(nb, dtype=np.float64)
    cur_off0_np = np.zeros(nb, dtype=np.float64)
    cur_rms_np = np.zeros(nb, dtype=np.float64)
    cdef unsigned char[:] have_est = have_est_np
    cdef double[:] cur_k = cur_k_np
    cdef double[:] cur_off0 = cur_off0_np
    cdef double[:] cur_rms = cur_rms_np

    cdef Py_ssize_t i
    cdef int b, own, slot, j, cand, n_priors, start, idx, nw, kn
    cdef long long t_i, c_i, span, iv, best_ts, best_score, score, mult, dev, c_ts
    cdef long long d, elapsed, o, t_old, o_old
    cdef int128 den, num, kst, kso, kstt, ksto
    cdef double k, off0, ssr, rms, thresh, r, corr
    cdef bint fit_ok

    try:
        for i in range(n):
            b = b_idx[i]
            t_i = ts[i]
            c_i = counter[i]
            span = (<long long>1) << width_bits[b]
            iv = interval_ns[b]

            # --- push into the bounded queue (oldest evicted) ----------------
            if q_len < queue_cap:
                own = q_len
                q_len += 1
            else:
                own = q_next
                q_next += 1
                if q_next == queue_cap:
                    q_next = 0
            q_ts[own] = t_i
            q_b[own] = b
            q_count[own] = c_i

            # --- timestamp matching over the queue ----------------------------
            best_ts = t_i
            best_score = -1
            n_priors = 0
            for j in range(q_len):
                if q_b[j] == b and j != own:
                    n_priors += 1
            if n_priors:
                for cand in range(q_len):
                    c_ts = q_ts[cand]
                    score = 0
                    for j in range(q_len):
                        if q_b[j] != b or j == own:
                            continue
                        mult = _pymod(c_i - q_count[j], span)
                        dev = (c_ts - q_ts[j]) - mult * iv
                        score += dev if dev >= 0 else -dev
                    if best_score < 0 or score < best_score or (
                        score == best_score and c_ts < best_ts
                    ):
                        best_score = score
                        best_ts = c_ts
            matched[i] = best_ts

            # --- beacon elapsed time from counter deltas ----------------------
            if not have_last[b]:
                have_last[b] = 1
                last_count[b] = c_i
                cum_elapsed[b] = 0
                first_adj[b] = prev_delay[i]
                elapsed = 0
                last_elapsed[b] = 0
            else:
                d = _pymod(c_i - last_count[b], span)
                if d > (span >> 1):
                    flags[i] |= 4
                    continue
                cum_elapsed[b] += d * iv
                last_count[b] = c_i
                elapsed = cum_elapsed[b] - prev_delay[i] + first_adj[b]
                if elapsed < last_elapsed[b]:
                    flags[i] |= 4
                    continue
                last_elapsed[b] = elapsed

            o = best_ts - elapsed
            elapsed_out[i] = elapsed
            offset_out[i] = o
            flags[i] |= 1

            # --- window push with exact moment updates ------------------------
            if w_len[b] < window:
                slot = w_len[b]
                w_len[b] += 1
            else:
                slot = w_next[b]
                w_next[b] += 1
                if w_next[b] == window:
                    w_next[b] = 0
                t_old = w_t[b, slot]
                o_old = w_o[b, slot]
                m_n[b] -= 1
                m_st[b] -= t_old
                m_so[b] -= o_old
                m_stt[b] -= <int128>t_old * t_old
                m_sto[b] -= <int128>t_old * o_old
            w_t[b, slot] = elapsed
            w_o[b, slot] = o
            m_n[b] += 1
            m_st[b] += elapsed
            m_so[b] += o
            m_stt[b] += <int128>elapsed * elapsed
            m_sto[b] += <int128>elapsed * o

            # --- trimmed least-squares fit over the window ---------------------
            nw = m_n[b]
            if nw >= 2:
                fit_ok = False
                k = 0.0
                off0 = 0.0
                if drift_comp:
                    den = <int128>nw * m_stt[b] - m_st[b] * m_st[b]
                    if den > 0:
                        num = <int128>nw * m_sto[b] - m_st[b] * m_so[b]
                        k = (<double>num) / (<double>den)
                        off0 = ((<double>m_so[b]) - k * (<double>m_st[b])) / nw
                        fit_ok = True
                else:
                    k = 0.0
                    off0 = (<double>m_so[b]) / nw
                    fit_ok = True
                if fit_ok:
                    ssr = 0.0
                    start = w_next[b] if w_len[b] == window else 0
                    for j in range(nw):
                        idx = start + j
                        if idx >= window:
                            idx -= window
                        r = w_o[b, idx] - (off0 + k * w_t[b, idx])
                        ssr += r * r
                    rms = sqrt(ssr / nw)
                    thresh = trim_factor * rms
                    kn = 0
                    kst = 0
                    kso = 0
                    kstt = 0
                    ksto = 0
                    for j in range(nw):
                        idx = start + j
                        if idx >= window:
                            idx -= window
                        r = w_o[b, idx] - (off0 + k * w_t[b, idx])
                        if r <= thresh and -r <= thresh:
                            kn += 1
                            kst += w_t[b, idx]
                            kso += w_o[b, idx]
                            kstt += <int128>w_t[b, idx] * w_t[b, idx]
                            ksto += <int128>w_t[b, idx] * w_o[b, idx]
                    if kn >= 2 and kn < nw:
                        if drift_comp:
                            den = <int128>kn * kstt - kst * kst
                            if den > 0:
                                num = <int128>kn * ksto - kst * kso
                                k = (<double>num) / (<double>den)
                                off0 = ((<double>kso) - k * (<double>kst)) / kn
                        else:
                            k = 0.0
                            off0 = (<double>kso) / kn
                        ssr = 0.0
                        for j in range(nw):
                            idx = start + j
                            if idx >= window:
                                idx -= window
                            r = w_o[b, idx] - (off0 + k * w_t[b, idx])
                            if r <= thresh and -r <= thresh:
                                ssr += r * r
                        rms = sqrt(ssr / kn)
                    if -k_max < k < k_max:
                        have_est[b] = 1
                        cur_k[b] = k
                        cur_off0[b] = off0
                        cur_rms[b] = rms

            # --- prediction error against the ground-truth reference ----------
            if have_est[b]:
                corr = cur_off0[b] + cur_k[b] * <double>elapsed
                err[i] = (elapsed + llrint(corr)) - wall_ref[i]
                flags[i] |= 2
                est_k[i] = cur_k[b]
                est_off0[i] = cur_off0[b]
                est_rms[i] = cur_rms[b]
    finally:
        free(m_st)
        free(m_so)
        free(m_stt)
        free(m_sto)

    return (
        matched_np,
        elapsed_np,
        offset_np,
        err_np,
        flags_np,
        est_k_np,
        est_off0_np,
        est_rms_np,
    )
