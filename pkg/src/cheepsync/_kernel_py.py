"""Pure-Python kernel: CRC-24 and the per-receiver estimation loop.

This module mirrors the compiled kernel in ``_kernel.pyx`` operation for
operation.  All accumulator arithmetic is exact integer math and every
floating-point expression is evaluated in the same order as the compiled
code, so both kernels produce bit-identical results.
"""

from __future__ import annotations

import math

import numpy as np

COMPILED = False

CRC24_POLY = 0x00065B
CRC24_INIT = 0x555555

# bit-reversed octets: the advertising CRC consumes data LSB-first
REV8 = [0] * 256
for _i in range(256):
    _v = _i
    _r = 0
    for _ in range(8):
        _r = (_r << 1) | (_v & 1)
        _v >>= 1
    REV8[_i] = _r

# per-octet step table for the left-shifting LFSR, derived from the
# bit-serial recurrence so both stay in lockstep by construction
CRC24_TABLE = [0] * 256
for _i in range(256):
    _s = _i << 16
    for _ in range(8):
        _fb = (_s >> 23) & 1
        _s = (_s << 1) & 0xFFFFFF
        if _fb:
            _s ^= CRC24_POLY
    CRC24_TABLE[_i] = _s


def crc24_register(data: bytes, init: int = CRC24_INIT) -> int:
    """LFSR register after clocking in ``data`` octets, LSB of each first."""
    state = init
    for b in data:
        state = ((state << 8) & 0xFFFFFF) ^ CRC24_TABLE[((state >> 16) ^ REV8[b]) & 0xFF]
    return state


def _fit(n, st, so, stt, sto):
    """Least-squares slope/intercept from exact integer moments."""
    den = n * stt - st * st
    if den <= 0:
        return None
    k = float(n * sto - st * so) / float(den)
    off0 = (float(so) - k * float(st)) / n
    return k, off0


def run_receiver_loop(
    ts,          # int64[n]   wall-mapped driver timestamps, processing order
    b_idx,       # int32[n]   beacon index per reception
    counter,     # int64[n]   decoded 24-bit counter values
    prev_delay,  # int64[n]   decoded previous-tx-delay, ns
    wall_ref,    # int64[n]   ground-truth reference on the wall timeline
    interval_ns,  # int64[nb] counter interval per beacon
    width_bits,   # int64[nb]
    queue_cap: int,
    window: int,
    trim_factor: float,
    drift_comp: bool,
    k_max: float,
):
    """Sequential receiver pipeline: timestamp matching, sync-point windows,
    trimmed skew fits, and per-packet prediction errors.

    Returns (matched, elapsed, offset, err, flags, est_k, est_off0, est_rms)
    where ``flags`` marks per reception: bit0 = sync point recorded,
    bit1 = error sample valid, bit2 = rejected as out of order.
    """
    n = len(ts)
    nb = len(interval_ns)

    matched = np.zeros(n, dtype=np.int64)
    elapsed_out = np.zeros(n, dtype=np.int64)
    offset_out = np.zeros(n, dtype=np.int64)
    err = np.zeros(n, dtype=np.int64)
    flags = np.zeros(n, dtype=np.uint8)
    est_k = np.zeros(n, dtype=np.float64)
    est_off0 = np.zeros(n, dtype=np.float64)
    est_rms = np.zeros(n, dtype=np.float64)

    # reception queue ring (shared across beacons, like the driver's event list)
    q_ts = [0] * queue_cap
    q_b = [0] * queue_cap
    q_count = [0] * queue_cap
    q_len = 0
    q_next = 0  # slot that the next push overwrites (oldest once full)

    # per-beacon counter accounting
    have_last = [False] * nb
    last_count = [0] * nb
    cum_elapsed = [0] * nb
    first_adj = [0] * nb
    last_elapsed = [0] * nb

    # per-beacon sync-point window rings and exact moments
    w_t = [[0] * window for _ in range(nb)]
    w_o = [[0] * window for _ in range(nb)]
    w_len = [0] * nb
    w_next = [0] * nb
    m_n = [0] * nb
    m_st = [0] * nb
    m_so = [0] * nb
    m_stt = [0] * nb
    m_sto = [0] * nb

    have_est = [False] * nb
    cur_k = [0.0] * nb
    cur_off0 = [0.0] * nb
    cur_rms = [0.0] * nb

    for i in range(n):
        b = b_idx[i]
        t_i = int(ts[i])
        c_i = int(counter[i])
        span = 1 << int(width_bits[b])
        iv = int(interval_ns[b])

        # --- push into the bounded queue (oldest evicted) -------------------
        if q_len < queue_cap:
            own = q_len
            q_len += 1
        else:
            own = q_next
            q_next = (q_next + 1) % queue_cap
        q_ts[own] = t_i
        q_b[own] = b
        q_count[own] = c_i

        # --- timestamp matching over the queue -------------------------------
        # candidates: every queued timestamp (the new reception included);
        # priors: older queued receptions of the same beacon.  A candidate's
        # score sums, over priors, the deviation of its difference from the
        # counter-implied multiple of the interval.  Least total deviation
        # wins; ties go to the earlier timestamp.
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
                    mult = (c_i - q_count[j]) % span
                    dev = (c_ts - q_ts[j]) - mult * iv
                    score += dev if dev >= 0 else -dev
                if best_score < 0 or score < best_score or (
                    score == best_score and c_ts < best_ts
                ):
                    best_score = score
                    best_ts = c_ts
        matched[i] = best_ts

        # --- beacon elapsed time from counter deltas ------------------------
        if not have_last[b]:
            have_last[b] = True
            last_count[b] = c_i
            cum_elapsed[b] = 0
            first_adj[b] = int(prev_delay[i])
            elapsed = 0
            last_elapsed[b] = 0
        else:
            d = (c_i - last_count[b]) % span
            if d > span >> 1:
                flags[i] |= 4  # out-of-order reception, skip
                continue
            cum_elapsed[b] += d * iv
            last_count[b] = c_i
            elapsed = cum_elapsed[b] - int(prev_delay[i]) + first_adj[b]
            if elapsed < last_elapsed[b]:
                flags[i] |= 4
                continue
            last_elapsed[b] = elapsed

        o = best_ts - elapsed
        elapsed_out[i] = elapsed
        offset_out[i] = o
        flags[i] |= 1

        # --- window push with exact moment updates --------------------------
        if w_len[b] < window:
            slot = w_len[b]
            w_len[b] += 1
        else:
            slot = w_next[b]
            w_next[b] = (w_next[b] + 1) % window
            t_old = w_t[b][slot]
            o_old = w_o[b][slot]
            m_n[b] -= 1
            m_st[b] -= t_old
            m_so[b] -= o_old
            m_stt[b] -= t_old * t_old
            m_sto[b] -= t_old * o_old
        w_t[b][slot] = elapsed
        w_o[b][slot] = o
        m_n[b] += 1
        m_st[b] += elapsed
        m_so[b] += o
        m_stt[b] += elapsed * elapsed
        m_sto[b] += elapsed * o

        # --- trimmed least-squares fit over the window -----------------------
        nw = m_n[b]
        if nw >= 2:
            if drift_comp:
                fit = _fit(nw, m_st[b], m_so[b], m_stt[b], m_sto[b])
            else:
                fit = (0.0, float(m_so[b]) / nw)
            if fit is not None:
                k, off0 = fit
                # residual scan: rms, then one trim-and-refit pass
                ssr = 0.0
                ring = w_t[b]
                ringo = w_o[b]
                start = w_next[b] if w_len[b] == window else 0
                for j in range(nw):
                    idx = (start + j) % window
                    r = ringo[idx] - (off0 + k * ring[idx])
                    ssr += r * r
                rms = math.sqrt(ssr / nw)
                thresh = trim_factor * rms
                kept = nw
                kn = 0
                kst = 0
                kso = 0
                kstt = 0
                ksto = 0
                for j in range(nw):
                    idx = (start + j) % window
                    r = ringo[idx] - (off0 + k * ring[idx])
                    if r <= thresh and -r <= thresh:
                        kn += 1
                        kst += ring[idx]
                        kso += ringo[idx]
                        kstt += ring[idx] * ring[idx]
                        ksto += ring[idx] * ringo[idx]
                if kn >= 2 and kn < nw:
                    if drift_comp:
                        refit = _fit(kn, kst, kso, kstt, ksto)
                        if refit is not None:
                            k, off0 = refit
                    else:
                        k, off0 = 0.0, float(kso) / kn
                    ssr = 0.0
                    for j in range(nw):
                        idx = (start + j) % window
                        r = ringo[idx] - (off0 + k * ring[idx])
                        if r <= thresh and -r <= thresh:
                            ssr += r * r
                    rms = math.sqrt(ssr / kn)
                    kept = kn
                if -k_max < k < k_max:
                    have_est[b] = True
                    cur_k[b] = k
                    cur_off0[b] = off0
                    cur_rms[b] = rms

        # --- prediction error against the ground-truth reference ------------
        if have_est[b]:
            corr = cur_off0[b] + cur_k[b] * float(elapsed)
            pred = elapsed + int(round(corr))
            err[i] = pred - int(wall_ref[i])
            flags[i] |= 2
            est_k[i] = cur_k[b]
            est_off0[i] = cur_off0[b]
            est_rms[i] = cur_rms[b]

    return matched, elapsed_out, offset_out, err, flags, est_k, est_off0, est_rms
