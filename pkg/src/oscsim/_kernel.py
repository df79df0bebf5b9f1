"""
Compiled inner loop: tank ODE, pin models, filters and per-step detectors.

Everything here works on flat float arrays so that numba can compile it.
Each system owns one row of the parameter matrix (``P_*`` columns), one
``NS``-wide slice of the state vector, one detector row and one
measurement row. Python code never reaches into these layouts directly;
``oscsim.sim`` packs and unpacks them.
"""

import math

import numpy as np
from numba import njit

# parameter row
P_L = 0
P_C1 = 1
P_C2 = 2
P_RS = 3
P_GLIN = 4
P_IM = 5
P_VREF = 6
P_GCM = 7
P_POWERED = 8
P_DRIVER_EN = 9
P_OPEN = 10
P_ROPEN = 11
P_SHORT_PIN = 12
P_SHORT_V = 13
P_RSHORT = 14
P_RAIL_LO = 15
P_RAIL_HI = 16
P_TAU_RECT = 17
P_TAU_MID = 18
P_TAU_ASYM = 19
P_UP_VPOS = 20
P_UP_VNEG = 21
P_UP_ILEAK = 22
P_UP_RON = 23
P_HYS = 24
P_TIMEOUT = 25
P_VASYM = 26
P_PERSIST = 27
P_CODE = 28
P_LOWFLAG = 29
P_DETECT = 30
# reciprocals, filled in by finalize_row
P_INV_C1 = 31
P_INV_C2 = 32
P_INV_L = 33
P_INV_TAU_RECT = 34
P_INV_TAU_MID = 35
P_INV_TAU_ASYM = 36
P_CMR = 37
NP = 38

# state slice
X_V1 = 0
X_V2 = 1
X_IL = 2
X_VDC = 3
X_VR1 = 4
X_ASYM = 5
NS = 6

# detector row
D_CLK = 0
D_LAST_EDGE = 1
D_MISS = 2
D_MISS_T = 3
D_ASYM_SINCE = 4
D_ASYM = 5
D_ASYM_T = 6
ND = 7

# measurement row
M_SUMV2 = 0
M_SUMT = 1
M_PEAK = 2
M_NCROSS = 3
M_NRISE = 4
M_TFIRST = 5
M_TLAST = 6
M_SUMIDRV = 7
M_MAXPIN = 8
M_MAXPIN_MON = 9  # same, restricted to t >= t_pin
NM = 10

# recorded columns
R_V1 = 0
R_V2 = 1
R_IL = 2
R_IDRV1 = 3
R_IDRV2 = 4
R_VDC = 5
R_VR1 = 6
R_ASYM = 7
R_CODE = 8
R_ILIM = 9
R_FMISS = 10
R_FLOW = 11
R_FASYM = 12
NR = 13

def finalize_row(row):
    """Fill the reciprocal columns of a parameter row in place."""
    row[P_INV_C1] = 1.0 / row[P_C1]
    row[P_INV_C2] = 1.0 / row[P_C2]
    row[P_INV_L] = 1.0 / row[P_L]
    row[P_INV_TAU_RECT] = 1.0 / row[P_TAU_RECT]
    row[P_INV_TAU_MID] = 1.0 / row[P_TAU_MID]
    row[P_INV_TAU_ASYM] = 1.0 / row[P_TAU_ASYM]
    return row


STATUS_OK = 0
STATUS_NONFINITE = 2


JIT = dict(cache=True, error_model="numpy")


@njit(inline="always", **JIT)
def driver_current(v_pin, v_cm, g_lin, i_m):
    i = g_lin * (v_pin - v_cm)
    if i > i_m:
        return i_m
    if i < -i_m:
        return -i_m
    return i


@njit(inline="always", **JIT)
def unsupplied_pin_current(v, v_pos, v_neg, i_leak, r_on):
    # current drawn into the pin of an unpowered driver
    if v > v_pos:
        return i_leak + (v - v_pos) / r_on
    if v < v_neg:
        return -i_leak + (v - v_neg) / r_on
    if v >= 0.0:
        return i_leak * v / v_pos
    return i_leak * v / (-v_neg)


@njit(inline="always", **JIT)
def pin_currents(v1, v2, P, s):
    """Currents injected into LC1 and LC2 by the chip of system ``s``."""
    if P[s, P_POWERED] > 0.5:
        v_cm = 0.5 * (v1 + v2)
        i_cm = -P[s, P_GCM] * (v_cm - P[s, P_VREF])
        # the input pair only works inside its common-mode range
        if P[s, P_DRIVER_EN] > 0.5 and abs(v_cm - P[s, P_VREF]) <= P[s, P_CMR]:
            g = P[s, P_GLIN]
            im = P[s, P_IM]
            return (driver_current(v1, v_cm, g, im) + i_cm,
                    driver_current(v2, v_cm, g, im) + i_cm)
        return i_cm, i_cm
    vp = P[s, P_UP_VPOS]
    vn = P[s, P_UP_VNEG]
    il = P[s, P_UP_ILEAK]
    ro = P[s, P_UP_RON]
    return (-unsupplied_pin_current(v1, vp, vn, il, ro),
            -unsupplied_pin_current(v2, vp, vn, il, ro))


@njit(inline="always", **JIT)
def coil_current(x, o, P, s):
    if P[s, P_OPEN] > 0.5:
        return (x[o + X_V1] - x[o + X_V2]) / P[s, P_ROPEN]
    return x[o + X_IL]


@njit(inline="always", **JIT)
def short_current(v, pin, P, s):
    if P[s, P_SHORT_PIN] == pin:
        return -(v - P[s, P_SHORT_V]) / P[s, P_RSHORT]
    return 0.0


@njit(**JIT)
def rhs(x, P, nsys, m, sgn, i_ext, dx):
    for s in range(nsys):
        o = s * NS
        v1 = x[o + X_V1]
        v2 = x[o + X_V2]
        ic = coil_current(x, o, P, s)
        i1, i2 = pin_currents(v1, v2, P, s)
        if P[s, P_SHORT_PIN] > 0.0:
            i1 += short_current(v1, 1.0, P, s)
            i2 += short_current(v2, 2.0, P, s)
        i1 += i_ext[s, 0]
        i2 += i_ext[s, 1]
        dx[o + X_V1] = (-ic + i1) * P[s, P_INV_C1]
        dx[o + X_V2] = (ic + i2) * P[s, P_INV_C2]
        # inductor voltage for now, turned into di/dt below
        dx[o + X_IL] = v1 - v2 - P[s, P_RS] * ic
        if P[s, P_POWERED] > 0.5:
            v_cm = 0.5 * (v1 + v2)
            vr1 = x[o + X_VR1]
            dx[o + X_VDC] = (max(v1, v2) - x[o + X_VDC]) * P[s, P_INV_TAU_RECT]
            dx[o + X_VR1] = (v_cm - vr1) * P[s, P_INV_TAU_MID]
            dx[o + X_ASYM] = (sgn[s] * (v_cm - vr1) - x[o + X_ASYM]) * P[s, P_INV_TAU_ASYM]
        else:
            dx[o + X_VDC] = 0.0
            dx[o + X_VR1] = 0.0
            dx[o + X_ASYM] = 0.0
    coupled = nsys == 2 and m != 0.0 and P[0, P_OPEN] < 0.5 and P[1, P_OPEN] < 0.5
    if coupled:
        ua = dx[X_IL]
        ub = dx[NS + X_IL]
        la = P[0, P_L]
        lb = P[1, P_L]
        det = la * lb - m * m
        dx[X_IL] = (lb * ua - m * ub) / det
        dx[NS + X_IL] = (la * ub - m * ua) / det
    else:
        for s in range(nsys):
            o = s * NS
            if P[s, P_OPEN] > 0.5:
                dx[o + X_IL] = 0.0
            else:
                dx[o + X_IL] = dx[o + X_IL] * P[s, P_INV_L]


@njit(**JIT)
def rk4_step(x, P, nsys, m, sgn, i_ext, h, k1, k2, k3, k4, tmp):
    n = nsys * NS
    rhs(x, P, nsys, m, sgn, i_ext, k1)
    for j in range(n):
        tmp[j] = x[j] + 0.5 * h * k1[j]
    rhs(tmp, P, nsys, m, sgn, i_ext, k2)
    for j in range(n):
        tmp[j] = x[j] + 0.5 * h * k2[j]
    rhs(tmp, P, nsys, m, sgn, i_ext, k3)
    for j in range(n):
        tmp[j] = x[j] + h * k3[j]
    rhs(tmp, P, nsys, m, sgn, i_ext, k4)
    for j in range(n):
        x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    # supply/ground protection clamps of powered pins
    for s in range(nsys):
        if P[s, P_POWERED] > 0.5:
            o = s * NS
            lo = P[s, P_RAIL_LO]
            hi = P[s, P_RAIL_HI]
            for q in range(o + X_V1, o + X_V2 + 1):
                if x[q] < lo:
                    x[q] = lo
                elif x[q] > hi:
                    x[q] = hi


@njit(**JIT)
def _record(x, P, nsys, det, rec, i):
    for s in range(nsys):
        o = s * NS
        v1 = x[o + X_V1]
        v2 = x[o + X_V2]
        i1, i2 = pin_currents(v1, v2, P, s)
        rec[i, s, R_V1] = v1
        rec[i, s, R_V2] = v2
        rec[i, s, R_IL] = coil_current(x, o, P, s)
        rec[i, s, R_IDRV1] = i1
        rec[i, s, R_IDRV2] = i2
        rec[i, s, R_VDC] = x[o + X_VDC]
        rec[i, s, R_VR1] = x[o + X_VR1]
        rec[i, s, R_ASYM] = x[o + X_ASYM]
        rec[i, s, R_CODE] = P[s, P_CODE]
        rec[i, s, R_ILIM] = P[s, P_IM]
        rec[i, s, R_FMISS] = det[s, D_MISS]
        rec[i, s, R_FLOW] = P[s, P_LOWFLAG]
        rec[i, s, R_FASYM] = det[s, D_ASYM]


@njit(**JIT)
def record_sample(x, P, nsys, det, rec_t, rec, rec_i, t):
    if rec_i < rec_t.shape[0]:
        rec_t[rec_i] = t
        _record(x, P, nsys, det, rec, rec_i)
        return rec_i + 1
    return rec_i


@njit(inline="always", **JIT)
def sys_deriv(v1, v2, il, vdc, vr1, asy, P, s, sg):
    """Derivatives of one system; the third output is the coil voltage."""
    if P[s, P_OPEN] > 0.5:
        ic = (v1 - v2) / P[s, P_ROPEN]
    else:
        ic = il
    i1, i2 = pin_currents(v1, v2, P, s)
    if P[s, P_SHORT_PIN] > 0.0:
        i1 += short_current(v1, 1.0, P, s)
        i2 += short_current(v2, 2.0, P, s)
    dv1 = (i1 - ic) * P[s, P_INV_C1]
    dv2 = (i2 + ic) * P[s, P_INV_C2]
    ul = v1 - v2 - P[s, P_RS] * ic
    if P[s, P_POWERED] > 0.5:
        v_cm = 0.5 * (v1 + v2)
        ddc = (max(v1, v2) - vdc) * P[s, P_INV_TAU_RECT]
        dr1 = (v_cm - vr1) * P[s, P_INV_TAU_MID]
        das = (sg * (v_cm - vr1) - asy) * P[s, P_INV_TAU_ASYM]
    else:
        ddc = 0.0
        dr1 = 0.0
        das = 0.0
    return dv1, dv2, ul, ddc, dr1, das


@njit(inline="always", **JIT)
def coil_rates(ua, ub, P, two, coupled, m):
    if coupled:
        la = P[0, P_L]
        lb = P[1, P_L]
        inv = 1.0 / (la * lb - m * m)
        return (lb * ua - m * ub) * inv, (la * ub - m * ua) * inv
    da = 0.0 if P[0, P_OPEN] > 0.5 else ua * P[0, P_INV_L]
    db = 0.0
    if two and P[1, P_OPEN] < 0.5:
        db = ub * P[1, P_INV_L]
    return da, db


@njit(inline="always", **JIT)
def clamp_rail(v, P, s):
    if P[s, P_POWERED] > 0.5:
        if v < P[s, P_RAIL_LO]:
            return P[s, P_RAIL_LO]
        if v > P[s, P_RAIL_HI]:
            return P[s, P_RAIL_HI]
    return v


@njit(nogil=True, **JIT)
def integrate(x, P, nsys, m, t, n_next, t_stop, dt, dec,
              rec_t, rec, rec_i, det, meas, t_meas, t_pin):
    """Advance from ``t`` to exactly ``t_stop`` on the global ``n * dt`` grid.

    A step that would cross ``t_stop`` is split there; the remainder is
    taken on the next call. Returns (t, n_next, rec_i, status).

    Same arithmetic as ``rk4_step`` but with the state held in scalars,
    which is several times faster for one or two systems.
    """
    two = nsys == 2
    coupled = two and m != 0.0 and P[0, P_OPEN] < 0.5 and P[1, P_OPEN] < 0.5
    a1 = x[X_V1]; a2 = x[X_V2]; a3 = x[X_IL]; a4 = x[X_VDC]; a5 = x[X_VR1]; a6 = x[X_ASYM]
    b1 = b2 = b3 = b4 = b5 = b6 = 0.0
    if two:
        b1 = x[NS + X_V1]; b2 = x[NS + X_V2]; b3 = x[NS + X_IL]
        b4 = x[NS + X_VDC]; b5 = x[NS + X_VR1]; b6 = x[NS + X_ASYM]
    status = STATUS_OK
    steps = 0
    while t < t_stop:
        t_grid = n_next * dt
        on_grid = t_grid <= t_stop
        t_new = t_grid if on_grid else t_stop
        h = t_new - t
        hh = 0.5 * h
        sa = 1.0 if det[0, D_CLK] > 0.5 else -1.0
        sb = 1.0
        if two:
            sb = 1.0 if det[1, D_CLK] > 0.5 else -1.0
        vda_prev = a1 - a2
        vdb_prev = b1 - b2

        # stage 1
        p1, p2, pu, p4, p5, p6 = sys_deriv(a1, a2, a3, a4, a5, a6, P, 0, sa)
        q1 = q2 = qu = q4 = q5 = q6 = 0.0
        if two:
            q1, q2, qu, q4, q5, q6 = sys_deriv(b1, b2, b3, b4, b5, b6, P, 1, sb)
        p3, q3 = coil_rates(pu, qu, P, two, coupled, m)
        sa1 = p1; sa2 = p2; sa3 = p3; sa4 = p4; sa5 = p5; sa6 = p6
        sb1 = q1; sb2 = q2; sb3 = q3; sb4 = q4; sb5 = q5; sb6 = q6
        # stage 2
        p1, p2, pu, p4, p5, p6 = sys_deriv(a1 + hh * p1, a2 + hh * p2, a3 + hh * p3,
                                           a4 + hh * p4, a5 + hh * p5, a6 + hh * p6, P, 0, sa)
        if two:
            q1, q2, qu, q4, q5, q6 = sys_deriv(b1 + hh * q1, b2 + hh * q2, b3 + hh * q3,
                                               b4 + hh * q4, b5 + hh * q5, b6 + hh * q6, P, 1, sb)
        p3, q3 = coil_rates(pu, qu, P, two, coupled, m)
        sa1 += 2.0 * p1; sa2 += 2.0 * p2; sa3 += 2.0 * p3
        sa4 += 2.0 * p4; sa5 += 2.0 * p5; sa6 += 2.0 * p6
        sb1 += 2.0 * q1; sb2 += 2.0 * q2; sb3 += 2.0 * q3
        sb4 += 2.0 * q4; sb5 += 2.0 * q5; sb6 += 2.0 * q6
        # stage 3
        p1, p2, pu, p4, p5, p6 = sys_deriv(a1 + hh * p1, a2 + hh * p2, a3 + hh * p3,
                                           a4 + hh * p4, a5 + hh * p5, a6 + hh * p6, P, 0, sa)
        if two:
            q1, q2, qu, q4, q5, q6 = sys_deriv(b1 + hh * q1, b2 + hh * q2, b3 + hh * q3,
                                               b4 + hh * q4, b5 + hh * q5, b6 + hh * q6, P, 1, sb)
        p3, q3 = coil_rates(pu, qu, P, two, coupled, m)
        sa1 += 2.0 * p1; sa2 += 2.0 * p2; sa3 += 2.0 * p3
        sa4 += 2.0 * p4; sa5 += 2.0 * p5; sa6 += 2.0 * p6
        sb1 += 2.0 * q1; sb2 += 2.0 * q2; sb3 += 2.0 * q3
        sb4 += 2.0 * q4; sb5 += 2.0 * q5; sb6 += 2.0 * q6
        # stage 4
        p1, p2, pu, p4, p5, p6 = sys_deriv(a1 + h * p1, a2 + h * p2, a3 + h * p3,
                                           a4 + h * p4, a5 + h * p5, a6 + h * p6, P, 0, sa)
        if two:
            q1, q2, qu, q4, q5, q6 = sys_deriv(b1 + h * q1, b2 + h * q2, b3 + h * q3,
                                               b4 + h * q4, b5 + h * q5, b6 + h * q6, P, 1, sb)
        p3, q3 = coil_rates(pu, qu, P, two, coupled, m)
        h6 = h / 6.0
        a1 = clamp_rail(a1 + h6 * (sa1 + p1), P, 0)
        a2 = clamp_rail(a2 + h6 * (sa2 + p2), P, 0)
        a3 += h6 * (sa3 + p3)
        a4 += h6 * (sa4 + p4)
        a5 += h6 * (sa5 + p5)
        a6 += h6 * (sa6 + p6)
        if two:
            b1 = clamp_rail(b1 + h6 * (sb1 + q1), P, 1)
            b2 = clamp_rail(b2 + h6 * (sb2 + q2), P, 1)
            b3 += h6 * (sb3 + q3)
            b4 += h6 * (sb4 + q4)
            b5 += h6 * (sb5 + q5)
            b6 += h6 * (sb6 + q6)
        t = t_new
        steps += 1
        if steps & 1023 == 0 or t >= t_stop:
            if not (math.isfinite(a1 + a2 + a3 + a4 + a5 + a6)
                    and math.isfinite(b1 + b2 + b3 + b4 + b5 + b6)):
                status = STATUS_NONFINITE
                break

        for s in range(nsys):
            if s == 0:
                v1 = a1; v2 = a2; asy = a6; vdp = vda_prev
            else:
                v1 = b1; v2 = b2; asy = b6; vdp = vdb_prev
            vd = v1 - v2
            if P[s, P_POWERED] > 0.5 and P[s, P_DETECT] > 0.5:
                # Schmitt comparator feeding the watchdog
                if det[s, D_CLK] < 0.5 and vd > P[s, P_HYS]:
                    det[s, D_CLK] = 1.0
                    det[s, D_LAST_EDGE] = t
                elif det[s, D_CLK] > 0.5 and vd < -P[s, P_HYS]:
                    det[s, D_CLK] = 0.0
                    det[s, D_LAST_EDGE] = t
                if det[s, D_MISS] < 0.5 and t - det[s, D_LAST_EDGE] > P[s, P_TIMEOUT]:
                    det[s, D_MISS] = 1.0
                    det[s, D_MISS_T] = t
                if abs(asy) > P[s, P_VASYM]:
                    if det[s, D_ASYM_SINCE] < 0.0:
                        det[s, D_ASYM_SINCE] = t
                    if det[s, D_ASYM] < 0.5 and t - det[s, D_ASYM_SINCE] >= P[s, P_PERSIST]:
                        det[s, D_ASYM] = 1.0
                        det[s, D_ASYM_T] = t
                else:
                    det[s, D_ASYM_SINCE] = -1.0

            if P[s, P_POWERED] < 0.5:
                i1, i2 = pin_currents(v1, v2, P, s)
                ipin = max(abs(i1), abs(i2))
                if ipin > meas[s, M_MAXPIN]:
                    meas[s, M_MAXPIN] = ipin
                if t >= t_pin and ipin > meas[s, M_MAXPIN_MON]:
                    meas[s, M_MAXPIN_MON] = ipin
            if t > t_meas:
                i1, i2 = pin_currents(v1, v2, P, s)
                w = min(h, t - t_meas)
                meas[s, M_SUMV2] += 0.5 * (vdp * vdp + vd * vd) * w
                meas[s, M_SUMT] += w
                meas[s, M_SUMIDRV] += abs(i1) * w
                if abs(vd) > meas[s, M_PEAK]:
                    meas[s, M_PEAK] = abs(vd)
                if (vdp < 0.0 <= vd) or (vdp >= 0.0 > vd):
                    tc = t - h * vd / (vd - vdp) if vd != vdp else t
                    if tc >= t_meas:
                        meas[s, M_NCROSS] += 1.0
                        if vdp < 0.0:
                            if meas[s, M_NRISE] == 0.0:
                                meas[s, M_TFIRST] = tc
                            meas[s, M_TLAST] = tc
                            meas[s, M_NRISE] += 1.0

        if on_grid:
            if n_next % dec == 0 and rec_i < rec_t.shape[0]:
                x[X_V1] = a1; x[X_V2] = a2; x[X_IL] = a3
                x[X_VDC] = a4; x[X_VR1] = a5; x[X_ASYM] = a6
                if two:
                    x[NS + X_V1] = b1; x[NS + X_V2] = b2; x[NS + X_IL] = b3
                    x[NS + X_VDC] = b4; x[NS + X_VR1] = b5; x[NS + X_ASYM] = b6
                rec_i = record_sample(x, P, nsys, det, rec_t, rec, rec_i, t)
            n_next += 1
    x[X_V1] = a1; x[X_V2] = a2; x[X_IL] = a3
    x[X_VDC] = a4; x[X_VR1] = a5; x[X_ASYM] = a6
    if two:
        x[NS + X_V1] = b1; x[NS + X_V2] = b2; x[NS + X_IL] = b3
        x[NS + X_VDC] = b4; x[NS + X_VR1] = b5; x[NS + X_ASYM] = b6
    return t, n_next, rec_i, status
