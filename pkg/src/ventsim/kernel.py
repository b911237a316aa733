"""Low-level circuit kernel: RHS, pressure recovery, implicit Newton step.

State vector (9 floats):

    0 z_l   lung elastic recoil pressure (alveolar - pleural), cmH2O; the
            lung's stored charge is f_l(z_l) + C_PAR*z_l
    1 z_c   collapsible-airway transmural pressure, cmH2O; the collapsible
            node's stored charge is f_c(z_c) + C_PAR*z_c. Keeping pressures
            as states avoids inverting curves that saturate to within float
            resolution of their ceilings at high driving pressures.
    2 V_ve  viscoelastic (Kelvin) capacitor charge, L
    3 V_cw  chest wall volume, L (integrated separately so the series-charge
            constraint is a meaningful solver-quality check, not a tautology;
            the fidelity mode's initialization source injects here)
    4 q_i   inspiratory limb compliance charge, L
    5 q_e   expiratory limb compliance charge, L
    6 i_i   inspiratory limb inertance current, L/s (positive toward sensor)
    7 i_e   expiratory limb inertance current, L/s (positive toward sensor)
    8 vol   integrated sensor flow, L (pure output state)

C_PAR is a parasitic shunt capacitance at the collapsible node (1e-8
L/cmH2O): purely a numerical regularization, far below every model
compliance and acceptance tolerance, in the same spirit as the smooth diode
blend band.

All node pressures are closed-form in the state, so the network reduces to a
stiff ODE with no algebraic loop. The implicit step solves
y = y_ref + gamma*f(y) (trapezoidal or variable-step BDF2 residual) by
damped Newton; the nonlinear elements are re-linearized through an exact
analytic Jacobian every iteration.

Everything here is numba-jitted when numba is importable; the same code runs
un-jitted (slower) otherwise.
"""

from __future__ import annotations

import math

import numpy as np

try:  # pragma: no cover - exercised implicitly by every solver test
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


NSTATE = 9
C_PAR = 1e-8  # L/cmH2O parasitic compliance at the collapsible node

# parameter-vector layout
(P_RV, P_TLC, P_ACW, P_BCW, P_AL, P_BL, P_DL, P_KL, P_AS, P_BS, P_KS, P_VSTAR,
 P_VCMAX, P_AC, P_BC, P_DC, P_KC, P_AU, P_KU, P_RVE, P_CVE, P_KIND,
 P_ETTK1, P_ETTK2, P_IK1, P_IK2, P_IL, P_IC, P_EK1, P_EK2, P_EL, P_EC,
 P_DON, P_DOFF, P_BAND, P_RDON, P_RD, P_PIP) = range(38)
NPARAM = 38

# input-vector layout: drive pressure, source values, switch resistances
I_DRIVE, I_SRCI, I_SRCE, I_RSWI, I_RSWE = range(5)
NINPUT = 5

_MARGIN = 1e-9


@njit(cache=True)
def feasible(y, prm):
    """States strictly inside the open domains of the compliance curves."""
    span = prm[P_TLC] - prm[P_RV]
    if not (prm[P_RV] + _MARGIN < y[3] < prm[P_RV] + span / 0.99 - _MARGIN):
        return False
    if not (-100.0 < y[1] < 400.0):  # collapsible transmural pressure window
        return False
    lo_l = -100.0
    if prm[P_KIND] > 0.5:  # logarithmic lung curve needs recoil above B_l
        lo_l = prm[P_BL] + 1e-9
    if not (lo_l < y[0] < 400.0):
        return False
    return True


@njit(cache=True)
def _clamped_exp(x):
    if x > 60.0:
        x = 60.0
    elif x < -60.0:
        x = -60.0
    return math.exp(x)


@njit(cache=True)
def collapsible_charge(z, prm):
    """Total stored volume at the collapsible node: printed curve + parasitic."""
    e = _clamped_exp(-prm[P_AC] * (z - prm[P_BC]))
    return prm[P_VCMAX] / (1.0 + e) ** prm[P_DC] + C_PAR * z


@njit(cache=True)
def lung_charge(z, prm):
    """Total stored lung volume for recoil pressure z: printed curve + parasitic."""
    if prm[P_KIND] > 0.5:
        v = math.log((z - prm[P_BL]) / prm[P_AL]) / prm[P_KL]
    else:
        v = prm[P_AL] / (1.0 + _clamped_exp(-prm[P_BL] * (z - prm[P_DL])))
    return v + C_PAR * z


@njit(cache=True)
def _lung_slope(z, prm):
    """dV_l/dz including the parasitic shunt."""
    if prm[P_KIND] > 0.5:
        return 1.0 / (prm[P_KL] * (z - prm[P_BL])) + C_PAR
    e = _clamped_exp(-prm[P_BL] * (z - prm[P_DL]))
    return prm[P_AL] * prm[P_BL] * e / (1.0 + e) ** 2 + C_PAR


@njit(cache=True)
def _diode_resistance(forward_drive, r_on, r_off, band):
    # smooth conductance blend across the transition band
    s = 1.0 / (1.0 + _clamped_exp(-forward_drive / band))
    g = 1.0 / r_off + (1.0 / r_on - 1.0 / r_off) * s
    return 1.0 / g


@njit(cache=True)
def _diode_resistance_deriv(forward_drive, r_on, r_off, band):
    """d(resistance)/d(forward_drive) of the smooth diode."""
    x = forward_drive / band
    if x > 60.0 or x < -60.0:
        return 0.0
    s = 1.0 / (1.0 + math.exp(-x))
    g_on = 1.0 / r_on
    g_off = 1.0 / r_off
    g = g_off + (g_on - g_off) * s
    dg = (g_on - g_off) * s * (1.0 - s) / band
    return -dg / (g * g)


@njit(cache=True)
def recover(y, prm, inp):
    """Node pressures and sensor flow from the state.

    Returns (p_sens, q_aw, p_ao, p_collapsible, p_alv, p_pl, p_A).
    """
    span = prm[P_TLC] - prm[P_RV]
    u_cw = prm[P_ACW] - prm[P_BCW] * math.log(span / (y[3] - prm[P_RV]) - 0.99)
    p_a = inp[I_DRIVE] + y[2] / prm[P_CVE]
    p_pl = p_a - u_cw
    z = y[1]
    x2 = p_pl + z
    p_alv = p_pl + y[0]
    q_aw = y[6] + y[7]
    r_u = prm[P_AU] + prm[P_KU] * abs(q_aw)
    e_c = _clamped_exp(-prm[P_AC] * (z - prm[P_BC]))
    r_c = prm[P_KC] * (1.0 + e_c) ** (2.0 * prm[P_DC])
    p_ao = x2 + (r_u + r_c) * q_aw
    p_sens = p_ao + (prm[P_ETTK1] + prm[P_ETTK2] * abs(q_aw)) * q_aw
    return p_sens, q_aw, p_ao, x2, p_alv, p_pl, p_a


@njit(cache=True)
def rhs(y, prm, inp):
    """Time derivative of the state (assumes feasible(y))."""
    p_sens, q_aw, p_ao, x2, p_alv, p_pl, p_a = recover(y, prm, inp)
    z_l = y[0]
    z = y[1]
    v_l = lung_charge(z_l, prm)
    r_s = prm[P_AS] * _clamped_exp(
        prm[P_KS] * (v_l - prm[P_RV]) / (prm[P_VSTAR] - prm[P_RV])) + prm[P_BS]
    q_s = (z - z_l) / r_s

    # node compliances: printed curve slopes + parasitic shunts
    lslope = _lung_slope(z_l, prm)
    e_c = _clamped_exp(-prm[P_AC] * (z - prm[P_BC]))
    cslope = (prm[P_VCMAX] * prm[P_DC] * prm[P_AC] * e_c
              / (1.0 + e_c) ** (prm[P_DC] + 1.0)) + C_PAR

    dy = np.empty(NSTATE)
    dy[0] = q_s / lslope
    dy[1] = (q_aw - q_s) / cslope
    i_rd = 0.0
    if prm[P_RDON] > 0.5:
        i_rd = (prm[P_PIP] - p_pl) / prm[P_RD]
    dy[3] = q_aw + i_rd
    dy[2] = dy[3] - (p_a - inp[I_DRIVE]) / prm[P_RVE]

    p_ni = y[4] / prm[P_IC]
    p_ne = y[5] / prm[P_EC]
    dpi = inp[I_SRCI] - p_ni
    r_di = _diode_resistance(dpi, prm[P_DON], prm[P_DOFF], prm[P_BAND])
    i_src_i = dpi / (inp[I_RSWI] + r_di)
    dpe = inp[I_SRCE] - p_ne
    r_de = _diode_resistance(-dpe, prm[P_DON], prm[P_DOFF], prm[P_BAND])
    i_src_e = dpe / (inp[I_RSWE] + r_de)
    dy[4] = i_src_i - y[6]
    dy[5] = i_src_e - y[7]
    dy[6] = (p_ni - p_sens - (prm[P_IK1] + prm[P_IK2] * abs(y[6])) * y[6]) / prm[P_IL]
    dy[7] = (p_ne - p_sens - (prm[P_EK1] + prm[P_EK2] * abs(y[7])) * y[7]) / prm[P_EL]
    dy[8] = q_aw
    return dy


@njit(cache=True)
def jac(y, prm, inp):
    """Exact Jacobian d(rhs)/d(state), re-derived from the element laws."""
    J = np.zeros((NSTATE, NSTATE))
    span = prm[P_TLC] - prm[P_RV]
    w = y[3] - prm[P_RV]
    # chest wall inverse slope: du_cw/dV_cw (negative for printed B_cw < 0)
    du = prm[P_BCW] * span / (w * (span - 0.99 * w))
    dppl_dvcw = -du           # p_pl = p_a - u_cw
    dppl_dvve = 1.0 / prm[P_CVE]

    z_l = y[0]
    z = y[1]
    v_l = lung_charge(z_l, prm)
    lslope = _lung_slope(z_l, prm)
    # second derivative of the lung charge wrt its recoil pressure
    if prm[P_KIND] > 0.5:
        dls = -1.0 / (prm[P_KL] * (z_l - prm[P_BL]) ** 2)
    else:
        e_l = _clamped_exp(-prm[P_BL] * (z_l - prm[P_DL]))
        dls = (prm[P_AL] * prm[P_BL] ** 2 * e_l * (e_l - 1.0)
               / (1.0 + e_l) ** 3)

    r_s = prm[P_AS] * _clamped_exp(
        prm[P_KS] * (v_l - prm[P_RV]) / (prm[P_VSTAR] - prm[P_RV])) + prm[P_BS]
    drs = (prm[P_AS] * prm[P_KS] / (prm[P_VSTAR] - prm[P_RV])
           * _clamped_exp(prm[P_KS] * (v_l - prm[P_RV]) / (prm[P_VSTAR] - prm[P_RV])))
    q_s = (z - z_l) / r_s
    dqs_dz = 1.0 / r_s
    dqs_dzl = (-1.0 - q_s * drs * lslope) / r_s

    q_aw = y[6] + y[7]
    sgn_q = 0.0
    if q_aw > 0.0:
        sgn_q = 1.0
    elif q_aw < 0.0:
        sgn_q = -1.0
    e_c = _clamped_exp(-prm[P_AC] * (z - prm[P_BC]))
    r_c = prm[P_KC] * (1.0 + e_c) ** (2.0 * prm[P_DC])
    drc_dz = (-2.0 * prm[P_DC] * prm[P_AC] * prm[P_KC] * e_c
              * (1.0 + e_c) ** (2.0 * prm[P_DC] - 1.0))
    r_u = prm[P_AU] + prm[P_KU] * abs(q_aw)
    r_ett = prm[P_ETTK1] + prm[P_ETTK2] * abs(q_aw)

    # p_sens partials (p_sens = p_pl + z + (r_u + r_c + r_ett)*q)
    s_vl = 0.0
    s_z = 1.0 + q_aw * drc_dz
    s_vve = dppl_dvve
    s_vcw = dppl_dvcw
    s_i = (r_u + r_c + r_ett) + abs(q_aw) * (prm[P_KU] + prm[P_ETTK2])

    # dy0 = q_s / lslope
    J[0, 0] = (dqs_dzl * lslope - q_s * dls) / (lslope * lslope)
    J[0, 1] = dqs_dz / lslope

    # dy1 = (q_aw - q_s)/cslope
    cslope = (prm[P_VCMAX] * prm[P_DC] * prm[P_AC] * e_c
              / (1.0 + e_c) ** (prm[P_DC] + 1.0)) + C_PAR
    # d(cslope)/dz through E: f'' of the printed curve
    dcs_dz = (-prm[P_VCMAX] * prm[P_DC] * prm[P_AC] ** 2 * e_c
              * (1.0 - prm[P_DC] * e_c) / (1.0 + e_c) ** (prm[P_DC] + 2.0))
    num = q_aw - q_s
    J[1, 0] = -dqs_dzl / cslope
    J[1, 1] = (-dqs_dz * cslope - num * dcs_dz) / (cslope * cslope)
    J[1, 6] = 1.0 / cslope
    J[1, 7] = 1.0 / cslope

    # dy3 = q_aw + i_rd
    J[3, 6] = 1.0
    J[3, 7] = 1.0
    if prm[P_RDON] > 0.5:
        J[3, 3] += -dppl_dvcw / prm[P_RD]
        J[3, 2] += -dppl_dvve / prm[P_RD]

    # dy2 = dy3 - V_ve/(C_ve R_ve)
    J[2, 6] = J[3, 6]
    J[2, 7] = J[3, 7]
    J[2, 3] = J[3, 3]
    J[2, 2] = J[3, 2] - 1.0 / (prm[P_CVE] * prm[P_RVE])

    # source branches
    dpi = inp[I_SRCI] - y[4] / prm[P_IC]
    r_di = _diode_resistance(dpi, prm[P_DON], prm[P_DOFF], prm[P_BAND])
    drdi = _diode_resistance_deriv(dpi, prm[P_DON], prm[P_DOFF], prm[P_BAND])
    denom_i = inp[I_RSWI] + r_di
    disrc_ddpi = (denom_i - dpi * drdi) / (denom_i * denom_i)
    J[4, 4] = disrc_ddpi * (-1.0 / prm[P_IC])
    J[4, 6] = -1.0

    dpe = inp[I_SRCE] - y[5] / prm[P_EC]
    r_de = _diode_resistance(-dpe, prm[P_DON], prm[P_DOFF], prm[P_BAND])
    drde = -_diode_resistance_deriv(-dpe, prm[P_DON], prm[P_DOFF], prm[P_BAND])
    denom_e = inp[I_RSWE] + r_de
    disrc_ddpe = (denom_e - dpe * drde) / (denom_e * denom_e)
    J[5, 5] = disrc_ddpe * (-1.0 / prm[P_EC])
    J[5, 7] = -1.0

    # limb currents: di = (p_n - p_sens - rohrer(i)*i)/L
    li = prm[P_IL]
    J[6, 4] = (1.0 / prm[P_IC]) / li
    J[6, 0] = -s_vl / li
    J[6, 1] = -s_z / li
    J[6, 2] = -s_vve / li
    J[6, 3] = -s_vcw / li
    J[6, 6] = (-s_i - (prm[P_IK1] + 2.0 * prm[P_IK2] * abs(y[6]))) / li
    J[6, 7] = -s_i / li

    le = prm[P_EL]
    J[7, 5] = (1.0 / prm[P_EC]) / le
    J[7, 0] = -s_vl / le
    J[7, 1] = -s_z / le
    J[7, 2] = -s_vve / le
    J[7, 3] = -s_vcw / le
    J[7, 6] = -s_i / le
    J[7, 7] = (-s_i - (prm[P_EK1] + 2.0 * prm[P_EK2] * abs(y[7]))) / le

    # dy8 = q_aw
    J[8, 6] = 1.0
    J[8, 7] = 1.0
    return J


@njit(cache=True)
def _residual(y, y_ref, gamma, prm, inp):
    return y - y_ref - gamma * rhs(y, prm, inp)


@njit(cache=True)
def newton_solve(y_start, y_ref, gamma, prm, inp, tol, maxit):
    """Damped Newton on F(y) = y - y_ref - gamma f(y) with the exact Jacobian.

    The line search rejects trial states outside the compliance-curve domains
    and halves the step until the residual norm drops.
    """
    n = NSTATE
    y = y_start.copy()
    if not feasible(y, prm):
        return y, False
    f_val = _residual(y, y_ref, gamma, prm, inp)
    norm = np.max(np.abs(f_val))
    for _ in range(maxit):
        if norm < tol:
            return y, True
        jm = -gamma * jac(y, prm, inp)
        for i in range(n):
            jm[i, i] += 1.0
        ok = True
        for i in range(n):
            for j in range(n):
                if not math.isfinite(jm[i, j]):
                    ok = False
        if not ok:
            return y, False
        dy = np.linalg.solve(jm, -f_val)
        if not np.all(np.isfinite(dy)):
            return y, False
        lam = 1.0
        accepted = False
        for _ls in range(12):
            y_trial = y + lam * dy
            if feasible(y_trial, prm):
                f_trial = _residual(y_trial, y_ref, gamma, prm, inp)
                norm_trial = np.max(np.abs(f_trial))
                if norm_trial < norm or norm_trial < tol:
                    y = y_trial
                    f_val = f_trial
                    norm = norm_trial
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            return y, False
    return y, norm < tol


@njit(cache=True)
def step_tr(y_n, f_n, h, prm, inp_np1, tol, maxit):
    """One trapezoidal step (used to start and restart after events)."""
    y_ref = y_n + 0.5 * h * f_n
    return newton_solve(y_n.copy(), y_ref, 0.5 * h, prm, inp_np1, tol, maxit)


@njit(cache=True)
def step_bdf2(y_n, y_nm1, h, h_prev, prm, inp_np1, tol, maxit):
    """One variable-step BDF2 step with history (y_nm1, h_prev)."""
    rho = h / h_prev
    denom = 1.0 + 2.0 * rho
    c1 = (1.0 + rho) * (1.0 + rho) / denom
    c2 = rho * rho / denom
    gamma = h * (1.0 + rho) / denom
    y_ref = c1 * y_n - c2 * y_nm1
    y_pred = y_n + rho * (y_n - y_nm1)
    return newton_solve(y_pred, y_ref, gamma, prm, inp_np1, tol, maxit)
