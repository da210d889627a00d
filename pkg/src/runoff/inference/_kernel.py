"""Compiled Metropolis-within-Gibbs sweep for one chain.

All latent effects live in one flat vector ``theta``; site ``i`` touches the
observed cells ``cell[ptr[i]:ptr[i+1]]`` with coefficients ``coef[...]``.
Block ids index ``offsets``: mu, gamma, alpha, beta, alpha_ts, beta_ds,
delta_ind, delta_iar; block 8 is phi.
"""

import math

import numpy as np
from numba import njit

MU, GAMMA, ALPHA, BETA, ATS, BDS, DIND, DIAR, PHI = range(9)
N_BLOCKS = 9
TAU_FLOOR = 1e-300


@njit(cache=True, nogil=True)
def _logaddexp(x, y):
    if x > y:
        return x + math.log1p(math.exp(y - x))
    return y + math.log1p(math.exp(x - y))


@njit(cache=True, nogil=True)
def _cell(y, eta, phi, log_phi):
    # eta-dependent part of the NegBin log pmf
    return y * eta - (y + phi) * _logaddexp(eta, log_phi)


@njit(cache=True, nogil=True)
def _delta_loglik(i, eps, y, eta, ptr, cell, coef, phi, log_phi):
    out = 0.0
    for k in range(ptr[i], ptr[i + 1]):
        c = cell[k]
        shift = eps * coef[k]
        out += _cell(y[c], eta[c] + shift, phi, log_phi) - _cell(y[c], eta[c], phi, log_phi)
    return out


@njit(cache=True, nogil=True)
def _apply_shift(i, eps, eta, ptr, cell, coef):
    for k in range(ptr[i], ptr[i + 1]):
        eta[cell[k]] += eps * coef[k]


@njit(cache=True, nogil=True)
def _rw_local(theta, start, length, k, value, tau, anchor):
    out = 0.0
    if k == 0:
        out -= 0.5 * anchor * value * value
    else:
        diff = value - theta[start + k - 1]
        out -= 0.5 * tau * diff * diff
    if k < length - 1:
        diff = theta[start + k + 1] - value
        out -= 0.5 * tau * diff * diff
    return out


@njit(cache=True, nogil=True)
def _phi_terms(y, eta, phi, n_obs):
    log_phi = math.log(phi)
    lg_phi = math.lgamma(phi)
    out = 0.0
    for c in range(n_obs):
        out += math.lgamma(y[c] + phi) - lg_phi + phi * log_phi - (y[c] + phi) * _logaddexp(eta[c], log_phi)
    return out


@njit(cache=True, nogil=True)
def _recompute_eta(theta, eta, ptr, cell, coef, n_theta):
    eta[:] = 0.0
    for i in range(n_theta):
        v = theta[i]
        if v != 0.0:
            for k in range(ptr[i], ptr[i + 1]):
                eta[cell[k]] += v * coef[k]


@njit(cache=True, nogil=True)
def _iar_quadratic(theta, off, S, nb_ptr, nb_idx):
    q = 0.0
    for s in range(S):
        for k in range(nb_ptr[s], nb_ptr[s + 1]):
            j = nb_idx[k]
            if j > s:
                diff = theta[off + s] - theta[off + j]
                q += diff * diff
    return q


@njit(cache=True, nogil=True)
def _line_gibbs(rng, w_sum, wr_sum):
    # exact draw along a likelihood-invariant direction: density prop. to exp(-w/2 (c - r)^2) summed
    return wr_sum / w_sum + rng.normal() / math.sqrt(w_sum)


@njit(cache=True, nogil=True)
def run_chain(
    rng,
    y, ptr, cell, coef,
    theta, tau, phi_arr, scales,
    block_of, sites, offsets, dims,
    consts, flags, fixed,
    nb_ptr, nb_idx, comp_ptr, comp_members, comp_id, rank,
    n_iter, burn, thin, window, target,
    out_theta, out_tau, out_phi, out_iter, acc_stats, scale_hist,
):
    T, K, S, p = dims[0], dims[1], dims[2], dims[3]
    anchor, inv_vmu, a0, b0 = consts[0], consts[1], consts[2], consts[3]
    has_ats, has_bds, has_ind, has_iar, absorb_mu = flags[0], flags[1], flags[2], flags[3], flags[4]
    n_theta = theta.shape[0]
    n_obs = y.shape[0]
    o_mu, o_gam, o_al, o_be = offsets[0], offsets[1], offsets[2], offsets[3]
    o_ats, o_bds, o_ind, o_iar = offsets[4], offsets[5], offsets[6], offsets[7]

    eta = np.zeros(n_obs)
    win_acc = np.zeros(n_theta + 1)
    batch = 0
    kept = 0
    phi_site = n_theta

    for it in range(n_iter):
        post = it >= burn
        _recompute_eta(theta, eta, ptr, cell, coef, n_theta)
        phi = phi_arr[0]
        log_phi = math.log(phi)

        # (a) single-site random-walk Metropolis on latent effects
        for idx in range(sites.shape[0]):
            i = sites[idx]
            blk = block_of[i]
            eps = rng.normal() * scales[i]
            old = theta[i]
            new = old + eps
            if blk == DIAR:
                s = i - o_iar
                lo, hi = comp_ptr[comp_id[s]], comp_ptr[comp_id[s] + 1]
                n_c = hi - lo
                if n_c < 2:
                    continue
                dlp = 0.0
                for k in range(nb_ptr[s], nb_ptr[s + 1]):
                    diff = old - theta[o_iar + nb_idx[k]]
                    dlp -= 0.5 * tau[5] * ((diff + eps) * (diff + eps) - diff * diff)
                lev = eps / n_c
                if absorb_mu:
                    m = theta[o_mu]
                    dlp -= 0.5 * inv_vmu * ((m + lev) * (m + lev) - m * m)
                else:
                    for k in range(lo, hi):
                        x = theta[o_ind + comp_members[k]]
                        dlp -= 0.5 * tau[4] * ((x + lev) * (x + lev) - x * x)
            elif blk == MU or blk == GAMMA:
                dlp = -0.5 * inv_vmu * (new * new - old * old)
            elif blk == ALPHA:
                dlp = (_rw_local(theta, o_al, T, i - o_al, new, tau[0], anchor)
                       - _rw_local(theta, o_al, T, i - o_al, old, tau[0], anchor))
            elif blk == BETA:
                dlp = (_rw_local(theta, o_be, K, i - o_be, new, tau[1], anchor)
                       - _rw_local(theta, o_be, K, i - o_be, old, tau[1], anchor))
            elif blk == ATS:
                dlp = -0.5 * tau[2] * (new * new - old * old)
            elif blk == BDS:
                dlp = -0.5 * tau[3] * (new * new - old * old)
            else:
                dlp = -0.5 * tau[4] * (new * new - old * old)
            dll = _delta_loglik(i, eps, y, eta, ptr, cell, coef, phi, log_phi)
            ok = math.log(rng.random()) < dll + dlp
            if ok:
                _apply_shift(i, eps, eta, ptr, cell, coef)
                if blk == DIAR:
                    s = i - o_iar
                    lo, hi = comp_ptr[comp_id[s]], comp_ptr[comp_id[s] + 1]
                    lev = eps / (hi - lo)
                    theta[i] = new
                    for k in range(lo, hi):
                        theta[o_iar + comp_members[k]] -= lev
                    if absorb_mu:
                        theta[o_mu] += lev
                    else:
                        for k in range(lo, hi):
                            theta[o_ind + comp_members[k]] += lev
                else:
                    theta[i] = new
                win_acc[i] += 1.0
            if post:
                acc_stats[blk, 0] += ok
                acc_stats[blk, 1] += 1

        # re-centre the IAR block per component; eta is rebuilt next sweep
        if has_iar:
            for c in range(comp_ptr.shape[0] - 1):
                lo, hi = comp_ptr[c], comp_ptr[c + 1]
                mean = 0.0
                for k in range(lo, hi):
                    mean += theta[o_iar + comp_members[k]]
                mean /= hi - lo
                for k in range(lo, hi):
                    theta[o_iar + comp_members[k]] -= mean
                if absorb_mu:
                    theta[o_mu] += mean
                elif hi - lo > 1:
                    for k in range(lo, hi):
                        theta[o_ind + comp_members[k]] += mean

        # (a') exact Gibbs moves along likelihood-invariant level directions
        # mu <-> alpha level
        c = _line_gibbs(rng, inv_vmu + anchor, -theta[o_mu] * inv_vmu + theta[o_al] * anchor)
        theta[o_mu] += c
        for t in range(T):
            theta[o_al + t] -= c
        # mu <-> beta level
        c = _line_gibbs(rng, inv_vmu + anchor, -theta[o_mu] * inv_vmu + theta[o_be] * anchor)
        theta[o_mu] += c
        for d in range(K):
            theta[o_be + d] -= c
        # alpha level <-> beta level
        c = _line_gibbs(rng, 2.0 * anchor, (-theta[o_al] + theta[o_be]) * anchor)
        for t in range(T):
            theta[o_al + t] += c
        for d in range(K):
            theta[o_be + d] -= c
        if has_ind:
            w, wr = inv_vmu, -theta[o_mu] * inv_vmu
            for s in range(S):
                w += tau[4]
                wr += tau[4] * theta[o_ind + s]
            c = _line_gibbs(rng, w, wr)
            theta[o_mu] += c
            for s in range(S):
                theta[o_ind + s] -= c
        if has_ats:
            for t in range(T):
                at = theta[o_al + t]
                if t == 0:
                    w, wr = anchor, -at * anchor
                else:
                    w, wr = tau[0], (theta[o_al + t - 1] - at) * tau[0]
                if t < T - 1:
                    w += tau[0]
                    wr += (theta[o_al + t + 1] - at) * tau[0]
                for s in range(S):
                    w += tau[2]
                    wr += tau[2] * theta[o_ats + t * S + s]
                c = _line_gibbs(rng, w, wr)
                theta[o_al + t] += c
                for s in range(S):
                    theta[o_ats + t * S + s] -= c
        if has_bds:
            for d in range(K):
                bd = theta[o_be + d]
                if d == 0:
                    w, wr = anchor, -bd * anchor
                else:
                    w, wr = tau[1], (theta[o_be + d - 1] - bd) * tau[1]
                if d < K - 1:
                    w += tau[1]
                    wr += (theta[o_be + d + 1] - bd) * tau[1]
                for s in range(S):
                    w += tau[3]
                    wr += tau[3] * theta[o_bds + d * S + s]
                c = _line_gibbs(rng, w, wr)
                theta[o_be + d] += c
                for s in range(S):
                    theta[o_bds + d * S + s] -= c

        # (b) conjugate Gamma updates of the precisions
        if not fixed[0]:
            ss = 0.0
            for t in range(1, T):
                diff = theta[o_al + t] - theta[o_al + t - 1]
                ss += diff * diff
            tau[0] = max(rng.gamma(a0 + 0.5 * (T - 1), 1.0 / (b0 + 0.5 * ss)), TAU_FLOOR)
        if not fixed[1]:
            ss = 0.0
            for d in range(1, K):
                diff = theta[o_be + d] - theta[o_be + d - 1]
                ss += diff * diff
            tau[1] = max(rng.gamma(a0 + 0.5 * (K - 1), 1.0 / (b0 + 0.5 * ss)), TAU_FLOOR)
        if has_ats and not fixed[2]:
            ss = 0.0
            for k in range(T * S):
                ss += theta[o_ats + k] * theta[o_ats + k]
            tau[2] = max(rng.gamma(a0 + 0.5 * T * S, 1.0 / (b0 + 0.5 * ss)), TAU_FLOOR)
        if has_bds and not fixed[3]:
            ss = 0.0
            for k in range(K * S):
                ss += theta[o_bds + k] * theta[o_bds + k]
            tau[3] = max(rng.gamma(a0 + 0.5 * K * S, 1.0 / (b0 + 0.5 * ss)), TAU_FLOOR)
        if has_ind and not fixed[4]:
            ss = 0.0
            for s in range(S):
                ss += theta[o_ind + s] * theta[o_ind + s]
            tau[4] = max(rng.gamma(a0 + 0.5 * S, 1.0 / (b0 + 0.5 * ss)), TAU_FLOOR)
        if has_iar and not fixed[5]:
            ss = _iar_quadratic(theta, o_iar, S, nb_ptr, nb_idx)
            tau[5] = max(rng.gamma(a0 + 0.5 * rank, 1.0 / (b0 + 0.5 * ss)), TAU_FLOOR)

        # (c) log-scale random walk on phi
        if not fixed[6]:
            _recompute_eta(theta, eta, ptr, cell, coef, n_theta)
            phi = phi_arr[0]
            step = rng.normal() * scales[phi_site]
            phi_new = phi * math.exp(step)
            dlp = (_phi_terms(y, eta, phi_new, n_obs) - _phi_terms(y, eta, phi, n_obs)
                   + (a0 - 1.0) * step - b0 * (phi_new - phi) + step)
            ok = math.log(rng.random()) < dlp
            if ok:
                phi_arr[0] = phi_new
                win_acc[phi_site] += 1.0
            if post:
                acc_stats[PHI, 0] += ok
                acc_stats[PHI, 1] += 1

        # adaptation, frozen once burn-in is over
        if (it + 1) % window == 0:
            w_idx = (it + 1) // window - 1
            if it < burn:
                batch += 1
                kappa = batch ** -0.6
                for idx in range(sites.shape[0]):
                    i = sites[idx]
                    scales[i] *= math.exp(kappa * (win_acc[i] / window - target))
                if not fixed[6]:
                    scales[phi_site] *= math.exp(kappa * (win_acc[phi_site] / window - target))
            win_acc[:] = 0.0
            if w_idx < scale_hist.shape[0]:
                sums = np.zeros(N_BLOCKS)
                cnt = np.zeros(N_BLOCKS)
                for idx in range(sites.shape[0]):
                    i = sites[idx]
                    sums[block_of[i]] += math.log(scales[i])
                    cnt[block_of[i]] += 1.0
                sums[PHI] += math.log(scales[phi_site])
                cnt[PHI] += 1.0
                for bb in range(N_BLOCKS):
                    scale_hist[w_idx, bb] = sums[bb] / cnt[bb] if cnt[bb] > 0 else np.nan

        if post and (it - burn + 1) % thin == 0 and kept < out_theta.shape[0]:
            out_theta[kept, :] = theta
            out_tau[kept, :] = tau
            out_phi[kept] = phi_arr[0]
            out_iter[kept] = it + 1
            kept += 1
    return kept
