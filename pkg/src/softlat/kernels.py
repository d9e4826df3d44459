"""Numba kernels for the spring and mass passes.

Every kernel body is written once and compiled twice, with and without
``parallel=True``; the serial and parallel variants therefore execute the
same floating-point operations per object. Forces respect strict IEEE
semantics (no fastmath), which is what makes the serial and slotted
parallel backends bit-identical.

The per-spring force computation is duplicated verbatim in the three
spring kernels (a shared njit helper defeats LLVM optimization of the hot
loop); keep the copies in sync.

Slot layout for slotted accumulation: spring ``s`` writes its force into
flat slot ``2*s`` (endpoint 1) and ``2*s + 1`` (endpoint 2). The per-mass
reduction visits slots in ascending order, which equals ascending spring
order, which equals the serial accumulation order.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

# constraint kind codes shared with the engine
KIND_DIRECTION = 1
KIND_PLANE = 2


def _spring_linear_serial(s_n, s_alive, s_m1, s_m2, s_m1gen, s_m2gen,
                          m_alive, m_gen, pos, fext,
                          s_rest, s_k, s_diam, s_yield,
                          act_mode, act_amp, act_freq, act_off, act_per,
                          custom_factor, s_degen, sim_t, counters):
    broken = 0
    invalid = 0
    degen_new = 0
    for s in range(s_n):
        if not s_alive[s]:
            continue
        i = s_m1[s]
        j = s_m2[s]
        if ((not m_alive[i]) or (not m_alive[j])
                or m_gen[i] != s_m1gen[s] or m_gen[j] != s_m2gen[s]):
            s_alive[s] = False
            invalid += 1
            continue
        dx = pos[j, 0] - pos[i, 0]
        dy = pos[j, 1] - pos[i, 1]
        dz = pos[j, 2] - pos[i, 2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        if length == 0.0:
            if not s_degen[s]:
                s_degen[s] = True
                degen_new += 1
            continue
        factor = 1.0
        mode = act_mode[s]
        if mode == 1:
            t = (sim_t - act_off[s]) % act_per[s]
            factor = 1.0 + act_amp[s] * np.sin(act_freq[s] * t)
        elif mode == 2:
            if sim_t >= act_off[s]:
                t = (sim_t - act_off[s]) % act_per[s]
                factor = 1.0 + act_amp[s] * np.sin(act_freq[s] * t)
        elif mode == 3:
            factor = custom_factor[s]
        fmag = s_k[s] * (length - factor * s_rest[s])
        scale = fmag / length
        fx = scale * dx
        fy = scale * dy
        fz = scale * dz
        fext[i, 0] += fx
        fext[i, 1] += fy
        fext[i, 2] += fz
        fext[j, 0] -= fx
        fext[j, 1] -= fy
        fext[j, 2] -= fz
        y = s_yield[s]
        if y != np.inf:
            area = 0.25 * np.pi * s_diam[s] * s_diam[s]
            mag = fmag if fmag >= 0.0 else -fmag
            if mag > y * area:
                s_alive[s] = False
                broken += 1
    counters[0] += broken
    counters[1] += invalid
    counters[2] += degen_new


def _spring_linear_chunked(s_n, s_alive, s_m1, s_m2, s_m1gen, s_m2gen,
                           m_alive, m_gen, pos, bufs,
                           s_rest, s_k, s_diam, s_yield,
                           act_mode, act_amp, act_freq, act_off, act_per,
                           custom_factor, s_degen, sim_t, worker_counters,
                           n_workers):
    # each worker accumulates into a private buffer; the combine kernel sums
    # buffers in worker order (deterministic, reassociated vs serial)
    chunk = (s_n + n_workers - 1) // n_workers
    for w in prange(n_workers):
        lo = w * chunk
        hi = min(s_n, lo + chunk)
        bufs[w, :, :] = 0.0
        broken = 0
        invalid = 0
        degen_new = 0
        for s in range(lo, hi):
            if not s_alive[s]:
                continue
            i = s_m1[s]
            j = s_m2[s]
            if ((not m_alive[i]) or (not m_alive[j])
                    or m_gen[i] != s_m1gen[s] or m_gen[j] != s_m2gen[s]):
                s_alive[s] = False
                invalid += 1
                continue
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            dz = pos[j, 2] - pos[i, 2]
            length = np.sqrt(dx * dx + dy * dy + dz * dz)
            if length == 0.0:
                if not s_degen[s]:
                    s_degen[s] = True
                    degen_new += 1
                continue
            factor = 1.0
            mode = act_mode[s]
            if mode == 1:
                t = (sim_t - act_off[s]) % act_per[s]
                factor = 1.0 + act_amp[s] * np.sin(act_freq[s] * t)
            elif mode == 2:
                if sim_t >= act_off[s]:
                    t = (sim_t - act_off[s]) % act_per[s]
                    factor = 1.0 + act_amp[s] * np.sin(act_freq[s] * t)
            elif mode == 3:
                factor = custom_factor[s]
            fmag = s_k[s] * (length - factor * s_rest[s])
            scale = fmag / length
            fx = scale * dx
            fy = scale * dy
            fz = scale * dz
            bufs[w, i, 0] += fx
            bufs[w, i, 1] += fy
            bufs[w, i, 2] += fz
            bufs[w, j, 0] -= fx
            bufs[w, j, 1] -= fy
            bufs[w, j, 2] -= fz
            y = s_yield[s]
            if y != np.inf:
                area = 0.25 * np.pi * s_diam[s] * s_diam[s]
                mag = fmag if fmag >= 0.0 else -fmag
                if mag > y * area:
                    s_alive[s] = False
                    broken += 1
        worker_counters[w, 0] = broken
        worker_counters[w, 1] = invalid
        worker_counters[w, 2] = degen_new


def _combine_buffers(m_n, fext, bufs, n_workers):
    for i in prange(m_n):
        for w in range(n_workers):
            fext[i, 0] += bufs[w, i, 0]
            fext[i, 1] += bufs[w, i, 1]
            fext[i, 2] += bufs[w, i, 2]


def _spring_slotted(s_n, s_alive, s_m1, s_m2, s_m1gen, s_m2gen,
                    m_alive, m_gen, pos, slot_force,
                    s_rest, s_k, s_diam, s_yield,
                    act_mode, act_amp, act_freq, act_off, act_per,
                    custom_factor, s_degen, sim_t, counters):
    broken = 0
    invalid = 0
    degen_new = 0
    for s in prange(s_n):
        a = 2 * s
        b = 2 * s + 1
        slot_force[a, 0] = 0.0
        slot_force[a, 1] = 0.0
        slot_force[a, 2] = 0.0
        slot_force[b, 0] = 0.0
        slot_force[b, 1] = 0.0
        slot_force[b, 2] = 0.0
        if not s_alive[s]:
            continue
        i = s_m1[s]
        j = s_m2[s]
        if ((not m_alive[i]) or (not m_alive[j])
                or m_gen[i] != s_m1gen[s] or m_gen[j] != s_m2gen[s]):
            s_alive[s] = False
            invalid += 1
            continue
        dx = pos[j, 0] - pos[i, 0]
        dy = pos[j, 1] - pos[i, 1]
        dz = pos[j, 2] - pos[i, 2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        if length == 0.0:
            if not s_degen[s]:
                s_degen[s] = True
                degen_new += 1
            continue
        factor = 1.0
        mode = act_mode[s]
        if mode == 1:
            t = (sim_t - act_off[s]) % act_per[s]
            factor = 1.0 + act_amp[s] * np.sin(act_freq[s] * t)
        elif mode == 2:
            if sim_t >= act_off[s]:
                t = (sim_t - act_off[s]) % act_per[s]
                factor = 1.0 + act_amp[s] * np.sin(act_freq[s] * t)
        elif mode == 3:
            factor = custom_factor[s]
        fmag = s_k[s] * (length - factor * s_rest[s])
        scale = fmag / length
        fx = scale * dx
        fy = scale * dy
        fz = scale * dz
        slot_force[a, 0] = fx
        slot_force[a, 1] = fy
        slot_force[a, 2] = fz
        slot_force[b, 0] = -fx
        slot_force[b, 1] = -fy
        slot_force[b, 2] = -fz
        y = s_yield[s]
        if y != np.inf:
            area = 0.25 * np.pi * s_diam[s] * s_diam[s]
            mag = fmag if fmag >= 0.0 else -fmag
            if mag > y * area:
                s_alive[s] = False
                broken += 1
    counters[0] += broken
    counters[1] += invalid
    counters[2] += degen_new


def _reduce_slots(m_n, fext, slot_force, red_off, red_idx):
    for i in prange(m_n):
        ax = 0.0
        ay = 0.0
        az = 0.0
        for kk in range(red_off[i], red_off[i + 1]):
            sl = red_idx[kk]
            ax += slot_force[sl, 0]
            ay += slot_force[sl, 1]
            az += slot_force[sl, 2]
        fext[i, 0] += ax
        fext[i, 1] += ay
        fext[i, 2] += az


def _mass_pass(m_n, m_alive, m_fixed, pos, vel, acc, fext, load, m_arr,
               gx, gy, gz, drag, planes, balls,
               gc_kind, gc_vec, lc_off, lc_kind, lc_vec,
               dt, v_stick, err_slot):
    n_planes = planes.shape[0]
    n_balls = balls.shape[0]
    n_gc = gc_kind.shape[0]
    for i in prange(m_n):
        if not m_alive[i]:
            continue
        if m_fixed[i]:
            vel[i, 0] = 0.0
            vel[i, 1] = 0.0
            vel[i, 2] = 0.0
            acc[i, 0] = 0.0
            acc[i, 1] = 0.0
            acc[i, 2] = 0.0
            fext[i, 0] = 0.0
            fext[i, 1] = 0.0
            fext[i, 2] = 0.0
            continue
        mm = m_arr[i]
        px = pos[i, 0]
        py = pos[i, 1]
        pz = pos[i, 2]
        vx = vel[i, 0]
        vy = vel[i, 1]
        vz = vel[i, 2]
        fx = fext[i, 0] + load[i, 0] + mm * gx - drag * vx
        fy = fext[i, 1] + load[i, 1] + mm * gy - drag * vy
        fz = fext[i, 2] + load[i, 2] + mm * gz - drag * vz
        for p in range(n_planes):
            nx = planes[p, 0]
            ny = planes[p, 1]
            nz = planes[p, 2]
            depth = planes[p, 3] - (px * nx + py * ny + pz * nz)
            if depth > 0.0:
                nmag = planes[p, 4] * depth
                fx += nmag * nx
                fy += nmag * ny
                fz += nmag * nz
                # Coulomb friction against the applied tangential force
                vn = vx * nx + vy * ny + vz * nz
                tvx = vx - vn * nx
                tvy = vy - vn * ny
                tvz = vz - vn * nz
                tv = np.sqrt(tvx * tvx + tvy * tvy + tvz * tvz)
                fn = fx * nx + fy * ny + fz * nz
                tfx = fx - fn * nx
                tfy = fy - fn * ny
                tfz = fz - fn * nz
                tf = np.sqrt(tfx * tfx + tfy * tfy + tfz * tfz)
                if tv < v_stick and tf <= planes[p, 5] * nmag:
                    fx -= tfx
                    fy -= tfy
                    fz -= tfz
                elif tv >= v_stick:
                    sc = planes[p, 6] * nmag / tv
                    fx -= sc * tvx
                    fy -= sc * tvy
                    fz -= sc * tvz
                elif tf > 0.0:
                    sc = planes[p, 6] * nmag / tf
                    fx -= sc * tfx
                    fy -= sc * tfy
                    fz -= sc * tfz
        for b in range(n_balls):
            ddx = px - balls[b, 0]
            ddy = py - balls[b, 1]
            ddz = pz - balls[b, 2]
            dist = np.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
            depth = balls[b, 3] - dist
            if depth > 0.0 and dist > 0.0:
                sc = balls[b, 4] * depth / dist
                fx += sc * ddx
                fy += sc * ddy
                fz += sc * ddz
        ax = fx / mm
        ay = fy / mm
        az = fz / mm
        vx += ax * dt
        vy += ay * dt
        vz += az * dt
        for g in range(n_gc):
            cx = gc_vec[g, 0]
            cy = gc_vec[g, 1]
            cz = gc_vec[g, 2]
            vdot = vx * cx + vy * cy + vz * cz
            if gc_kind[g] == 1:
                vx = vdot * cx
                vy = vdot * cy
                vz = vdot * cz
            else:
                vx -= vdot * cx
                vy -= vdot * cy
                vz -= vdot * cz
        for kk in range(lc_off[i], lc_off[i + 1]):
            cx = lc_vec[kk, 0]
            cy = lc_vec[kk, 1]
            cz = lc_vec[kk, 2]
            vdot = vx * cx + vy * cy + vz * cz
            if lc_kind[kk] == 1:
                vx = vdot * cx
                vy = vdot * cy
                vz = vdot * cz
            else:
                vx -= vdot * cx
                vy -= vdot * cy
                vz -= vdot * cz
        px += vx * dt
        py += vy * dt
        pz += vz * dt
        pos[i, 0] = px
        pos[i, 1] = py
        pos[i, 2] = pz
        vel[i, 0] = vx
        vel[i, 1] = vy
        vel[i, 2] = vz
        acc[i, 0] = ax
        acc[i, 1] = ay
        acc[i, 2] = az
        fext[i, 0] = 0.0
        fext[i, 1] = 0.0
        fext[i, 2] = 0.0
        if not (np.isfinite(px) and np.isfinite(py) and np.isfinite(pz)
                and np.isfinite(vx) and np.isfinite(vy) and np.isfinite(vz)):
            err_slot[0] = i + 1


_OPTS = dict(cache=True, nogil=True)

spring_linear_serial = njit(**_OPTS)(_spring_linear_serial)
spring_linear_chunked = njit(parallel=True, **_OPTS)(_spring_linear_chunked)
combine_buffers = njit(parallel=True, **_OPTS)(_combine_buffers)
spring_slotted_serial = njit(**_OPTS)(_spring_slotted)
spring_slotted_parallel = njit(parallel=True, **_OPTS)(_spring_slotted)
reduce_slots_serial = njit(**_OPTS)(_reduce_slots)
reduce_slots_parallel = njit(parallel=True, **_OPTS)(_reduce_slots)
mass_pass_serial = njit(**_OPTS)(_mass_pass)
mass_pass_parallel = njit(parallel=True, **_OPTS)(_mass_pass)
