"""Hot inner loops, compiled with numba when available.

Every kernel exists in two flavours: a loop version that numba compiles, and
a pure-numpy version (vectorised where the algorithm allows it, otherwise the
same loop run by the interpreter). Set ``REDOFFLOAD_DISABLE_NUMBA=1`` before
import to force the numpy path. Both paths produce identical results; the
test suite checks this kernel by kernel.
"""

from __future__ import annotations

import math
import os

import numpy as np

DISABLE_ENV = "REDOFFLOAD_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in {"1", "true", "yes", "on"}


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def _jit(fn):
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# Markov-modulated regimes
# ---------------------------------------------------------------------------


def _markov_regimes_loop(transition, rank, init, uniforms, rear, coupling):
    n_tasks, n_servers = uniforms.shape
    k = transition.shape[0]
    out = np.empty((n_tasks, n_servers), dtype=np.int64)
    weights = np.empty(k, dtype=np.float64)
    for n in range(n_servers):
        out[0, n] = init[n]
    for t in range(1, n_tasks):
        for n in range(n_servers):
            prev = out[t - 1, n]
            total = 0.0
            for j in range(k):
                w = transition[prev, j]
                if coupling != 0.0 and rank[j] != rank[prev]:
                    direction = 1.0 if rank[j] > rank[prev] else -1.0
                    w = w * math.exp(coupling * rear[t, n] * direction)
                weights[j] = w
                total += w
            u = uniforms[t, n] * total
            acc = 0.0
            choice = k - 1
            for j in range(k):
                acc += weights[j]
                if u < acc:
                    choice = j
                    break
            out[t, n] = choice
    return out


# ---------------------------------------------------------------------------
# AR(1) truncated-Gaussian delays
# ---------------------------------------------------------------------------


def _ar_truncated_loop(regimes, means, stds, ar, offset, normals):
    """Per-server AR(1) Gaussian deviations, resampled until the value is >= 0.

    ``means`` are shifted by ``-offset`` so the returned array is the
    communication component; the caller adds the computing delay back.
    """
    n_tasks, n_servers = regimes.shape
    retries = normals.shape[2]
    out = np.empty((n_tasks, n_servers), dtype=np.float64)
    innov = math.sqrt(1.0 - ar * ar)
    for n in range(n_servers):
        z_prev = 0.0
        for t in range(n_tasks):
            r = regimes[t, n]
            mu = means[r] - offset
            sd = stds[r]
            scale = 1.0 if t == 0 else innov
            carry = 0.0 if t == 0 else ar * z_prev
            accepted = False
            z = 0.0
            for q in range(retries):
                z = carry + scale * normals[t, n, q]
                if mu + sd * z >= 0.0:
                    accepted = True
                    break
            if not accepted:
                z = 0.0
            out[t, n] = mu + sd * z
            z_prev = z
    return out


# ---------------------------------------------------------------------------
# Random-waypoint flight path (local east/north/up frame)
# ---------------------------------------------------------------------------


def _waypoint_path_loop(n_steps, dt, radius, alt_lo, alt_hi, v_lo, v_hi, reach, tau, pool):
    """Integrate a smoothed random-waypoint flight.

    ``pool`` rows are uniform draws (radius, angle, altitude, speed) consumed
    one per waypoint, wrapping around when exhausted. Row 0 is the start
    point.
    """
    pos = np.empty((n_steps, 3), dtype=np.float64)
    vel = np.empty((n_steps, 3), dtype=np.float64)
    m = pool.shape[0]
    waypoints = np.empty((m, 4), dtype=np.float64)
    for c in range(m):
        r = radius * math.sqrt(pool[c, 0])
        th = 2.0 * math.pi * pool[c, 1]
        waypoints[c, 0] = r * math.sin(th)
        waypoints[c, 1] = r * math.cos(th)
        waypoints[c, 2] = alt_lo + (alt_hi - alt_lo) * pool[c, 2]
        waypoints[c, 3] = v_lo + (v_hi - v_lo) * pool[c, 3]
    x = waypoints[0, 0]
    y = waypoints[0, 1]
    z = waypoints[0, 2]
    cursor = 1 % m
    vx = 0.0
    vy = 0.0
    vz = 0.0
    gain = min(1.0, dt / tau)
    for t in range(n_steps):
        dx = waypoints[cursor, 0] - x
        dy = waypoints[cursor, 1] - y
        dz = waypoints[cursor, 2] - z
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dist < reach:
            cursor = (cursor + 1) % m
            dx = waypoints[cursor, 0] - x
            dy = waypoints[cursor, 1] - y
            dz = waypoints[cursor, 2] - z
            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        speed = waypoints[cursor, 3]
        cx = 0.0
        cy = 0.0
        cz = 0.0
        if dist > 0.0:
            cx = speed * dx / dist
            cy = speed * dy / dist
            cz = speed * dz / dist
        vx += (cx - vx) * gain
        vy += (cy - vy) * gain
        vz += (cz - vz) * gain
        x += vx * dt
        y += vy * dt
        z += vz * dt
        pos[t, 0] = x
        pos[t, 1] = y
        pos[t, 2] = z
        vel[t, 0] = vx
        vel[t, 1] = vy
        vel[t, 2] = vz
    return pos, vel


# ---------------------------------------------------------------------------
# Masked history window
# ---------------------------------------------------------------------------


def _gather_window_loop(values, masked, last_obs, tasks):
    n_lag = tasks.shape[0]
    n_servers = values.shape[1]
    n_feat = values.shape[2]
    out = np.zeros((n_servers, n_feat, n_lag), dtype=np.float64)
    mask = np.zeros((n_servers, n_feat, n_lag), dtype=np.bool_)
    age = np.zeros((n_servers, n_feat), dtype=np.int64)
    last_task = tasks[n_lag - 1]
    for n in range(n_servers):
        for f in range(n_feat):
            for j in range(n_lag):
                t = tasks[j]
                if not masked[f]:
                    out[n, f, j] = values[t, n, f]
                    mask[n, f, j] = True
                else:
                    src = last_obs[j, n]
                    if src == t:
                        out[n, f, j] = values[t, n, f]
                        mask[n, f, j] = True
                    elif src >= 0:
                        out[n, f, j] = values[src, n, f]
            if masked[f]:
                age[n, f] = last_task - last_obs[n_lag - 1, n]
    return out, mask, age


def _gather_window_numpy(values, masked, last_obs, tasks):
    n_servers = values.shape[1]
    servers = np.arange(n_servers)
    # (L, N) source rows; unmasked features always read the slot's own task
    src = np.where(last_obs >= 0, last_obs, 0)
    stale = values[src, servers[None, :], :]          # (L, N, F)
    fresh = values[tasks[:, None], servers[None, :], :]  # (L, N, F)
    observed = (last_obs == tasks[:, None])[:, :, None]
    known = (last_obs >= 0)[:, :, None]
    m = masked[None, None, :]
    vals = np.where(m, np.where(observed, fresh, np.where(known, stale, 0.0)), fresh)
    mask = np.where(m, observed, True)
    age_server = tasks[-1] - last_obs[-1]
    age = np.where(masked[None, :], age_server[:, None], 0).astype(np.int64)
    return (
        np.ascontiguousarray(vals.transpose(1, 2, 0)),
        np.ascontiguousarray(mask.transpose(1, 2, 0)),
        age,
    )


def _last_observed_loop(selected, tasks, n_servers):
    """For each slot task and server, the latest task <= slot whose set held the server."""
    n_lag = tasks.shape[0]
    out = np.full((n_lag, n_servers), -1, dtype=np.int64)
    first = tasks[0]
    for n in range(n_servers):
        bit = 1 << n
        last = -1
        t = first
        while t >= 0:
            if selected[t] & bit:
                last = t
                break
            t -= 1
        out[0, n] = last
        for j in range(1, n_lag):
            t = tasks[j]
            if selected[t] & bit:
                last = t
            out[j, n] = last
    return out


def _last_observed_numpy(selected, tasks, n_servers):
    out = np.full((tasks.shape[0], n_servers), -1, dtype=np.int64)
    head = selected[: tasks[-1] + 1]
    for n in range(n_servers):
        hits = np.flatnonzero(head & (1 << n))
        if hits.size == 0:
            continue
        pos = np.searchsorted(hits, tasks, side="right") - 1
        out[:, n] = np.where(pos >= 0, hits[np.maximum(pos, 0)], -1)
    return out


# ---------------------------------------------------------------------------
# Windowed exceedance counts
# ---------------------------------------------------------------------------


def _window_counts_loop(delays, delta_star, window):
    n = delays.shape[0] - window
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    run = 0
    for k in range(1, window + 1):
        if delays[k] > delta_star:
            run += 1
    out[0] = run
    for i in range(1, n):
        if delays[i + window] > delta_star:
            run += 1
        if delays[i] > delta_star:
            run -= 1
        out[i] = run
    return out


def _window_counts_numpy(delays, delta_star, window):
    n = delays.shape[0] - window
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    exceed = np.concatenate(([0], np.cumsum(delays > delta_star)))
    i = np.arange(n)
    return (exceed[i + window + 1] - exceed[i + 1]).astype(np.int64)


# ---------------------------------------------------------------------------
# Minimum-cardinality server set
# ---------------------------------------------------------------------------


def _min_cardinality_loop(p, delta):
    n = p.shape[0]
    full = (1 << n) - 1
    best_mask = -1
    best_size = n + 1
    best_joint = 2.0
    for mask in range(1, full + 1):
        size = 0
        joint = 1.0
        for k in range(n):
            if mask & (1 << k):
                size += 1
                joint *= p[k]
        if joint < delta:
            if size < best_size or (size == best_size and joint < best_joint):
                best_mask = mask
                best_size = size
                best_joint = joint
    if best_mask < 0:
        return full
    return best_mask


def _min_cardinality_numpy(p, delta):
    n = p.shape[0]
    masks = np.arange(1, 1 << n)
    bits = (masks[:, None] >> np.arange(n)[None, :]) & 1
    joint = np.ones(masks.shape[0])
    for k in range(n):
        # same multiplication order as the loop kernel
        joint = joint * np.where(bits[:, k] == 1, p[k], 1.0)
    sizes = bits.sum(axis=1)
    feasible = joint < delta
    if not feasible.any():
        return int(masks[-1])
    order = np.lexsort((masks, joint, sizes))
    order = order[feasible[order]]
    return int(masks[order[0]])


# ---------------------------------------------------------------------------
# Adam update (in place on flat views)
# ---------------------------------------------------------------------------


def _adam_update_loop(p, g, m, v, lr, b1, b2, eps, c1, c2):
    for k in range(p.shape[0]):
        gk = g[k]
        mk = b1 * m[k] + (1.0 - b1) * gk
        vk = b2 * v[k] + (1.0 - b2) * (gk * gk)
        m[k] = mk
        v[k] = vk
        p[k] -= lr * (mk / c1) / (np.sqrt(vk / c2) + eps)


def _adam_update_numpy(p, g, m, v, lr, b1, b2, eps, c1, c2):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


_IMPLS = {
    "markov_regimes": (_markov_regimes_loop, _markov_regimes_loop),
    "ar_truncated": (_ar_truncated_loop, _ar_truncated_loop),
    "waypoint_path": (_waypoint_path_loop, _waypoint_path_loop),
    "gather_window": (_gather_window_loop, _gather_window_numpy),
    "last_observed": (_last_observed_loop, _last_observed_numpy),
    "window_counts": (_window_counts_loop, _window_counts_numpy),
    "min_cardinality": (_min_cardinality_loop, _min_cardinality_numpy),
    "adam_update": (_adam_update_loop, _adam_update_numpy),
}

_compiled: dict = {}


def jitted(name: str):
    """Numba-compiled flavour of kernel ``name`` (compiled on first request)."""
    if not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    if name not in _compiled:
        _compiled[name] = _jit(_IMPLS[name][0])
    return _compiled[name]


def pure(name: str):
    """Pure-numpy flavour of kernel ``name``."""
    return _IMPLS[name][1]


def _select(name):
    return jitted(name) if USE_NUMBA else pure(name)


markov_regimes = _select("markov_regimes")
ar_truncated = _select("ar_truncated")
waypoint_path = _select("waypoint_path")
gather_window = _select("gather_window")
last_observed = _select("last_observed")
window_counts = _select("window_counts")
min_cardinality = _select("min_cardinality")
adam_update = _select("adam_update")
