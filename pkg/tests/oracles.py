"""Independent reference implementations used as test oracles.

These are written cell by cell with plain floats and share no code with the
package.
"""

import math


def plain_ctm_step(rho, queue, demand, supply_out, V, W, P, sigma, alpha, T, L):
    """One step of the CTM with capacity drop and every speed at V."""
    n = len(rho)
    out = []
    for i in range(n):
        send = V * rho[i]
        cap = min(V * sigma, W * (P - (1 - alpha) * sigma - alpha * rho[i]))
        recv = W * (P - rho[i + 1]) if i + 1 < n else supply_out
        out.append(min(send, cap, recv))
    q_in = min(demand + queue / T, V * sigma, W * (P - rho[0]))
    new = []
    for i in range(n):
        upstream = q_in if i == 0 else out[i - 1]
        new.append(rho[i] + T / L * (upstream - out[i]))
    new_queue = max(queue + T * (demand - q_in), 0.0)
    return new, new_queue, q_in, out


def euler_balance(n0, d0, u, lam, rho_d, V, sigma, sigma_b, dt, t_max):
    """Forward Euler on the vehicle count and distance between actuator and
    wave front.  Returns the first times each quantity hits zero."""
    n, d, t = n0, d0, 0.0
    t_n = t_d = None
    while t < t_max and (t_n is None or t_d is None):
        n += dt * ((V - u) * (sigma - sigma_b) - (V - lam) * rho_d)
        d += dt * (lam - u)
        t += dt
        if t_n is None and n <= 0:
            t_n = t
        if t_d is None and d <= 0:
            t_d = t
    return t_n, t_d


def brute_mean(values, lo, hi):
    total = 0.0
    for i in range(lo, hi + 1):
        total += values[i]
    return total / (hi - lo + 1)


def is_close(a, b, rel=1e-12):
    return math.isclose(a, b, rel_tol=rel, abs_tol=rel)
