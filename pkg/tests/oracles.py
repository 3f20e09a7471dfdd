"""Independent reference implementations used by the test-suite."""
from fractions import Fraction
import math


def energy_oracle(ts, power, nominal_ns, start_ns, end_ns, gap_factor=3):
    """Brute-force energy (J), covered seconds and gap count, in exact arithmetic.

    The window is cut at every sample time; each elementary piece is evaluated
    at its midpoint, which is exact for the linear/constant reconstruction.
    """
    ts = [int(t) for t in ts]
    p = [Fraction(float(x)) for x in power]
    s, e = int(start_ns), int(end_ns)
    gap = Fraction(gap_factor) * nominal_ns
    inside = [i for i, t in enumerate(ts) if s <= t < e]
    if e == s or not inside:
        return Fraction(0), Fraction(0), 0
    first, last = inside[0], inside[-1]
    cuts = sorted({s, e} | {t for t in ts if s < t < e})
    energy = Fraction(0)
    covered = Fraction(0)
    uncovered_keys = set()
    for u, w in zip(cuts, cuts[1:]):
        mid = Fraction(u + w, 2)
        value, key = None, None
        if mid < ts[0]:
            key = "head"
            if first == 0 and ts[0] - s <= gap:
                value = p[0]
        elif mid > ts[-1]:
            key = "tail"
            if last == len(ts) - 1 and e - ts[-1] <= gap:
                value = p[-1]
        else:
            i = max(k for k in range(len(ts) - 1) if ts[k] <= mid)
            key = i
            if ts[i + 1] - ts[i] <= gap:
                frac = (mid - ts[i]) / (ts[i + 1] - ts[i])
                value = p[i] + (p[i + 1] - p[i]) * frac
        if value is None:
            uncovered_keys.add(key)
        else:
            dt = Fraction(w - u, 10**9)
            energy += value * dt
            covered += dt
    return energy, covered, len(uncovered_keys)


def type7_quantile(values, q):
    xs = sorted(values)
    h = (len(xs) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def least_squares(xs, ys):
    """Closed-form slope/intercept in exact arithmetic."""
    xs = [Fraction(x) for x in xs]
    ys = [Fraction(y) for y in ys]
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx
    return slope, my - slope * mx


def range_query_oracle(scrape_ts, scrape_vals, start, end, step, lookback):
    """Prometheus-style alignment by exhaustive search."""
    out = []
    b = start
    while b < end:
        best = None
        for t, v in zip(scrape_ts, scrape_vals):
            if b - lookback < t <= b and (best is None or t > best[0]):
                best = (t, v)
        if best is not None:
            out.append((b, best[1]))
        b += step
    return out
