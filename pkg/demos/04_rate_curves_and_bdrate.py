#!/usr/bin/env python3
"""Rate-accuracy curves, Pareto fronts, and BD-rate.

Builds two synthetic rate-accuracy curves, monotonizes a noisy one with the
Pareto front, and measures the average bitrate difference between them.
"""

import math

from lvcodec.evalkit import RAPoint, bd_rate, pareto_front

rates = [0.25, 0.5, 1.0, 2.0, 4.0]
anchor = [RAPoint(r, 30 + 8 * math.log2(r)) for r in rates]
print("anchor curve:")
for p in anchor:
    print(f"  {p.rate:5.2f} bpp -> metric {p.metric:6.2f}")

# a competitor that needs ~25% less rate at the same metric, with one
# nonmonotonic outlier that the Pareto front removes
test = [RAPoint(p.rate * 0.75, p.metric) for p in anchor]
noisy = test + [RAPoint(2.5, test[0].metric - 1.0)]
front = pareto_front(noisy)
print(f"\nnonmonotonic test curve: {len(noisy)} points "
      f"-> pareto front keeps {len(front)}")

print(f"\nBD-rate(test vs anchor):      {bd_rate(anchor, noisy):7.2f}% "
      "(negative = bitrate savings)")
print(f"BD-rate(anchor vs test):      {bd_rate(noisy, anchor):7.2f}%")
print(f"BD-rate(anchor vs anchor):    {bd_rate(anchor, anchor):7.2f}%")

half = [RAPoint(p.rate / 2, p.metric) for p in anchor]
print(f"half-rate sanity check:       {bd_rate(anchor, half):7.2f}% (exactly -50)")
