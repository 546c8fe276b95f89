"""How hash storage grows with resolution for a sphere shell.

Prints the table sizes next to an octree leaf estimate.  The occupied
count grows with the square of the resolution.  The hash table stays
within a few percent of it, while the octree estimate runs about twice as
large.  Pass resolutions on the command line to change the sweep.
"""

import sys

from hashconv import bench

resolutions = [int(x) for x in sys.argv[1:]] or [32, 64, 128, 256]
rows = bench.run_bench("shell", resolutions)
print(f"{'N':>5} {'n':>9} {'m':>9} {'m/n':>6} {'slack':>7} {'octants':>9} {'PSH MB':>7}")
for r in rows:
    mb = (r.bytes_H + r.bytes_Phi + r.bytes_T + r.bytes_D) / 2 ** 20
    print(f"{r.N:5d} {r.n:9d} {r.m:9d} {r.m / r.n:6.3f} {r.m - r.n:7d} {r.octants:9d} {mb:7.2f}")

s = bench.summarize(rows)
print(f"\nlog-log slopes: n {s['slope_n']:.2f}, slack {s['slope_slack']:.2f}, octants {s['slope_octants']:.2f}")
print("slack is the gap between n and the next cube m_bar^3, so its slope jumps around")
