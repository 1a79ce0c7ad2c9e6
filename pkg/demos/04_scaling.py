"""Runtime and memory scaling of the two mechanisms.

Softmax attention forms an N x N score matrix, so its time and its peak
buffer grow quadratically. Sorting works column by column with index
lists, so both grow essentially linearly (N log N in time). The peak
numbers come from allocation hooks inside the attention path, not from
process RSS, so they isolate the mechanism itself.

Run: python3 demos/04_scaling.py   (about 10 seconds)
(the CLI equivalent at full size is `sortattn bench`)
"""

from sortattn.analysis import bench_attention, loglog_slope

sizes = [256, 512, 1024, 2048, 4096]
records = bench_attention(sizes, d=8, heads=1, head_dim=8, repeats=3, seed=0)

for mechanism in ("softmax", "slicesort"):
    own = [r for r in records if r.mechanism == mechanism]
    print(f"\n{mechanism}:")
    print(f"  {'N':>6}  {'forward':>10}  {'fwd+bwd':>10}  {'peak buffer':>12}")
    for r in own:
        print(f"  {r.n:>6}  {r.fwd_s * 1e3:>8.2f}ms  {r.fwdbwd_s * 1e3:>8.2f}ms"
              f"  {r.peak_bytes:>10,d} B")
    slope = loglog_slope([r.n for r in own], [r.fwd_s for r in own])
    print(f"  forward log-log slope: {slope:.2f}")

soft = {r.n: r.peak_bytes for r in records if r.mechanism == "softmax"}
slic = {r.n: r.peak_bytes for r in records if r.mechanism == "slicesort"}
print(f"\npeak-buffer growth from N=256 to N=4096:")
print(f"  softmax   {soft[4096] // soft[256]}x  (quadratic: 16x N means 256x bytes)")
print(f"  slicesort {slic[4096] // slic[256]}x  (linear: 16x N means 16x bytes)")
