"""Where does decoding sit on the H100 roofline?

Arithmetic intensity during decode is set by how many query heads share a
cached head. We sweep context length for the h_q=128 family, then show
that a second query token (speculative decoding) doubles the FLOPs while
leaving cache traffic almost unchanged, which pushes MLA past the ridge.
"""

from decode_attention.hardware import H100
from decode_attention.roofline import closed_form_for, emit_roofline_csv, roofline_point
from decode_attention.verify import roofline_family

family = roofline_family()
print(f"H100 ridge: {H100.ridge:.1f} FLOP/byte\n")

print("closed-form intensity vs context length")
Ls = (1024, 8192, 65536, 1_000_000)
print(f"{'variant':8s}" + "".join(f"{'L=' + str(L):>12s}" for L in Ls))
for label, cfg in family:
    print(f"{label:8s}" + "".join(f"{closed_form_for(cfg, L):12.1f}" for L in Ls))

print("\nexplicit accounting at L=65536")
points = []
for label, cfg in family:
    for Lq in (1, 2):
        p = roofline_point(cfg, 65536, Lq, 1, H100, label)
        points.append(p)
        print(f"  {label:7s} Lq={Lq}: ai={p.ai:7.1f}  {p.bound + '-bound':14s}  {p.predicted_time * 1e6:8.2f} us")

print("\nfirst lines of the CSV the CLI writes:")
print("\n".join(emit_roofline_csv(points, H100).splitlines()[:4]))
