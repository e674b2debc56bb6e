# Where do the bits go?
#
# With fixed-width index packing the rate is a closed-form function of
# frame extents and codebook sizes -- no entropy model, no content
# dependence.  This script prints the whole budget for a 1024x1920 frame
# and the effect of GOP length on the average rate.
#
# Run:  python3 demos/rate_arithmetic.py

from vqvc.bitstream import header_bits, measure_bits, stage_extents
from vqvc.quantizer import KEYFRAME_SPEC, PREDICTED_SPECS, index_width

H, W = 1024, 1920
PIXELS = H * W

print(f"frame {W}x{H}, latents {W // 8}x{H // 8}")
print()

for label, spec in [("keyframe", KEYFRAME_SPEC),
                    *((f"predicted/{k}", v) for k, v in PREDICTED_SPECS.items())]:
    print(f"{label}  (codebook sizes {spec.sizes})")
    total = 0
    for (h, w), k in zip(stage_extents(H // 8, W // 8), spec.sizes):
        width = index_width(k)
        bits = 2 * h * w * width
        total += bits
        print(f"  stage {h:>3}x{w:<3} x2 planes @ {width:>2} bits "
              f"= {bits:>7} bits")
    print(f"  payload {total} bits = {total / PIXELS:.5f} bpp")
    print()

print(f"container header: {header_bits()} bits per GOP (amortized, "
      "excluded from bpp)")
print()

# GOP averaging: one keyframe up front, low-rate predicted frames after.
key = measure_bits(KEYFRAME_SPEC, H, W)
low = measure_bits(PREDICTED_SPECS["low"], H, W)
print(f"{'gop':>4} {'avg bpp':>10}")
for gop in (1, 4, 8, 16, 32):
    avg = (key + (gop - 1) * low) / (gop * PIXELS)
    print(f"{gop:>4} {avg:>10.5f}")

# The GOP-32 number is within 5% of the all-predicted floor: the
# keyframe premium washes out quickly, which is why long GOPs are the
# default operating point.
