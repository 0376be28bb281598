"""
How much does binarizing the residual blocks save?
==================================================

Parameter counts, file sizes and an analytic speedup estimate for the
configurations reported for the binarized SRResNet and LapSRN networks.
"""
from binsr.infer import count_ops, estimate_speedup, model_size
from binsr.models import SrModelConfig, build_model, count_parameters

rows = [
    ("SRResNet 2x, 16 blocks", SrModelConfig(scale=2, num_residual_blocks=16)),
    ("SRResNet 4x, 8 blocks", SrModelConfig(scale=4, num_residual_blocks=8)),
    ("SRResNet 4x, 16 blocks", SrModelConfig(scale=4, num_residual_blocks=16)),
    ("SRResNet 4x, 24 blocks", SrModelConfig(scale=4, num_residual_blocks=24)),
    ("LapSRN 4x, 10 units", SrModelConfig(family="pyramid_sr", scale=4, num_residual_blocks=10)),
]

print(f"{'model':26s} {'binary':>10s} {'real':>9s} {'real net':>10s} {'bin MB':>7s} {'real MB':>8s}")
for name, cfg in rows:
    m = build_model(cfg)
    nb, nr = count_parameters(m)
    twin = sum(count_parameters(build_model(cfg.with_(binarize_residual=False))))
    s = model_size(m)
    print(f"{name:26s} {nb:10,d} {nr:9,d} {twin:10,d} {s.binary_model_mb:7.3f} {s.real_model_mb:8.3f}")

###############################################################################
# Op counts at a 1200x800 output.  The estimate charges 4 multiplies per cycle,
# additions at a third of that cost and 512 bit operations per cycle.
for scale in (2, 4):
    m = build_model(SrModelConfig(scale=scale, num_residual_blocks=16))
    hw = (1200 // scale, 800 // scale)
    real, binr = count_ops(m, hw, as_real=True), count_ops(m, hw)
    print(f"{scale}x: residual blocks hold {100 * real.residual_conv_share():.1f}% of conv "
          f"multiplies; estimated speedup {estimate_speedup(real, binr):.2f}x")
