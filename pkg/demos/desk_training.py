"""
Training a small binarized network on a laptop
==============================================

A 3-block, 16-channel network at 2x, trained on tiles of the scikit-image
sample photographs and validated on tiles from different photographs.
Pass the number of epochs as the first argument (default 10; the acceptance
suite uses 30).
"""
import sys

import numpy as np

from binsr.corpus import desk_split
from binsr.data import bicubic_resize, make_pairs, psnr_y
from binsr.infer import load_model, save_model
from binsr.models import SrModelConfig, build_resnet_sr, forward_sr
from binsr.train import TrainConfig, evaluate_psnr, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
train_imgs, val_imgs = desk_split()
pairs = make_pairs(val_imgs, 2)
bicubic = np.mean([psnr_y(bicubic_resize(lr, 2), hr) for lr, hr in pairs])
print(f"{len(train_imgs)} training tiles, {len(pairs)} held-out tiles, bicubic {bicubic:.3f} dB")

# No batch norm, plus a fixed bicubic skip so the network only learns a residual.
cfg = SrModelConfig(scale=2, num_residual_blocks=3, feature_channels=16,
                    use_batch_norm=False, image_skip=True, seed=1)
model = build_resnet_sr(cfg)
log = train(model, train_imgs, TrainConfig(initial_lr=1e-3, epochs=epochs, seed=1), pairs)
for r in log.records:
    print(f"epoch {r.epoch:2d}  loss {r.train_loss:.5f}  val {r.val_psnr:.3f} dB "
          f"({r.val_psnr - bicubic:+.3f})  sign flips {100 * r.bit_flip_fraction:.2f}%")

###############################################################################
# The saved file holds signs and scales only; reloading gives identical output.
save_model(model, "desk_model.bsr")
again = load_model("desk_model.bsr")
lr, _ = pairs[0]
print("reloaded output identical:", np.array_equal(forward_sr(again, lr), forward_sr(model, lr)))
print("packed-kernel validation PSNR:", round(evaluate_psnr(again.pack(), pairs), 3))
