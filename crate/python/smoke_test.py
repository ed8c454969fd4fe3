"""Smoke test for the `mbt` extension module.

Build and install first:
    maturin build -m crates/python/Cargo.toml -o dist && pip install dist/mbt-*.whl
"""

import math
import os
import tempfile

import mbt


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok   {what}")


def main():
    tiny = mbt.ModelConfig.tiny(2)
    check(tiny.param_count() == 29825, "tiny parameter count")
    check(sum(n for _, n in tiny.module_param_counts()) == tiny.param_count(), "module counts sum")
    default = mbt.ModelConfig()
    check(default.scale == 4 and default.get("pool_ratios") == "2,4,8", "default config")
    try:
        mbt.ModelConfig(heads=7)
        check(False, "invalid heads rejected")
    except ValueError:
        check(True, "invalid heads rejected")

    with tempfile.TemporaryDirectory() as tmp:
        ids = mbt.synth_dataset(os.path.join(tmp, "data"), count=4, size=32, scale=2, seed=1)
        check(len(ids) == 4 and ids[0].startswith("grating"), "synthetic dataset")

        hr = mbt.Image.read(os.path.join(tmp, "data", "hr", ids[1] + ".ppm"))
        lr = mbt.downscale(hr, 2)
        check((lr.width, lr.height) == (16, 16), "bicubic downscale")
        check(mbt.psnr(hr, hr) == 100.0 and abs(mbt.ssim(hr, hr) - 1.0) < 1e-12, "identity metrics")

        flat = mbt.Image(8, 8, bytes([100] * 192))
        shifted = mbt.Image(8, 8, bytes([116] * 192))
        check(abs(mbt.psnr(flat, shifted) - 10 * math.log10(65025 / 256)) < 1e-9, "offset-16 PSNR")

        model = mbt.Model(tiny, seed=0)
        for name in model.names():
            shape, values = model.get(name)
            model.set(name, [0.0] * len(values))
        odd = lr.crop(0, 0, 13, 11)
        sr = model.upscale(odd)
        check((sr.width, sr.height) == (26, 22), "pad-and-crop inference")
        sq = model.upscale(lr)
        check(sq == mbt.interpolate(lr, 2, "bilinear"), "zero model equals bilinear")

        trainer = mbt.Trainer(tiny, os.path.join(tmp, "data"), epochs=3, lr_halving_epoch=2,
                              batch_size=2, patch_size=8, val_every=0)
        first = trainer.run_epoch()
        check(first["epoch"] == 0 and first["steps"] == 2, "training epoch")
        ckpt = os.path.join(tmp, "part.mbt")
        trainer.save(ckpt)
        while not trainer.done:
            trainer.run_epoch()
        resumed = mbt.Trainer(tiny, os.path.join(tmp, "data"), resume=ckpt, epochs=3,
                              lr_halving_epoch=2, batch_size=2, patch_size=8, val_every=0)
        while not resumed.done:
            resumed.run_epoch()
        check(resumed.losses == trainer.losses and len(trainer.losses) == 6, "exact resume")

        path = os.path.join(tmp, "w.mbt")
        trainer.model().save(path)
        back = mbt.Model.load(path)
        check(back.get("conv_first.weight") == trainer.model().get("conv_first.weight"), "checkpoint round trip")
        report = back.evaluate(os.path.join(tmp, "data"))
        check(len(report["images"]) == 4 and len(report["classes"]) == 4, "evaluation report")

    passed, err, groups = mbt.gradcheck("prm")
    check(passed and err < 1e-4 and groups, "prm gradient check")
    print("all checks passed")


if __name__ == "__main__":
    main()
