#!/usr/bin/env python3
"""Smoke test for the wdiff3d_py extension module.

Builds nothing itself: expects `cargo build --release -p wdiff3d-py` to
have produced the cdylib, which this script copies next to a temp dir
under an importable name. Exercises the transform round trip, schedule
constants, phantom generation, a tiny training run, inpainting and the
metrics, and exits nonzero on the first failed check.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np


def load_module():
    root = Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / "release" / "libwdiff3d_py.so",
        root / "target" / "debug" / "libwdiff3d_py.so",
        root / "target" / "release" / "libwdiff3d_py.dylib",
        root / "target" / "debug" / "libwdiff3d_py.dylib",
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit(
            "extension not built; run `cargo build --release -p wdiff3d-py` first"
        )
    tmp = Path(tempfile.mkdtemp(prefix="wdiff3d_py_"))
    suffix = ".so" if lib.suffix == ".so" else ".so"  # python loads .so on linux/mac
    shutil.copy2(lib, tmp / f"wdiff3d_py{suffix}")
    sys.path.insert(0, str(tmp))
    import wdiff3d_py

    return wdiff3d_py


def check(name, ok, detail=""):
    status = "ok" if ok else "FAIL"
    print(f"  {name:<42} {status} {detail}")
    if not ok:
        sys.exit(f"smoke test failed at: {name}")


def main():
    wd = load_module()
    print(f"loaded wdiff3d_py, DEFAULT_COEFF_SCALE = {wd.DEFAULT_COEFF_SCALE:.6f}")

    rng = np.random.default_rng(0)

    # transform round trip and energy preservation
    vol = rng.uniform(-1.0, 1.0, size=(16, 16, 16)).astype(np.float32)
    bands = wd.dwt3(vol, 1.0)
    check("dwt3 band shape", bands.shape == (8, 8, 8, 8), str(bands.shape))
    back = wd.idwt3(bands, 1.0)
    err = float(np.abs(back - vol).max())
    check("idwt3(dwt3(v)) == v", err <= 1e-5, f"max err {err:.2e}")
    energy_ratio = float((bands**2).sum() / (vol**2).sum())
    check("Parseval at unit scale", abs(energy_ratio - 1.0) <= 1e-4, f"{energy_ratio:.8f}")

    # schedule constants
    sched = wd.Schedule("vp", 2)
    target = math.exp(-10.05)
    check(
        "VP alpha_bar(T) == exp(-10.05)",
        abs(sched.alpha_bar(2) - target) <= 1e-9,
        f"{sched.alpha_bar(2):.3e}",
    )
    final_ab, first_below, fully = sched.perturbation_report()
    check("VP fully perturbed at T=2", fully, f"alpha_bar {final_ab:.2e}")
    check("posterior var at t=1 is zero", sched.posterior_var(1) == 0.0)

    # phantom generation and normalization record
    g, m, v, rec = wd.gen_phantom(seed=3, dims=16, mask_radius_min=2, mask_radius_max=3)
    check("phantom shapes", g.shape == m.shape == v.shape == (16, 16, 16))
    check("mask is binary", set(np.unique(m)) <= {0.0, 1.0})
    check("voided respects mask", float(np.abs(v - g * (1 - m)).max()) == 0.0)
    check("record is invertible", rec.scale > 0 and rec.clip_lo < rec.clip_hi, repr(rec))

    # forward diffusion statistics
    x0 = np.zeros((8, 8, 8, 8), dtype=np.float32)
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    x_t = wd.q_sample(x0, 2, eps, sched)
    var = float((x_t**2).mean())
    expected = 1.0 - sched.alpha_bar(2)
    check("q_sample variance", abs(var - expected) <= 0.1 * expected, f"{var:.4f}")

    # tiny training run and inpainting on one phantom
    samples = [
        wd.gen_phantom(seed=s, dims=16, mask_radius_min=2, mask_radius_max=3)[:3]
        for s in range(4)
    ]
    model, history = wd.train(
        samples,
        schedule_kind="vp",
        num_steps=2,
        steps=60,
        batch_size=1,
        learning_rate=1e-3,
        seed=1,
        hidden_channels=8,
    )
    check("history shape", history.shape == (60, 5), str(history.shape))
    check(
        "loss decreased",
        history[-1, 4] < history[0, 4],
        f"{history[0, 4]:.4f} -> {history[-1, 4]:.4f}",
    )

    pred = wd.inpaint(model, v, m, sched, seed=9)
    known = m == 0.0
    check("composite preserves known region", bool(np.array_equal(pred[known], v[known])))
    baseline = wd.mean_fill_baseline(v, m)
    model_mse = wd.mse(g, pred, m)
    base_mse = wd.mse(g, baseline, m)
    print(f"  masked MSE: model {model_mse:.5f}, mean-fill {base_mse:.5f}")

    # metrics sanity
    check("SSIM(a,a) == 1", wd.ssim3d(g, g, 2.0) == 1.0)
    check("MSE(a,a) == 0", wd.mse(g, g) == 0.0)
    check("PSNR is finite", math.isfinite(wd.psnr(g, pred, 2.0)))

    # checkpoint round trip
    with tempfile.TemporaryDirectory() as tmp:
        ckpt = str(Path(tmp) / "model.fwck")
        model.save(ckpt)
        reloaded = wd.Denoiser.load(ckpt)
        check("checkpoint round trip", reloaded.num_params == model.num_params)

    print("smoke test passed")


if __name__ == "__main__":
    main()
