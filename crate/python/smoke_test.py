#!/usr/bin/env python3
"""Smoke test for the tripoint_py extension module.

Build the module first, then run this script from the repository root:

    cargo build -p tripoint-py
    python3 python/smoke_test.py

The script copies the built cdylib next to a temp dir as `tripoint_py.so`
so a plain `import tripoint_py` works without installing anything.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent

TINY_CONFIG = """
c = 8
n_in = 64
n_coarse = 16
merge_target = 32
ccm_res = 8
heads = 2
edge_dims = 8,12
edge_k = 4
incep_width = 12
log_every = 1
"""


def locate_cdylib() -> Path:
    candidates = [
        REPO / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libtripoint_py.so", "libtripoint_py.dylib", "tripoint_py.dll")
    ]
    for c in candidates:
        if c.is_file():
            return c
    sys.exit(
        "error: built module not found; run `cargo build -p tripoint-py` first\n"
        "looked at:\n  " + "\n  ".join(str(c) for c in candidates)
    )


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        shutil.copy(locate_cdylib(), Path(tmp) / "tripoint_py.so")
        sys.path.insert(0, tmp)
        import tripoint_py as tp

        # Synthetic pair generation.
        gt, partial = tp.synth_pair(
            "union-two", gt_points=512, partial_points=128, seed=3
        )
        assert len(gt) == 512 and len(partial) == 128
        assert all(len(p) == 3 for p in gt[:5])

        # Metrics: a cloud against itself is perfect.
        self_report = tp.metric_report(gt, gt)
        assert self_report["cd_l2"] == 0.0, self_report
        assert self_report["fscore"] == 1.0, self_report
        assert self_report["fidelity"] is None
        d = tp.chamfer_l2(partial, gt)
        assert d > 0.0 and math.isfinite(d)

        # Normalization puts everything in the unit cube.
        norm, scale, offset = tp.normalize(gt)
        assert all(-1e-9 <= c <= 1 + 1e-9 for p in norm for c in p)
        assert scale > 0.0 and len(offset) == 3

        # Coordinate-map rendering: three views, plausible coverage.
        views = tp.render_ccm(norm, res=16)
        assert len(views) == 3
        for v in views:
            assert v["h"] == v["w"] == 16
            assert len(v["pixels"]) == 16 * 16 * 3
            assert len(v["mask"]) == 16 * 16
            assert any(v["mask"]), "each view must see at least one point"

        # Subsampling.
        sub = tp.farthest_point_sample(gt, 32, 0)
        assert len(sub) == 32

        # Pipeline: train a few steps, complete, save/load.
        pipe = tp.Pipeline(TINY_CONFIG, seed=0)
        assert pipe.param_count() > 0
        with tempfile.TemporaryDirectory() as run_dir:
            out = pipe.train([(partial, gt)], iters=5, lr=5e-3, out_dir=run_dir)
            assert out["final_loss"] < out["first_loss"], out
            assert Path(out["checkpoint"]).is_file()

            result = pipe.complete(partial)
            assert len(result["coarse"]) == 16
            assert len(result["stages"]) == 2
            assert len(result["completion"]) == 128

            ckpt = Path(run_dir) / "weights.gfck"
            pipe.save(str(ckpt))
            fresh = tp.Pipeline(TINY_CONFIG, seed=42)
            fresh.load(str(ckpt))
            again = fresh.complete(partial)
            assert again["completion"] == result["completion"], (
                "loaded weights must reproduce the completion exactly"
            )

        mean = pipe.evaluate([(result["completion"], gt)])
        assert math.isfinite(mean["cd_l2"]) and mean["cd_l2"] > 0.0

    print("smoke test passed")


if __name__ == "__main__":
    main()
