"""Worst relative gradient error per loss across several seeds and problem sizes."""

import argparse

from pseudorefine.gradcheck import TOLERANCE, GradcheckSizes, gradcheck

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seeds", type=int, default=5)
p.add_argument("--instances", type=int, default=20)
args = p.parse_args()

worst = {}
for seed in range(args.seeds):
    for hw in (4, 16, 36):
        for classes in (2, 4, 20):
            sizes = GradcheckSizes(instances=args.instances, affinity_hw=hw, classes=classes, seg_classes=classes)
            for name, err in gradcheck(seed, sizes).items():
                worst[name] = max(worst.get(name, 0.0), err)
            print(f"seed={seed} hw={hw} classes={classes} done")
for name, err in sorted(worst.items()):
    print(f"{name:15s} {err:.3e} {'ok' if err < TOLERANCE else 'FAIL'}")
