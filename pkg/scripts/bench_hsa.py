"""HSA against dense attention: pair counts and wall time over a few shapes."""

import json

from samwise.cmt import bench_hsa

SHAPES = [(16, 16, 4, 4), (16, 16, 4, 2), (16, 16, 8, 4), (8, 8, 4, 2), (8, 8, 4, 4), (4, 4, 4, 2)]

if __name__ == "__main__":
    for h, w, t, p in SHAPES:
        r = bench_hsa(h, w, t, p, repeats=3)
        print(json.dumps({"hw": [h, w], "t": t, "p": p, **r}))
