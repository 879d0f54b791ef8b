"""Train the frozen stage-A backbone stored at artifacts/backbone.{json,bin}.

Roughly ten minutes on one CPU core. Other experiments load this file instead
of retraining.
"""

import argparse
import logging
import time

from samwise.data import object_masks
from samwise.experiments import BACKBONE, Budget, backbone_videos, pretrain
from samwise.model import save_model

import numpy as np
import torch


def point_prompted_j(model, videos, frames=8):
    from samwise.config import StreamConfig
    from samwise.metrics import region_j
    from samwise.model import to_input
    from samwise.pipeline import frame_step, new_state
    from samwise.training import _centroid

    first, tracked = [], []
    with torch.no_grad():
        for v in videos:
            objs = object_masks(v)
            k = next(i for i in range(len(objs)) if objs[i, 0].sum() >= 4)
            x = to_input(v.frames[None, :frames])
            state = new_state(model, StreamConfig(cme_mode="off"))
            for s in range(0, frames, 4):
                pyr, _ = model.encode_clip(x[:, s:s + 4], adapters=False)
                feats = model.flat_features(pyr)
                for t in range(feats.shape[1]):
                    ft = s + t
                    if ft == 0:
                        rho = model.sam.point(torch.tensor([_centroid(objs[k, 0])]))
                    else:
                        rho = model.sam.point(None, 1)
                    r = frame_step(model, feats[:, t], rho, state)
                    (first if ft == 0 else tracked).append(region_j(r.mask[0].numpy(), objs[k, ft]))
    return float(np.mean(first)), float(np.mean(tracked))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(BACKBONE))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    b = Budget()
    t0 = time.time()
    model = pretrain(backbone_videos(b.backbone_videos), None, b.image_steps, b.track_steps, args.seed,
                     log_path=args.out + "_log.csv", progress=True)
    secs = time.time() - t0
    held_out = backbone_videos(40, seed=90000)
    first, tracked = point_prompted_j(model, held_out)
    save_model(model, args.out, {"stage": "A", "image_steps": b.image_steps, "video_steps": b.track_steps,
                                 "seed": args.seed, "train_seconds": round(secs, 1),
                                 "heldout_point_j_first": first, "heldout_point_j_tracked": tracked})
    print(f"trained in {secs:.0f}s; held-out point-prompted J first frame {first:.3f}, tracked {tracked:.3f}")


if __name__ == "__main__":
    main()
