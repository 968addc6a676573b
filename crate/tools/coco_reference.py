"""Independent COCO-protocol AP for a detection fixture.

Follows the matching and accumulation rules of the reference COCO evaluation
tool (no area ranges, no detection cap, no crowd regions) using numpy only.

    python3 tools/coco_reference.py crates/core/tests/data/coco_fixture.json
"""
import json
import sys

import numpy as np


def iou_matrix(dets, gts):
    out = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            ix = max(0.0, min(d[2], g[2]) - max(d[0], g[0]))
            iy = max(0.0, min(d[3], g[3]) - max(d[1], g[1]))
            inter = ix * iy
            union = (d[2] - d[0]) * (d[3] - d[1]) + (g[2] - g[0]) * (g[3] - g[1]) - inter
            out[i, j] = inter / union
    return out


def evaluate(doc):
    thresholds = np.linspace(0.5, 0.95, int(np.round((0.95 - 0.5) / 0.05)) + 1, endpoint=True)
    rec_thrs = np.linspace(0.0, 1.00, int(np.round((1.00 - 0.0) / 0.01)) + 1, endpoint=True)
    n_cls = doc["num_classes"]
    precision = -np.ones((len(thresholds), len(rec_thrs), n_cls))
    for k in range(n_cls):
        scores, matched, n_gt = [], [], 0
        for img in doc["images"]:
            gts = [g["box"] for g in img["ground_truth"] if g["class_id"] == k]
            dts = [d for d in img["detections"] if d["class_id"] == k]
            order = np.argsort([-d["score"] for d in dts], kind="mergesort")
            dts = [dts[i] for i in order]
            n_gt += len(gts)
            ious = iou_matrix([d["box"] for d in dts], gts)
            dtm = np.zeros((len(thresholds), len(dts)))
            for ti, t in enumerate(thresholds):
                gtm = np.zeros(len(gts))
                for di in range(len(dts)):
                    best = min(t, 1 - 1e-10)
                    m = -1
                    for gi in range(len(gts)):
                        if gtm[gi] > 0:
                            continue
                        if ious[di, gi] < best:
                            continue
                        best = ious[di, gi]
                        m = gi
                    if m == -1:
                        continue
                    gtm[m] = 1
                    dtm[ti, di] = 1
            scores.extend(d["score"] for d in dts)
            matched.append(dtm)
        if n_gt == 0:
            continue
        order = np.argsort(-np.array(scores), kind="mergesort")
        dtm = np.concatenate(matched, axis=1)[:, order] if matched else np.zeros((len(thresholds), 0))
        tps = np.cumsum(dtm, axis=1).astype(float)
        fps = np.cumsum(1 - dtm, axis=1).astype(float)
        for ti in range(len(thresholds)):
            tp, fp = tps[ti], fps[ti]
            rc = tp / n_gt
            pr = tp / (fp + tp + np.spacing(1))
            pr = pr.tolist()
            for i in range(len(pr) - 1, 0, -1):
                if pr[i] > pr[i - 1]:
                    pr[i - 1] = pr[i]
            q = np.zeros(len(rec_thrs))
            inds = np.searchsorted(rc, rec_thrs, side="left")
            for ri, pi in enumerate(inds):
                if pi < len(pr):
                    q[ri] = pr[pi]
            precision[ti, :, k] = q

    def summarize(ti=None):
        p = precision if ti is None else precision[[ti]]
        valid = p[p > -1]
        return float(np.mean(valid)) if valid.size else -1.0

    return summarize(), summarize(0), summarize(5)


if __name__ == "__main__":
    with open(sys.argv[1]) as f:
        doc = json.load(f)
    m, a50, a75 = evaluate(doc)
    print(f"mAP  {m:.17g}\nAP50 {a50:.17g}\nAP75 {a75:.17g}")
