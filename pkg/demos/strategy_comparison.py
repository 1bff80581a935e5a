"""Why peak regions beat plain top-k when a query matches two moments.

A synthetic relevance curve has a tall bump early and a shorter one later.
Top-k spends its whole budget on the tall bump; the watershed selector
keeps one frame per above-mean region, so the later moment survives.
"""

import numpy as np

from cogniloop import build_profile, segment_watershed, select_peak_representatives, select_topk, select_uniform

t = np.arange(40, dtype=float)
relevance = 0.9 * np.exp(-((t - 8) ** 2) / 6) + 0.6 * np.exp(-((t - 29) ** 2) / 4) + 0.05

# embed each score as the angle of a 2-d unit vector so cosine similarity recovers it
query = [1.0, 0.0]
frames = [[s, np.sqrt(1 - s**2)] for s in relevance]
profile = build_profile(query, frames, t, span=(0.0, 39.0))

print("threshold (mean of smoothed scores): %.3f" % profile.threshold)

regions = segment_watershed(profile.smoothed, profile.threshold)
for r in regions:
    print("region %2d-%2d  peak at %2d  height %.3f" % (r.start_idx, r.end_idx, r.rep_idx, r.rep_score))

budget = 3
print()
print("watershed:", select_peak_representatives(profile, regions, budget))
print("top-k    :", select_topk(profile, budget))
print("uniform  :", select_uniform(len(t), budget))

# the top-k picks all land inside the first region
in_first = [i for i in select_topk(profile, budget) if regions[0].start_idx <= i <= regions[0].end_idx]
print("top-k frames inside the first region: %d of %d" % (len(in_first), budget))
