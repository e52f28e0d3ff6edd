"""
One attribute vector per subject
================================

Two ways to pick the images that decide: the classifier's own confidence
(|p_pos - p_neg|, ranked per attribute) or image quality (one ranking per
subject). The top k images then vote, and ties go to the most confident
voter.
"""

import numpy as np

from attrcons import (
    AttributeSchema, ConsolidationConfig, Dataset, ImageRecord, consolidate_subject, majority_vote,
)

schema = AttributeSchema(("Male", "Eyeglasses"))
p_pos = np.array([
    [0.95, 0.40],
    [0.30, 0.45],
    [0.60, 0.99],
    [0.55, 0.10],
])
recs = [ImageRecord.from_probabilities(f"img{i}", "dana", row, quality=q)
        for i, (row, q) in enumerate(zip(p_pos, [3.1, 7.9, 5.0, 6.2]))]
group = Dataset.from_records(schema, recs).groups[0]

print("labels\n", group.labels)
print("confidence\n", np.round(group.confidences, 2))

for strategy in ("confidence", "quality"):
    for k in (1, 2, 4):
        out = consolidate_subject(group, ConsolidationConfig(strategy, k))
        print(f"{strategy:10s} k={k}: {out.labels}  votes {out.votes.tolist()}")

# Where did the Eyeglasses answer come from?
out = consolidate_subject(group, ConsolidationConfig("confidence", 3))
print(out.provenance(1))

# Tie-break on an even vote.
print(majority_vote([1, 0], [0.2, 0.9]), majority_vote([1, 0], [0.9, 0.2]))
