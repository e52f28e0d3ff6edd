"""
How inconsistent are per-image predictions for one person?
==========================================================

Each subject has several photos, and a per-image classifier gives every
photo its own answer. The inconsistency measure turns the split between
positive and negative answers into a score from 0 (unanimous) to 100
(an even split).
"""

import numpy as np

from attrcons import AttributeSchema, Dataset, ImageRecord, dataset_im, im_from_counts

# A few hand-picked splits first.
for c_pos, c_neg in [(5, 0), (4, 1), (3, 2), (2, 2), (8, 2)]:
    v = im_from_counts(c_pos, c_neg)
    print(f"{c_pos} yes / {c_neg} no  ->  ratio {v.ratio:.3f}  im {v.im:6.2f}")

# Now a tiny dataset: three people, two attributes.
schema = AttributeSchema(("Male", "Smiling"), stable=(True, False))
labels = {
    "ann": [[0, 1], [0, 0], [0, 1]],
    "bob": [[1, 0], [1, 0], [0, 1], [1, 1]],
    "cy": [[1, 1]],
}
records = [
    ImageRecord.from_labels(f"{who}_{i}", who, row)
    for who, rows in labels.items()
    for i, row in enumerate(rows)
]
data = Dataset.from_records(schema, records)

report = dataset_im(data)
for sid, name, v in report.per_subject():
    print(f"{sid:4s} {name:8s} {v.c_pos}/{v.c_neg}  im {v.im:6.2f}")

# The dataset summary is a plain mean over subjects, singletons included.
print(report.per_attribute)

# Dropping singletons changes the picture for Smiling.
print(dataset_im(data, min_group_size=2).per_attribute)

# Smiling varies from photo to photo, so it should score higher than
# Male on real data. A random table shows the scale of pure noise:
rng = np.random.default_rng(0)
coin = [ImageRecord.from_labels(f"x{i}", f"p{i // 6}", rng.integers(0, 2, 2)) for i in range(600)]
print(dataset_im(Dataset.from_records(schema, coin)).mean_im)
