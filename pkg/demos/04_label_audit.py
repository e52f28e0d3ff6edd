"""
Auditing and repairing annotation labels
========================================

Human labels for the same person can disagree too. Running the
inconsistency measure on annotations finds them; replacing stable
attributes with the consolidated subject label removes them. Transient
attributes such as Smiling are left alone.
"""

import numpy as np

from attrcons import (
    AttributeSchema, ConsolidationConfig, Dataset, ImageRecord, audit_labels,
    consolidate_dataset, correct_labels,
)
from attrcons.synth import NoiseModel, generate

schema = AttributeSchema.celeba()
truth, predictions = generate(50, 6, NoiseModel(flip_prob=0.2), seed=1)

# Annotators saw the same photos and got 5% of labels wrong.
rng = np.random.default_rng(2)
records = []
for rec in predictions.records():
    true = truth.of(rec.subject_id)
    slip = rng.random(true.shape) < 0.05
    records.append(ImageRecord.from_labels(rec.image_id, rec.subject_id, np.where(slip, 1 - true, true)))
annotations = Dataset.from_records(schema, records)

before = audit_labels(annotations)
worst = np.argsort(before.mean_im)[::-1][:5]
print("most inconsistent:", [(schema.names[j], round(float(before.mean_im[j]), 1)) for j in worst])

consolidated = consolidate_dataset(predictions, ConsolidationConfig("confidence", 3))
fixed = correct_labels(annotations, consolidated)
print(len(fixed.changes), "labels changed, e.g.", fixed.changes[0])

# How many of the changes restored the true label?
names = list(schema.names)
right = sum(c.new == truth.of(c.subject_id)[names.index(c.attribute)] for c in fixed.changes)
print(f"{right}/{len(fixed.changes)} changes agree with the truth")

after = audit_labels(fixed.dataset)
stable = np.array(schema.stable)
print("max im on stable attributes:", after.im[:, stable].max())
print("Smiling before/after:", before.per_attribute["Smiling"], after.per_attribute["Smiling"])

# Running it again changes nothing.
print(correct_labels(fixed.dataset, consolidated).changes)
