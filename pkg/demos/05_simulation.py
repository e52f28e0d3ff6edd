"""
Strategies under controlled noise
=================================

The simulator flips each true label with a fixed probability and draws the
classifier's confidence from Beta(8, 2) when the label is right and
Beta(2, 8) when it is wrong. Picking the most confident image should beat
trusting a random image, and picking by quality only helps when image
quality and error rate are linked.
"""

from math import comb

from attrcons import ConsolidationConfig, consolidate_dataset
from attrcons.synth import ExperimentConfig, NoiseModel, evaluate, generate, run_experiment

for link in (0.0, 1.0):
    cfg = ExperimentConfig(
        n_subjects=50, images_per_subject=10,
        noise=NoiseModel(flip_prob=0.2, quality_link=link),
        strategies=("confidence", "quality"), ks=(1, 3, 10), seeds=tuple(range(10)),
    )
    report = run_experiment(cfg)
    print(f"quality_link={link}  baseline {report.mean_baseline():.4f}")
    for strategy, k, acc in report.summary():
        print(f"  {strategy:10s} top-{k:<2d} {acc:.4f}")

# Full majority against the closed form: with 9 voters each right 90% of
# the time, the majority is right with probability sum_{m>=5} C(9,m) .9^m .1^(9-m).
closed = sum(comb(9, m) * 0.9 ** m * 0.1 ** (9 - m) for m in range(5, 10))
truth, data = generate(2000, 9, NoiseModel(flip_prob=0.1), seed=0)
acc = evaluate(consolidate_dataset(data, ConsolidationConfig("confidence", 9)), truth)
print(f"majority of 9: simulated {acc:.4f}, closed form {closed:.4f}")
