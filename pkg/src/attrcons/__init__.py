"""Subject-level facial attributes from multiple images.

Measure how inconsistent per-image attribute predictions are within a
subject, pick or fuse images by classifier confidence or image quality, and
audit or correct inconsistent annotation labels.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AttrConsError, ConfigError, EmptyGroupError, MissingQualityError, ParseError, QualityError,
)
from .model import (  # noqa: E402
    AttributePrediction, AttributeSchema, Dataset, ImageRecord, Landmarks, SubjectGroup,
    binary_label, load_annotations, load_predictions, load_schema,
)
from .inconsistency import (  # noqa: E402
    AttributeIM, IMReport, audit_labels, count_outcomes, dataset_im, im_from_counts, subject_im,
)
from .quality import (  # noqa: E402
    GrayImage, QualityFeatures, QualityWeights, compute_features, quality_score, score_group,
)
from .consolidate import (  # noqa: E402
    ConsolidationConfig, SubjectAttributes, confidence, consolidate_dataset, consolidate_subject,
    correct_labels, majority_vote, rank_for_attribute, select_by_confidence,
)
