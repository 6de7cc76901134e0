"""conceptforge: unsupervised part discovery from CNN feature populations.

Cluster l2-normalized feature-population responses into a dictionary of
visual concepts, turn each concept into a point part-detector, and score the
detectors against keypoint/part annotations with precision-recall / AP.
"""

__version__ = "0.1.0"

from .corpus import (
    LayerSpec, VGG16_LAYERS, ImageMeta, FeatureTensor, GroundTruthInstance,
    PopulationSample, SyntheticSpec, FormatError, AnnotationError,
    write_feature_file, read_feature_file, save_corpus, load_corpus,
    load_annotations, write_annotations, load_merge_map,
    generate_synthetic_corpus,
)
from .concepts import (
    VisualConcept, ConceptDictionary, LloydResult, DegenerateVectorError,
    l2_normalize, sample_responses, kmeans_pp_seed, lloyd, learn_dictionary,
    merge_dictionary, save_dictionary, load_dictionary,
)
from .detector import (
    Detection, RF_OFFSETS, grid_to_pixel, default_nms_radius, score_map, nms,
    detect, single_filter_detect, detect_dictionary, write_detections,
    read_detections,
)
from .evaluation import (
    MatchResult, PRCurve, EvalReport, match_detections, average_precision,
    pr_curve, best_concept_per_part, best_subset_per_concept, ap_histograms,
    viewpoint_controlled_eval, evaluate_dictionary, render_report,
    ap_matrix_lines, DEFAULT_MATCH_RADIUS,
)
from .visualize import (
    PatchRef, AverageMap, top_patches, random_of_top, average_intensity_map,
    montage, save_ppm, load_ppm, directory_image_store, mapping_image_store,
)
