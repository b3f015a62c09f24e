"""Illuminant estimation from luminance-conditioned per-pixel chromaticity statistics."""
from ._kernels import BACKEND
from .colorspace import angular_error, bin_center, chromaticity_of, quantize_chroma, quantize_luminance
from .imaging import GroundTruth, LinearImage, correct_image, load_linear_image, normalize_luminance, relight
from .inference import GMap, build_gmap, estimate, estimate_illuminant, posterior, score_candidates
from .model import CandidateSet, ModelBundle, build_candidate_set, deserialize, serialize, train_empirical

__version__ = "0.1.0"
