from .codebook import EmbeddingCodebook, UnknownLabelError
from .io import (HeaderError, SceneFileError, TruncationError, VersionError,
                 load_scene, save_scene, scene_from_bytes, scene_to_bytes)
from .model import (EditRecord, GaussianSplat, SceneModel, covariance,
                    n_sh_coeffs, quat_to_rotmat)

__all__ = [
    "EmbeddingCodebook", "UnknownLabelError",
    "GaussianSplat", "SceneModel", "EditRecord", "covariance",
    "quat_to_rotmat", "n_sh_coeffs",
    "save_scene", "load_scene", "scene_to_bytes", "scene_from_bytes",
    "SceneFileError", "HeaderError", "VersionError", "TruncationError",
]
