"""silhlift: dense 3D shape from class-labeled silhouettes and keypoints.

Pipeline modules:
  dataset  annotated silhouette collections, mirroring, synthetic rendering
  sfm      scaled-orthographic factorization of keypoint tracks
  refine   silhouette-driven camera refinement
  carve    surrogate-view visual hulls with silhouette imprinting
  rank     silhouette-consistency ranking of proposals
  meshkit  voxel surfaces, mesh distances, hulls, clustering, mesh IO
  cli      the ``silhlift`` command line tool
"""

__version__ = "0.1.0"

from .kernels import backend_name
from . import dataset
from . import sfm
from . import refine
from . import carve
from . import rank
from . import meshkit
from . import shapes

__all__ = [
    "backend_name",
    "dataset",
    "sfm",
    "refine",
    "carve",
    "rank",
    "meshkit",
    "shapes",
    "__version__",
]
