from .cobb import (CobbResult, CobbTriple, GeometryError, angle_matrix, cobb_angles, directions,
                   ensemble_mean, pairwise_angle, threshold_small_angles, vertebra_direction)
from .landmarks import (LandmarkError, LandmarkSet, LandmarkWarning, format_landmarks,
                        parse_landmarks, read_landmarks, write_landmarks)
from .raster import (BACKGROUND, BONE, GAP, PGM_LEVELS, levels_to_mask, mask_to_levels,
                     rasterize_mask)
