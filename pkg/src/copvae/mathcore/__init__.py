"""Special functions, dense linear algebra and the reverse-mode gradient engine."""

from copvae.mathcore import autodiff as ad
from copvae.mathcore.autodiff import (
    Tensor,
    finite_difference,
    grad,
    gradient_error,
    value_and_grad,
)
from copvae.mathcore.linalg import (
    cholesky,
    n_angles,
    plane_rotation,
    rotation_matrix,
    rotation_planes,
    rotation_tensor,
)
from copvae.mathcore.special import (
    std_normal_cdf,
    std_normal_logpdf,
    std_normal_pdf,
    std_normal_quantile,
)

__all__ = [
    "Tensor",
    "ad",
    "cholesky",
    "finite_difference",
    "grad",
    "gradient_error",
    "n_angles",
    "plane_rotation",
    "rotation_matrix",
    "rotation_planes",
    "rotation_tensor",
    "std_normal_cdf",
    "std_normal_logpdf",
    "std_normal_pdf",
    "std_normal_quantile",
    "value_and_grad",
]
