"""Two-chunk peer-to-peer swarm models: exact jump-process simulation and fluid-limit analysis."""
from .models import (
    DomainError,
    ModelKind,
    ModelSpec,
    TransitionRule,
    build_model,
    from_transformed,
    limit_consistency_residual,
    to_transformed,
    transformed_field,
    transition_rates,
    vector_field,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "ModelKind",
    "ModelSpec",
    "TransitionRule",
    "build_model",
    "from_transformed",
    "limit_consistency_residual",
    "to_transformed",
    "transformed_field",
    "transition_rates",
    "vector_field",
    "__version__",
]
