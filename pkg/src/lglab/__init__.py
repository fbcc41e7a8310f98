"""Surrogate-gradient training for discrete structured latent variables.

The package compares surrogate gradient estimators for neural networks
with an argmax bottleneck over a finite structure polytope: projected
pullback (spigot), straight-through, cross-entropy and exponentiated
gradient pullback variants, plus exact relaxed and minimum-risk
baselines.  Every numerical claim is backed by a brute-force or
finite-difference oracle; see ``lglab.oracles`` and the ``lglab check``
command.
"""

from .backends import BACKEND, USING_NUMBA
from .errors import (
    CapExceeded,
    ConfigError,
    DivergedGradient,
    LglabError,
    NoConvergence,
    ShapeMismatch,
)
from .estimators import (
    EstimatorConfig,
    InitPoint,
    PullbackGradient,
    Rule,
    ce_grad_unstructured,
    eg_grad_unstructured,
    make_init_point,
    minrisk_grad,
    perceptron_grad,
    pullback_descend,
    relaxed_grad,
    softmax_jacobian,
    spigot_grad,
    ste_grad,
    struct_ce_grad,
    struct_eg_grad,
)
from .harness import (
    ModelConfig,
    OptimizerConfig,
    RunRecord,
    Task,
    TaskKind,
    TaskSpec,
    evaluate_latent,
    generate_task,
    train_run,
)
from .model import (
    Activation,
    ForwardTrace,
    LatentModel,
    LossKind,
    decoder_backward,
    encoder_backward,
    finite_diff_check,
    forward,
    init_model,
    load_model,
    save_model,
)
from .polytope import (
    FamilyKind,
    MeanPoint,
    StructureFamily,
    VertexDistribution,
    enumerate_vertices,
    gibbs_marginals,
    map_decode,
    map_decode_index,
    project_polytope,
    project_simplex,
    softmax,
    sparsemap,
)

__version__ = "0.1.0"
