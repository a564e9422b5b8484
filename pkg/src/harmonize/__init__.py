"""Subject customization mechanics on a toy latent diffusion model.

Two mechanisms are provided: projecting visual tokens off the textual
subspace of the prompt (:class:`OrthogonalProjector`) and a masked
self-attention swap between two lockstep denoising passes
(:func:`run_dual`).
"""

__version__ = "0.1.0"

from .embedding import (  # noqa: E402
    ContextMode,
    ContextualEmbedding,
    TextEmbedding,
    TokenRole,
    VisualEmbedding,
    compose_context,
    encode_text,
    encode_visual,
)
from .orchestration import OrthogonalProjector, build_basis, orchestrate, orthogonalize  # noqa: E402
from .attention import attn_swap, cross_attention, masked_attn_swap, self_attention  # noqa: E402
from .masking import SubjectMask, aggregate_subject_saliency, binarize  # noqa: E402
from .denoiser import LatentState, ToyDenoiser, ldm_loss  # noqa: E402
from .sampler import (  # noqa: E402
    NoiseSchedule,
    SwapWindow,
    ddim_step,
    run_ablation,
    run_dual,
    run_single,
)
from .metrics import HistogramExtractor, MaskedPair, ablation_report, masked_similarity  # noqa: E402

__all__ = [
    "ContextMode",
    "ContextualEmbedding",
    "HistogramExtractor",
    "LatentState",
    "MaskedPair",
    "NoiseSchedule",
    "OrthogonalProjector",
    "SubjectMask",
    "SwapWindow",
    "TextEmbedding",
    "TokenRole",
    "ToyDenoiser",
    "VisualEmbedding",
    "ablation_report",
    "aggregate_subject_saliency",
    "attn_swap",
    "binarize",
    "build_basis",
    "compose_context",
    "cross_attention",
    "ddim_step",
    "encode_text",
    "encode_visual",
    "ldm_loss",
    "masked_attn_swap",
    "masked_similarity",
    "orchestrate",
    "orthogonalize",
    "run_ablation",
    "run_dual",
    "run_single",
    "self_attention",
]
