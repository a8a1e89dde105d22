"""Physics-informed DeepONet with latent interface embeddings for elliptic interface problems."""

import jax

# Every tolerance in this package assumes 64-bit arithmetic.
jax.config.update("jax_enable_x64", True)

from .numcore import Mlp, MlpSpec, mlp_forward, mlp_init  # noqa: E402
from .embedding import Embedding, embed, embed_forced, make_embedding  # noqa: E402
from .deeponet import DeepOnetBaseline, InputFunctionSample, PhiDeepOnet, forward  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "DeepOnetBaseline",
    "Embedding",
    "InputFunctionSample",
    "Mlp",
    "MlpSpec",
    "PhiDeepOnet",
    "embed",
    "embed_forced",
    "forward",
    "make_embedding",
    "mlp_forward",
    "mlp_init",
]
