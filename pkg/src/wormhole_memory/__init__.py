"""Cross-session memory engine: multi-axis vector memory with surprise-gated
updates, barrier-controlled cross-dialogue retrieval, and evaluation tooling."""

from .barrier import BarrierMode, SessionRegistry, authorize, open_session, run_script
from .dynamics import DynamicsParams, apply_update, decay, momentum_merge, surprise
from .embedder import EmbedderConfig, EmbeddingVector, cosine, embed
from .merge import ContextState, MergeParams, cot_integrate, residual_merge
from .retrieval import (Query, RetrievalParams, RetrievalResult, build_query, distance,
                        hierarchy_correction, retrieve_best, top_k)
from .store import AxisFilter, MemoryKey, MemoryRecord, MemoryStore, make_key

__version__ = "0.1.0"
