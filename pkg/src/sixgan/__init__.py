"""Pattern-specialized adversarial generation of IPv6 scan targets.

Seeds are classified into address-configuration patterns, one sequence
generator per pattern is trained against a shared multi-class
discriminator with alias-aware policy-gradient rewards, and candidate
targets are sampled under an allocated probe budget.
"""

from .addr import (
    AddressParseError,
    AliasTrie,
    NybblePrefix,
    NybbleSeq,
    alias_match,
    format_address,
    parse_address,
    parse_prefix,
)
from .alias import AliasDetector, alias_score, filter_aliased
from .classify import (
    LabeledSeedCorpus,
    PatternLabel,
    classify_entropy,
    classify_ipv62vec,
    classify_rfc,
    classify_rfc_corpus,
)
from .gan import (
    DiscriminatorModel,
    GeneratorModel,
    RewardConfig,
    TrainSchedule,
    generate_candidates,
    sample_sequences,
    train_6gan,
)
from .metrics import (
    CandidateSet,
    EvaluationReport,
    allocate_budget,
    cosine_sim,
    diversity,
    evaluate,
    jaccard_sim,
    novelty,
    pattern_quality,
)
from .nn import DivergenceError, grad_check, load_checkpoint, save_checkpoint
from .oracle import (
    PatternFamily,
    ProbeStatus,
    UniverseOracle,
    UniverseSpec,
    build_universe,
    sample_seeds,
)

__version__ = "0.1.0"

__all__ = [
    "AddressParseError",
    "AliasDetector",
    "AliasTrie",
    "CandidateSet",
    "DiscriminatorModel",
    "DivergenceError",
    "EvaluationReport",
    "GeneratorModel",
    "LabeledSeedCorpus",
    "NybblePrefix",
    "NybbleSeq",
    "PatternFamily",
    "PatternLabel",
    "ProbeStatus",
    "RewardConfig",
    "TrainSchedule",
    "UniverseOracle",
    "UniverseSpec",
    "alias_match",
    "alias_score",
    "allocate_budget",
    "build_universe",
    "classify_entropy",
    "classify_ipv62vec",
    "classify_rfc",
    "classify_rfc_corpus",
    "cosine_sim",
    "diversity",
    "evaluate",
    "filter_aliased",
    "format_address",
    "generate_candidates",
    "grad_check",
    "jaccard_sim",
    "load_checkpoint",
    "novelty",
    "parse_address",
    "parse_prefix",
    "pattern_quality",
    "sample_seeds",
    "sample_sequences",
    "save_checkpoint",
    "train_6gan",
    "__version__",
]
