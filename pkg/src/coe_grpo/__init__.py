"""Evidence-trace tuning and group-relative policy optimization on a toy
image-forensics world.

Stage 1 tunes a small autoregressive policy on gold evidence traces; stage 2
refines it with group-standardized advantages under a composite reward
(answer, think alignment and logic, multi-view agreement).
"""

from .env import ForensicInstance, StratifiedMix, gen_dataset
from .estimators import CoETuningClassifier, EvidenceFeaturizer, RGRPOClassifier
from .rewards import OracleJudge, RewardWeights
from .rgrpo import RgrpoConfig, train_rgrpo
from .sft import SftConfig, train_sft

__version__ = "0.1.0"

__all__ = [
    "ForensicInstance", "StratifiedMix", "gen_dataset", "CoETuningClassifier",
    "EvidenceFeaturizer", "RGRPOClassifier", "OracleJudge", "RewardWeights",
    "RgrpoConfig", "train_rgrpo", "SftConfig", "train_sft",
]
