"""Rule-based rewards and GRPO for generalized multi-image visual grounding."""

from groundrl.geometry import BoundingBox, GroundedInstance, PromptRecord, iou, validate_prompt
from groundrl.matching import MatchResult, brute_force_match, match_instances
from groundrl.parser import DEFAULT_TAGS, Mode, ParsedCompletion, TagScheme, parse_completion
from groundrl.rewards import RewardConfig, RewardVector, score_completion, total_reward

__version__ = "0.1.0"
