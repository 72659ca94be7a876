from enum import Enum


class ReadMode(str, Enum):
    BASELINE = "baseline"
    PUSHDOWN = "pushdown"


class CachePolicy(str, Enum):
    FINAL_ONLY = "final_only"
    NONE = "none"
