from enum import IntEnum


class FunctionId(IntEnum):
    BTREE_LOOKUP = 1
    BTREE_RANGE = 2
    SST_CHAIN = 3


class FallbackReason(IntEnum):
    BAD_LAYOUT = 1
    BAD_NODE = 2
    SPLIT_BLOCK = 3
    PARSE_ERROR = 4


class SstStage(IntEnum):
    INDEX_BLOCK = 0
    DATA_BLOCK = 1
