from enum import Enum


class Workload(str, Enum):
    YCSB_A = "ycsb_a"
    YCSB_B = "ycsb_b"
    YCSB_C = "ycsb_c"
    YCSB_D = "ycsb_d"
    YCSB_F = "ycsb_f"
    UNIFORM_READ = "uniform_read"
    UNIFORM_5050 = "uniform_5050"
    RANGE_READ = "range_read"
    TRACE = "trace"


class Distribution(str, Enum):
    ZIPFIAN = "zipfian"
    UNIFORM = "uniform"
    LATEST = "latest"


class System(str, Enum):
    LSMKV = "lsmkv"
    BPFKV = "bpfkv"


class OpKind(str, Enum):
    READ = "read"
    UPDATE = "update"
    INSERT = "insert"
    RMW = "rmw"
    SCAN = "scan"
