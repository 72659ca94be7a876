from dotenv import load_dotenv
import os
from typing import Optional

load_dotenv()


def _flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Settings:
    PROJECT_NAME: str = "Pushdown Storage"
    PROJECT_VERSION: str = "1.0"
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Блочное устройство
    BLOCK_SIZE: int = int(os.getenv("BLOCK_SIZE", 512))
    CAPACITY_BLOCKS: int = int(os.getenv("CAPACITY_BLOCKS", 262144))
    BACKING_PATH: Optional[str] = os.getenv("BACKING_PATH") or None
    FRAGMENT_PROBABILITY: float = float(os.getenv("FRAGMENT_PROBABILITY", 0.0))

    # Адреса таргета
    TARGET_HOST: str = os.getenv("TARGET_HOST", "127.0.0.1")
    TARGET_PORT: int = int(os.getenv("TARGET_PORT", 4420))
    SYNC_PORT: int = int(os.getenv("SYNC_PORT", 4421))
    ADMIN_PORT: int = int(os.getenv("ADMIN_PORT", 8000))

    SYNC_POLL_INTERVAL_MS: float = float(os.getenv("SYNC_POLL_INTERVAL_MS", 1))

    # Ограничения исполнения функций на таргете
    MAX_RESUBMISSIONS: int = int(os.getenv("MAX_RESUBMISSIONS", 64))
    MAX_READ_LENGTH: int = int(os.getenv("MAX_READ_LENGTH", 1 << 20))
    MAX_STEPS_PER_CALL: int = int(os.getenv("MAX_STEPS_PER_CALL", 1 << 20))

    READ_RETRIES: int = int(os.getenv("READ_RETRIES", 3))
    REQUEST_TIMEOUT_S: float = float(os.getenv("REQUEST_TIMEOUT_S", 10))

    # LSM
    MEMTABLE_BYTES: int = int(os.getenv("MEMTABLE_BYTES", 64 * 1024))
    SST_TARGET_BYTES: int = int(os.getenv("SST_TARGET_BYTES", 256 * 1024))
    DATA_BLOCK_BYTES: int = int(os.getenv("DATA_BLOCK_BYTES", 4096))
    L0_COMPACTION_TRIGGER: int = int(os.getenv("L0_COMPACTION_TRIGGER", 4))
    LEVEL_SIZE_RATIO: int = int(os.getenv("LEVEL_SIZE_RATIO", 10))
    L1_MAX_BYTES: int = int(os.getenv("L1_MAX_BYTES", 1 << 20))
    BLOOM_BITS_PER_KEY: int = int(os.getenv("BLOOM_BITS_PER_KEY", 0))
    PIN_INDEX_BLOCKS: bool = _flag("PIN_INDEX_BLOCKS", "true")
    CACHE_BYTES: int = int(os.getenv("CACHE_BYTES", 8 << 20))
    SAMPLING_RATE: float = float(os.getenv("SAMPLING_RATE", 0.01))
    PUSHDOWN_CACHE_POLICY: str = os.getenv("PUSHDOWN_CACHE_POLICY", "final_only")

    # BPF-KV
    BTREE_NODE_SIZE: int = int(os.getenv("BTREE_NODE_SIZE", 512))
    BTREE_FANOUT: int = int(os.getenv("BTREE_FANOUT", 31))

    @property
    def TARGET_ADDRESS(self) -> str:
        return f"{self.TARGET_HOST}:{self.TARGET_PORT}"

    @property
    def SYNC_ADDRESS(self) -> str:
        return f"{self.TARGET_HOST}:{self.SYNC_PORT}"


settings = Settings()


def parse_address(value: str) -> tuple[str, int]:
    """Разбор адреса вида host:port."""
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"Некорректный адрес: {value!r}, ожидается host:port")
    return host or "0.0.0.0", int(port)
