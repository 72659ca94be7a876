import random
import threading
from typing import Optional

from src.core.config import settings


class SamplingPolicy:
    """Доля запросов, идущих обычным путем, чтобы обновлять кэш промежуточными блоками."""

    def __init__(self, rate: float = settings.SAMPLING_RATE, seed: Optional[int] = None):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"Доля выборки {rate} вне [0, 1]")
        self.rate = rate
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.decisions = 0
        self.sampled = 0

    def decide(self) -> bool:
        with self._lock:
            self.decisions += 1
            hit = self.rate >= 1.0 or (self.rate > 0.0 and self._rng.random() < self.rate)
            if hit:
                self.sampled += 1
            return hit
