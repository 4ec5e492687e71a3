"""
Run Metrics
Метрики запуска: исправления данных, пропущенные регионы, клиппинг градиента, неудачные запуски
"""

import threading
from collections import Counter, defaultdict, deque
from typing import Any, Deque, Dict, List, Mapping, Optional, Tuple

MetricKey = Tuple[str, Tuple[Tuple[str, str], ...]]


def _key(name: str, labels: Optional[Mapping[str, Any]]) -> MetricKey:
    return name, tuple(sorted((str(k), str(v)) for k, v in (labels or {}).items()))


def _render(key: MetricKey) -> str:
    name, labels = key
    if not labels:
        return name
    return name + "{" + ",".join(f"{k}={v}" for k, v in labels) + "}"


class SimpleMetrics:
    """Счетчики, текущие значения и история по шагам обучения (в пределах процесса)"""

    def __init__(self, history_size: int = 1000):
        self._history_size = history_size
        self._counters: Counter = Counter()
        self._gauges: Dict[MetricKey, float] = {}
        self._history: Dict[MetricKey, Deque[Dict[str, Any]]] = defaultdict(
            lambda: deque(maxlen=self._history_size)
        )
        self._lock = threading.Lock()

    def increment_counter(self, name: str, labels: Optional[Mapping[str, Any]] = None, value: int = 1) -> None:
        with self._lock:
            self._counters[_key(name, labels)] += int(value)

    def set_gauge(self, name: str, value: float, labels: Optional[Mapping[str, Any]] = None) -> None:
        with self._lock:
            self._gauges[_key(name, labels)] = float(value)

    def record_metric(self, name: str, value: float, labels: Optional[Mapping[str, Any]] = None,
                      step: Optional[int] = None) -> None:
        """Точка истории, например loss на итерации step"""
        with self._lock:
            self._history[_key(name, labels)].append({"value": float(value), "step": step})

    def get_counter(self, name: str, labels: Optional[Mapping[str, Any]] = None) -> int:
        return self._counters.get(_key(name, labels), 0)

    def get_metric_history(self, name: str, labels: Optional[Mapping[str, Any]] = None) -> List[Dict[str, Any]]:
        return list(self._history.get(_key(name, labels), ()))

    def summary(self) -> Dict[str, Any]:
        """Плоская сводка для итоговой строки лога команды"""
        with self._lock:
            flat: Dict[str, Any] = {_render(key): count for key, count in self._counters.items() if count}
            flat.update({_render(key): value for key, value in self._gauges.items()})
        return flat

    def reset(self) -> None:
        with self._lock:
            self._counters.clear()
            self._gauges.clear()
            self._history.clear()


metrics = SimpleMetrics()
