import logging
import threading
from pathlib import Path
from typing import Dict, Iterator, Optional

from pydantic import ValidationError

from fractal_penergy.models.schemas import ResultRecord
from fractal_penergy.services.interface.store_interface import ResultStoreInterface


class JsonlResultStore(ResultStoreInterface):
    """File-backed result cache: one ResultRecord per line, later lines win."""

    logger = logging.getLogger(__name__)

    def __init__(self, path: Path) -> None:
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.store: Dict[str, ResultRecord] = {}
        self._lines = 0
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        skipped = 0
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                self._lines += 1
                try:
                    record = ResultRecord.model_validate_json(line)
                except ValidationError:
                    skipped += 1
                    continue
                self.store[record.input_hash] = record
        if skipped:
            self.logger.warning("Skipped %d unreadable lines in %s", skipped, self.path)
        self.logger.debug("Loaded %d cached results from %s", len(self.store), self.path)

    def get(self, input_hash: str) -> Optional[ResultRecord]:
        return self.store.get(input_hash)

    def put(self, record: ResultRecord) -> None:
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(record.model_dump_json() + "\n")
            self.store[record.input_hash] = record
            self._lines += 1

    def records(self) -> Iterator[ResultRecord]:
        return iter(list(self.store.values()))

    def compact(self) -> int:
        with self._lock:
            dropped = self._lines - len(self.store)
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                for record in self.store.values():
                    fh.write(record.model_dump_json() + "\n")
            tmp.replace(self.path)
            self._lines = len(self.store)
        self.logger.info(
            "Compacted %s: %d records kept, %d lines dropped", self.path, len(self.store), dropped
        )
        return dropped
