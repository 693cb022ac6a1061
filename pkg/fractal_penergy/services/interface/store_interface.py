from typing import Iterator, Optional, Protocol

from fractal_penergy.models.schemas import ResultRecord


class ResultStoreInterface(Protocol):
    def get(self, input_hash: str) -> Optional[ResultRecord]:
        """Return the latest record stored under the hash, if any."""

    def put(self, record: ResultRecord) -> None:
        """Append a record; later records win over earlier ones."""

    def records(self) -> Iterator[ResultRecord]:
        """Iterate over the current (deduplicated) records."""

    def compact(self) -> int:
        """Rewrite the backing file with one line per hash; returns lines dropped."""
