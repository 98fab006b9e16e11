"""Line-delimited metric records (one JSON object per line).

Records carry no timestamps so identical runs produce byte-identical streams.
"""

import json
from pathlib import Path


class MetricsLog:
    """Appends structured records to a .jsonl file and keeps them in memory."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record):
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        return record


def read_records(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
