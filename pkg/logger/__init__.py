# Logger package: JSONL training metrics.
