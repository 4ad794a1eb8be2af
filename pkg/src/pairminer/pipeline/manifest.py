"""Run manifest: ordered stage records with statuses, counts and output
digests.  The orchestrator is the single writer; every save is atomic."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from ..errors import PairminerError, ReconciliationMismatchError
from ..ioutil import atomic_write_text, count_lines, sha256_file

STAGE_ORDER = (
    "retrieve",
    "filter_docs",
    "render",
    "transcribe",
    "segment",
    "extract",
    "filter_items",
    "match",
    "collect",
    "judge",
    "emit",
)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class OutputFile:
    path: str           # relative to the run directory
    count: int
    sha256: str

    def to_record(self) -> dict:
        return {"path": self.path, "count": self.count, "sha256": self.sha256}


@dataclass
class StageRecord:
    name: str
    status: str = "pending"     # pending | running | done | failed
    input_count: int = 0
    output_count: int = 0
    outputs: list[OutputFile] = field(default_factory=list)
    drops: dict[str, int] = field(default_factory=dict)
    started_at: str | None = None
    finished_at: str | None = None
    error: str | None = None
    note: str | None = None

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "input_count": self.input_count,
            "output_count": self.output_count,
            "outputs": [o.to_record() for o in self.outputs],
            "drops": self.drops,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "error": self.error,
            "note": self.note,
        }

    @classmethod
    def from_record(cls, record: dict) -> "StageRecord":
        return cls(
            name=record["name"],
            status=record.get("status", "pending"),
            input_count=record.get("input_count", 0),
            output_count=record.get("output_count", 0),
            outputs=[
                OutputFile(o["path"], o["count"], o["sha256"])
                for o in record.get("outputs", [])
            ],
            drops=dict(record.get("drops", {})),
            started_at=record.get("started_at"),
            finished_at=record.get("finished_at"),
            error=record.get("error"),
            note=record.get("note"),
        )


@dataclass
class RunManifest:
    run_id: str
    config_digest: str
    stages: list[StageRecord]

    @classmethod
    def new(cls, run_id: str, config_digest: str) -> "RunManifest":
        return cls(
            run_id=run_id,
            config_digest=config_digest,
            stages=[StageRecord(name=name) for name in STAGE_ORDER],
        )

    def stage(self, name: str) -> StageRecord:
        for record in self.stages:
            if record.name == name:
                return record
        raise PairminerError(f"unknown stage {name!r}")

    def first_incomplete(self) -> str | None:
        for record in self.stages:
            if record.status != "done":
                return record.name
        return None

    def mark_running(self, name: str) -> None:
        record = self.stage(name)
        record.status = "running"
        record.started_at = _now()
        record.error = None

    def mark_done(
        self,
        name: str,
        input_count: int,
        output_count: int,
        outputs: list[OutputFile],
        drops: dict[str, int],
        note: str | None = None,
    ) -> None:
        record = self.stage(name)
        record.status = "done"
        record.input_count = input_count
        record.output_count = output_count
        record.outputs = outputs
        record.drops = drops
        record.finished_at = _now()
        record.note = note

    def mark_failed(self, name: str, error: str) -> None:
        record = self.stage(name)
        record.status = "failed"
        record.error = error
        record.finished_at = _now()

    def reset_from(self, name: str) -> None:
        """Set the named stage and everything after it back to pending."""
        if name not in STAGE_ORDER:
            raise PairminerError(f"unknown stage {name!r}")
        start = STAGE_ORDER.index(name)
        for i in range(start, len(self.stages)):
            self.stages[i] = StageRecord(name=self.stages[i].name)

    # -- persistence ---------------------------------------------------------

    def save(self, path: Path) -> None:
        payload = {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "stages": [s.to_record() for s in self.stages],
        }
        atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(
            run_id=payload["run_id"],
            config_digest=payload["config_digest"],
            stages=[StageRecord.from_record(s) for s in payload["stages"]],
        )


def verify_stage_outputs(run_dir: Path, record: StageRecord) -> None:
    """Recheck a done stage's outputs on disk against the manifest.

    Any missing file, count drift, or byte drift means the outputs were
    corrupted or tampered with after the stage completed.
    """
    for output in record.outputs:
        path = run_dir / output.path
        if not path.exists():
            raise ReconciliationMismatchError(
                f"stage {record.name!r}: output {output.path} is missing"
            )
        actual_count = count_lines(path)
        if actual_count != output.count:
            raise ReconciliationMismatchError(
                f"stage {record.name!r}: {output.path} has {actual_count} lines, "
                f"manifest says {output.count}"
            )
        actual_digest = sha256_file(path)
        if actual_digest != output.sha256:
            raise ReconciliationMismatchError(
                f"stage {record.name!r}: {output.path} content differs from the "
                "manifest digest"
            )
