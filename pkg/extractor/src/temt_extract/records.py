"""Raw JSONL post records: parsing, validation, grouping into timelines.

Input schema, one JSON object per line:
    {"user_id": str, "label": 0|1, "timestamp": ISO-8601 str,
     "text": non-empty str, "image_path": optional str}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path


class RawCorpusError(Exception):
    """Malformed input JSONL."""


@dataclass
class RawPost:
    user_id: str
    label: int
    timestamp: float  # seconds since epoch
    text: str
    image_path: str | None = None


def parse_timestamp(value: str) -> float:
    """ISO-8601 to epoch seconds; naive stamps are taken as UTC."""
    text = value.replace("Z", "+00:00") if value.endswith("Z") else value
    try:
        moment = datetime.fromisoformat(text)
    except ValueError as exc:
        raise RawCorpusError(f"bad timestamp {value!r}: {exc}") from exc
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.timestamp()


def parse_post(obj: dict, line_no: int) -> RawPost:
    try:
        user_id = obj["user_id"]
        label = int(obj["label"])
        timestamp = parse_timestamp(obj["timestamp"])
        text = obj["text"]
    except KeyError as exc:
        raise RawCorpusError(f"line {line_no}: missing field {exc}") from exc
    if not isinstance(user_id, str) or not user_id:
        raise RawCorpusError(f"line {line_no}: user_id must be a non-empty string")
    if label not in (0, 1):
        raise RawCorpusError(f"line {line_no}: label must be 0 or 1, got {obj['label']!r}")
    if not isinstance(text, str) or not text.strip():
        raise RawCorpusError(f"line {line_no}: text must be non-empty (titles stand in for captionless posts)")
    image_path = obj.get("image_path")
    if image_path is not None and not isinstance(image_path, str):
        raise RawCorpusError(f"line {line_no}: image_path must be a string when present")
    return RawPost(user_id=user_id, label=label, timestamp=timestamp,
                   text=text, image_path=image_path)


def load_jsonl(path: str | Path) -> list[RawPost]:
    posts: list[RawPost] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RawCorpusError(f"line {line_no}: not valid JSON: {exc}") from exc
            posts.append(parse_post(obj, line_no))
    if not posts:
        raise RawCorpusError(f"{path}: no posts found")
    return posts


def group_by_user(posts: list[RawPost]) -> dict[str, list[RawPost]]:
    """Timelines keyed by user, sorted by timestamp; labels must agree."""
    users: dict[str, list[RawPost]] = {}
    labels: dict[str, int] = {}
    for post in posts:
        if post.user_id in labels and labels[post.user_id] != post.label:
            raise RawCorpusError(f"user {post.user_id!r} has conflicting labels")
        labels[post.user_id] = post.label
        users.setdefault(post.user_id, []).append(post)
    for timeline in users.values():
        timeline.sort(key=lambda p: p.timestamp)
    return users
