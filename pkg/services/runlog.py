# services/runlog.py
import os, json, threading
from datetime import datetime, timezone
from typing import Any, Dict

from dotenv import load_dotenv

# Load env for local runs; CI and batch hosts set these directly
load_dotenv()

_LOCK = threading.Lock()

LIPEMBED_DEBUG = os.getenv("LIPEMBED_DEBUG", "0") == "1"
RUNLOG_ENABLE = os.getenv("RUNLOG_ENABLE", "0") == "1"
RUNLOG_PATH = os.getenv("RUNLOG_PATH", os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "runs.jsonl"))


def debug(tag: str, *args) -> None:
    if LIPEMBED_DEBUG:
        print(f"[{tag.upper()}]", *args)


def _ensure_dir(path: str):
    d = os.path.dirname(path)
    if d and not os.path.exists(d):
        os.makedirs(d, exist_ok=True)


def log_event(event: Dict[str, Any], path: str = None) -> None:
    """
    Append a single JSON event to the run log if enabled.
    Write failures are swallowed.
    """
    if not RUNLOG_ENABLE and path is None:
        return
    target = path or RUNLOG_PATH
    try:
        _ensure_dir(target)
        event = dict(event)
        event["ts_iso"] = datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")
        line = json.dumps(event, separators=(",", ":"), ensure_ascii=False, default=str)
        with _LOCK:
            with open(target, "a", encoding="utf-8") as f:
                f.write(line + "\n")
    except Exception:
        pass
