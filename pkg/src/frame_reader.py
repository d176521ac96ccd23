"""File-based tactile frame source: one-shot directory reads and a polling watcher."""

import os
import threading
import time
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Tuple

# Handle imports - try relative first, then absolute
try:
    from .exceptions import DataError
    from .logger import Logger
    from .simgel import TactileImage, load_image
except ImportError:
    from exceptions import DataError
    from logger import Logger
    from simgel import TactileImage, load_image

FRAME_SUFFIXES = (".png", ".ftimg")


def list_frames(directory) -> List[Path]:
    """Frame files of a directory in name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"Frame directory not found: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES)


def iter_frames(directory) -> Iterator[Tuple[Path, TactileImage]]:
    for path in list_frames(directory):
        yield path, load_image(path)


class FrameWatcher:
    """Polls a directory and hands new or rewritten frames to a callback."""

    def __init__(self, directory, frame_callback: Callable[[Path, TactileImage], None],
                 check_interval: float = 0.5):
        self.directory = Path(directory)
        self.frame_callback = frame_callback
        self.check_interval = check_interval
        self.logger = Logger.get_logger(__name__)
        self.seen: Dict[str, float] = {}  # path -> last delivered mtime
        self.running = False
        self.thread: Optional[threading.Thread] = None

    def start(self):
        if self.running:
            return
        self.running = True
        self.thread = threading.Thread(target=self._watch_loop, daemon=True)
        self.thread.start()
        self.logger.info(f"Frame watcher started on {self.directory}")

    def stop(self):
        self.running = False
        if self.thread and self.thread.is_alive():
            self.thread.join(timeout=max(1.0, 2 * self.check_interval))
        self.logger.info("Frame watcher stopped")

    def _watch_loop(self):
        while self.running:
            try:
                self.poll_once()
            except Exception as e:
                self.logger.error(f"Error in frame watcher loop: {e}")
            time.sleep(self.check_interval)

    def poll_once(self) -> int:
        """Deliver every frame that is new or changed since the last poll; returns the count."""
        delivered = 0
        current = set()
        for path in list_frames(self.directory):
            key = str(path)
            current.add(key)
            try:
                mtime = os.path.getmtime(path)
            except OSError:
                continue
            if key in self.seen and mtime <= self.seen[key]:
                continue
            try:
                frame = load_image(path)
            except DataError as e:
                # Partially written files are retried on the next poll
                self.logger.debug(f"Skipping unreadable frame {path}: {e}")
                continue
            self.seen[key] = mtime
            try:
                self.frame_callback(path, frame)
                delivered += 1
            except Exception as e:
                self.logger.error(f"Error in frame callback for {path}: {e}")

        for key in set(self.seen) - current:
            del self.seen[key]
        return delivered
