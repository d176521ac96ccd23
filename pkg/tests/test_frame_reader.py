"""Tests for directory frame sources."""

import os
import time

import numpy as np
import pytest

from exceptions import DataError
from frame_reader import FrameWatcher, iter_frames, list_frames
from simgel import TactileImage, save_png, save_raw


def _frame(value):
    return TactileImage(np.full((8, 6, 3), value))


def test_list_frames_sorted_and_filtered(tmp_path):
    save_png(_frame(0.2), tmp_path / "b.png")
    save_raw(_frame(0.4), tmp_path / "a.ftimg")
    (tmp_path / "notes.txt").write_text("ignored")
    assert [p.name for p in list_frames(tmp_path)] == ["a.ftimg", "b.png"]


def test_missing_directory(tmp_path):
    with pytest.raises(DataError):
        list_frames(tmp_path / "absent")


def test_iter_frames_loads_images(tmp_path):
    save_raw(_frame(0.25), tmp_path / "f.ftimg")
    [(path, image)] = list(iter_frames(tmp_path))
    assert path.name == "f.ftimg"
    np.testing.assert_allclose(image.pixels, 0.25)


class TestFrameWatcher:
    def test_delivers_each_frame_once(self, tmp_path):
        got = []
        watcher = FrameWatcher(tmp_path, lambda path, frame: got.append(path.name))
        save_png(_frame(0.1), tmp_path / "f0.png")
        assert watcher.poll_once() == 1
        assert watcher.poll_once() == 0
        save_png(_frame(0.3), tmp_path / "f1.png")
        assert watcher.poll_once() == 1
        assert got == ["f0.png", "f1.png"]

    def test_rewritten_frame_redelivered(self, tmp_path):
        got = []
        watcher = FrameWatcher(tmp_path, lambda path, frame: got.append(frame.pixels.mean()))
        path = tmp_path / "f.png"
        save_png(_frame(0.2), path)
        watcher.poll_once()
        save_png(_frame(0.8), path)
        later = os.path.getmtime(path) + 10
        os.utime(path, (later, later))
        assert watcher.poll_once() == 1
        assert got[-1] == pytest.approx(0.8, abs=1 / 255)

    def test_unreadable_frame_is_retried(self, tmp_path):
        got = []
        watcher = FrameWatcher(tmp_path, lambda path, frame: got.append(path.name))
        (tmp_path / "partial.png").write_bytes(b"\x89PNG")
        assert watcher.poll_once() == 0
        save_png(_frame(0.5), tmp_path / "partial.png")
        assert watcher.poll_once() == 1

    def test_callback_errors_do_not_stop_polling(self, tmp_path):
        def explode(path, frame):
            raise RuntimeError("boom")

        watcher = FrameWatcher(tmp_path, explode)
        save_png(_frame(0.1), tmp_path / "f.png")
        assert watcher.poll_once() == 0
        assert str(tmp_path / "f.png") in watcher.seen

    def test_deleted_frames_forgotten(self, tmp_path):
        watcher = FrameWatcher(tmp_path, lambda path, frame: None)
        save_png(_frame(0.1), tmp_path / "f.png")
        watcher.poll_once()
        (tmp_path / "f.png").unlink()
        watcher.poll_once()
        assert watcher.seen == {}

    def test_background_thread(self, tmp_path):
        got = []
        save_png(_frame(0.1), tmp_path / "f.png")
        watcher = FrameWatcher(tmp_path, lambda path, frame: got.append(path.name), check_interval=0.05)
        watcher.start()
        try:
            deadline = time.time() + 5.0
            while not got and time.time() < deadline:
                time.sleep(0.02)
        finally:
            watcher.stop()
        assert got == ["f.png"]
        assert not watcher.running
