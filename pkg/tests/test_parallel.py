"""Worker policy: env cap, item cap, order preservation."""

import threading

import pytest

from gmtgp.parallel import map_workers, worker_count


class TestWorkerCount:
    def test_env_cap_wins(self, monkeypatch):
        monkeypatch.setenv("GMTGP_THREADS", "3")
        assert worker_count() == 3

    def test_item_count_caps_further(self, monkeypatch):
        monkeypatch.setenv("GMTGP_THREADS", "8")
        assert worker_count(2) == 2

    def test_zero_items_still_one_worker(self, monkeypatch):
        monkeypatch.setenv("GMTGP_THREADS", "8")
        assert worker_count(0) == 1

    def test_unset_env_uses_at_least_one(self, monkeypatch):
        monkeypatch.delenv("GMTGP_THREADS", raising=False)
        assert worker_count() >= 1

    def test_non_integer_env_rejected(self, monkeypatch):
        monkeypatch.setenv("GMTGP_THREADS", "lots")
        with pytest.raises(ValueError, match="must be an integer"):
            worker_count()

    def test_nonpositive_env_rejected(self, monkeypatch):
        monkeypatch.setenv("GMTGP_THREADS", "0")
        with pytest.raises(ValueError, match=">= 1"):
            worker_count()


class TestMapWorkers:
    def test_results_keep_input_order(self, monkeypatch):
        monkeypatch.setenv("GMTGP_THREADS", "4")
        assert map_workers(lambda v: v * v, range(20)) == [v * v for v in range(20)]

    def test_serial_cap_avoids_threads(self, monkeypatch):
        monkeypatch.setenv("GMTGP_THREADS", "1")
        main_thread = threading.current_thread()
        seen = []
        map_workers(lambda v: seen.append(threading.current_thread()), range(5))
        assert all(t is main_thread for t in seen)

    def test_parallel_matches_serial(self, monkeypatch):
        fn = lambda v: (v * 2654435761) % 97
        monkeypatch.setenv("GMTGP_THREADS", "1")
        serial = map_workers(fn, range(50))
        monkeypatch.setenv("GMTGP_THREADS", "6")
        assert map_workers(fn, range(50)) == serial
