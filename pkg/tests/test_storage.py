"""Tests for the SQLite storage layer."""

import sqlite3

import pytest

from curvatlas.experiments import ResultRecord
from curvatlas.regularity import ExponentFit
from curvatlas.storage import SCHEMA_VERSION, SQLiteStorage

# Uses fixtures from conftest.py: storage


def _record(experiment_id="abc123", kind="lambda_scan", fits=()):
    return ResultRecord(
        experiment_id=experiment_id,
        kind=kind,
        config={"kind": kind, "trials": 2},
        metrics={"rows": [{"ratio": 0.5, "k": 1, "p": 1.0}]},
        fits=list(fits),
        wall_time=0.25,
        version="0.1.0",
    )


@pytest.fixture
def sample_fit():
    return ExponentFit("lambda_1", 0.25, -0.1, (0.25, 0.75), 0.01, 3, stderr=0.02)


class TestResultOperations:
    """Tests for result CRUD operations."""

    def test_add_and_get(self, storage):
        """Test storing a result and reading it back."""
        result_id = storage.add_result(_record())
        stored = storage.get_result(result_id)
        assert stored.experiment_id == "abc123"
        assert stored.kind == "lambda_scan"
        assert stored.config == {"kind": "lambda_scan", "trials": 2}
        assert stored.metrics["rows"][0]["p"] == 1.0
        assert stored.wall_time == 0.25
        assert stored.created_at

    def test_get_missing(self, storage):
        """Test that an unknown id returns None."""
        assert storage.get_result(999) is None

    def test_list_results_newest_first(self, storage):
        """Test listing order and kind filtering."""
        first = storage.add_result(_record("a", "lambda_scan"))
        second = storage.add_result(_record("b", "dimension"))
        third = storage.add_result(_record("c", "lambda_scan"))
        assert [r.id for r in storage.list_results()] == [third, second, first]
        assert [r.id for r in storage.list_results(kind="lambda_scan")] == [third, first]
        assert len(storage.list_results(limit=1)) == 1

    def test_fits_round_trip(self, storage, sample_fit):
        """Test that fits are stored with the result."""
        result_id = storage.add_result(_record(fits=[sample_fit]))
        fits = storage.get_fits(result_id)
        assert len(fits) == 1
        assert fits[0].kind == "lambda_1"
        assert fits[0].exponent == 0.25
        assert fits[0].window == (0.25, 0.75)
        assert fits[0].stderr == 0.02

    def test_delete(self, storage, sample_fit):
        """Test deleting a result removes its fits."""
        result_id = storage.add_result(_record(fits=[sample_fit]))
        assert storage.delete_result(result_id) == 1
        assert storage.get_result(result_id) is None
        assert storage.get_fits(result_id) == []
        assert storage.delete_result(result_id) == 0


class TestDbStats:
    """Tests for database statistics."""

    def test_empty_stats(self, storage):
        """Test stats on an empty database."""
        stats = storage.get_db_stats()
        assert stats["result_count"] == 0
        assert stats["fit_count"] == 0
        assert stats["results_by_kind"] == {}
        assert stats["schema_version"] == SCHEMA_VERSION

    def test_stats_after_inserts(self, storage, sample_fit):
        """Test counts by kind."""
        storage.add_result(_record(kind="lambda_scan", fits=[sample_fit]))
        storage.add_result(_record(kind="capacity"))
        stats = storage.get_db_stats()
        assert stats["result_count"] == 2
        assert stats["fit_count"] == 1
        assert stats["results_by_kind"] == {"capacity": 1, "lambda_scan": 1}
        assert stats["db_size_bytes"] > 0


class TestSchema:
    """Tests for schema versioning and database location."""

    def test_fresh_schema(self, storage):
        """Test that a new database records the current version and has fits.stderr."""
        rows = storage.execute_query("SELECT version FROM schema_version")
        assert [row["version"] for row in rows] == [SCHEMA_VERSION]
        columns = {row["name"] for row in storage.execute_query("PRAGMA table_info(fits)")}
        assert "stderr" in columns

    def test_reopen_keeps_results(self, tmp_path, sample_fit):
        """Test that reopening an existing database leaves it intact."""
        db_path = tmp_path / "results.db"
        result_id = SQLiteStorage(db_path).add_result(_record(fits=[sample_fit]))
        reopened = SQLiteStorage(db_path)
        assert reopened.get_fits(result_id)[0].stderr == 0.02
        assert reopened.get_db_stats()["schema_version"] == SCHEMA_VERSION

    def test_newer_schema_rejected(self, tmp_path):
        """Test that a database from a newer schema version is not touched."""
        db_path = tmp_path / "new.db"
        conn = sqlite3.connect(db_path)
        conn.executescript("""
            CREATE TABLE schema_version (version INTEGER PRIMARY KEY);
            INSERT INTO schema_version (version) VALUES (99);
        """)
        conn.close()

        with pytest.raises(RuntimeError, match="schema version 99"):
            SQLiteStorage(db_path)

    def test_env_override(self, tmp_path, monkeypatch):
        """Test that CURVATLAS_DB selects the database path."""
        monkeypatch.setenv("CURVATLAS_DB", str(tmp_path / "env.db"))
        assert SQLiteStorage().db_path == tmp_path / "env.db"
