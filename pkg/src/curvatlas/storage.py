"""SQLite storage backend for experiment results."""

from __future__ import annotations

import json
import logging
import os
import sqlite3
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from curvatlas.regularity import ExponentFit

logger = logging.getLogger("curvatlas")


@dataclass
class StoredResult:
    """A result row as read back from the database."""

    id: int
    experiment_id: str
    kind: str
    config: dict
    metrics: dict
    wall_time: float
    version: str
    created_at: str


# Default database path
DEFAULT_DB_PATH = Path.home() / ".curvatlas" / "results.db"

# Schema version recorded in the schema_version table
SCHEMA_VERSION = 1


class SQLiteStorage:
    """SQLite-backed storage for experiment results and their exponent fits."""

    def __init__(self, db_path: str | Path | None = None):
        """Initialize storage; the path defaults to $CURVATLAS_DB or ~/.curvatlas/results.db."""
        if db_path is None:
            db_path = os.environ.get("CURVATLAS_DB", str(DEFAULT_DB_PATH))

        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        self._init_db()

    @contextmanager
    def _connect(self):
        """Context manager for database connections."""
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
            conn.commit()
        finally:
            conn.close()

    def execute_query(self, sql: str, params: tuple | list = ()) -> list[sqlite3.Row]:
        """Execute a SQL query and return all rows."""
        with self._connect() as conn:
            return conn.execute(sql, params).fetchall()

    def execute_write(self, sql: str, params: tuple | list = ()) -> int:
        """Execute an INSERT/UPDATE/DELETE and return the rows affected."""
        with self._connect() as conn:
            cursor = conn.execute(sql, params)
            return cursor.rowcount

    def _get_schema_version(self, conn: sqlite3.Connection) -> int:
        """Get current schema version from database."""
        try:
            row = conn.execute("SELECT MAX(version) FROM schema_version").fetchone()
            return row[0] if row and row[0] else 0
        except sqlite3.OperationalError:
            # Table doesn't exist yet
            return 0

    def _init_db(self):
        """Create tables if they don't exist.

        Raises:
            RuntimeError: the database was written by a newer schema version
        """
        with self._connect() as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS schema_version (
                    version INTEGER PRIMARY KEY
                )
            """)
            current_version = self._get_schema_version(conn)
            if current_version > SCHEMA_VERSION:
                raise RuntimeError(
                    f"{self.db_path} has schema version {current_version}, "
                    f"newer than the supported {SCHEMA_VERSION}"
                )

            conn.execute("""
                CREATE TABLE IF NOT EXISTS results (
                    id INTEGER PRIMARY KEY,
                    experiment_id TEXT NOT NULL,
                    kind TEXT NOT NULL,
                    config_json TEXT NOT NULL,
                    metrics_json TEXT NOT NULL,
                    wall_time REAL,
                    version TEXT,
                    created_at TEXT NOT NULL
                )
            """)
            conn.execute(
                "CREATE INDEX IF NOT EXISTS idx_results_experiment ON results(experiment_id)"
            )
            conn.execute("CREATE INDEX IF NOT EXISTS idx_results_kind ON results(kind)")

            conn.execute("""
                CREATE TABLE IF NOT EXISTS fits (
                    id INTEGER PRIMARY KEY,
                    result_id INTEGER NOT NULL,
                    kind TEXT NOT NULL,
                    exponent REAL,
                    intercept REAL,
                    lmin REAL,
                    lmax REAL,
                    residual_rms REAL,
                    n_scales INTEGER,
                    stderr REAL,
                    FOREIGN KEY (result_id) REFERENCES results(id) ON DELETE CASCADE
                )
            """)
            conn.execute("CREATE INDEX IF NOT EXISTS idx_fits_result ON fits(result_id)")

            if current_version == 0:
                conn.execute(
                    "INSERT INTO schema_version (version) VALUES (?)", (SCHEMA_VERSION,)
                )

    # Result operations

    def add_result(self, record) -> int:
        """Store a ResultRecord and its fits; returns the new row id."""
        created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        with self._connect() as conn:
            cursor = conn.execute(
                """
                INSERT INTO results (
                    experiment_id, kind, config_json, metrics_json, wall_time, version, created_at
                ) VALUES (?, ?, ?, ?, ?, ?, ?)
                """,
                (
                    record.experiment_id,
                    record.kind,
                    json.dumps(record.config, sort_keys=True),
                    record.metrics_json(),
                    record.wall_time,
                    record.version,
                    created_at,
                ),
            )
            result_id = cursor.lastrowid
            conn.executemany(
                """
                INSERT INTO fits (
                    result_id, kind, exponent, intercept, lmin, lmax, residual_rms, n_scales,
                    stderr
                ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                [
                    (
                        result_id,
                        fit.kind,
                        fit.exponent,
                        fit.intercept,
                        fit.window[0],
                        fit.window[1],
                        fit.residual_rms,
                        fit.n_scales,
                        fit.stderr,
                    )
                    for fit in record.fits
                ],
            )
        logger.debug("Stored result %d (%s)", result_id, record.experiment_id)
        return result_id

    def _row_to_result(self, row: sqlite3.Row) -> StoredResult:
        return StoredResult(
            id=row["id"],
            experiment_id=row["experiment_id"],
            kind=row["kind"],
            config=json.loads(row["config_json"]),
            metrics=json.loads(row["metrics_json"]),
            wall_time=row["wall_time"],
            version=row["version"],
            created_at=row["created_at"],
        )

    def get_result(self, result_id: int) -> StoredResult | None:
        """Get a stored result by row id."""
        rows = self.execute_query("SELECT * FROM results WHERE id = ?", (result_id,))
        return self._row_to_result(rows[0]) if rows else None

    def list_results(self, kind: str | None = None, limit: int = 50) -> list[StoredResult]:
        """Most recent results first, optionally filtered by experiment kind."""
        if kind:
            rows = self.execute_query(
                "SELECT * FROM results WHERE kind = ? ORDER BY id DESC LIMIT ?", (kind, limit)
            )
        else:
            rows = self.execute_query("SELECT * FROM results ORDER BY id DESC LIMIT ?", (limit,))
        return [self._row_to_result(row) for row in rows]

    def get_fits(self, result_id: int) -> list[ExponentFit]:
        """Exponent fits of a stored result, in insertion order."""
        rows = self.execute_query(
            "SELECT * FROM fits WHERE result_id = ? ORDER BY id", (result_id,)
        )
        return [
            ExponentFit(
                kind=row["kind"],
                exponent=row["exponent"],
                intercept=row["intercept"],
                window=(row["lmin"], row["lmax"]),
                residual_rms=row["residual_rms"],
                n_scales=row["n_scales"],
                stderr=row["stderr"] if row["stderr"] is not None else 0.0,
            )
            for row in rows
        ]

    def delete_result(self, result_id: int) -> int:
        """Delete a result and its fits. Returns the number of results deleted."""
        self.execute_write("DELETE FROM fits WHERE result_id = ?", (result_id,))
        return self.execute_write("DELETE FROM results WHERE id = ?", (result_id,))

    # Utility operations

    def get_db_stats(self) -> dict:
        """Get database statistics."""
        with self._connect() as conn:
            result_count = conn.execute("SELECT COUNT(*) FROM results").fetchone()[0]
            fit_count = conn.execute("SELECT COUNT(*) FROM fits").fetchone()[0]
            by_kind = conn.execute(
                "SELECT kind, COUNT(*) AS n FROM results GROUP BY kind ORDER BY kind"
            ).fetchall()
            date_range = conn.execute(
                "SELECT MIN(created_at) AS first, MAX(created_at) AS last FROM results"
            ).fetchone()
            schema_version = self._get_schema_version(conn)

        db_size = self.db_path.stat().st_size if self.db_path.exists() else 0
        return {
            "result_count": result_count,
            "fit_count": fit_count,
            "results_by_kind": {row["kind"]: row["n"] for row in by_kind},
            "earliest_result": date_range["first"],
            "latest_result": date_range["last"],
            "schema_version": schema_version,
            "db_size_bytes": db_size,
            "db_path": str(self.db_path),
        }
