"""Run registry: one row per command invocation, one per artifact it wrote."""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from sqlalchemy import (
    Column,
    ForeignKey,
    Index,
    Integer,
    MetaData,
    Table,
    Text,
    create_engine,
    event,
    text,
)
from sqlalchemy.engine import Engine

from . import config
from .runs import RunManifest

logger = logging.getLogger(__name__)

REGISTRY_FILE = "runs.sqlite"

metadata = MetaData()

runs = Table(
    "runs",
    metadata,
    Column("id", Integer, primary_key=True, autoincrement=True),
    Column("command", Text, nullable=False),
    Column("seed", Integer, nullable=False),
    Column("config_json", Text, nullable=False),
    Column("manifest_path", Text),
    Column("created_at", Text, nullable=False),
)

artifacts = Table(
    "artifacts",
    metadata,
    Column("id", Integer, primary_key=True, autoincrement=True),
    Column("run_id", Integer, ForeignKey("runs.id", ondelete="CASCADE"), nullable=False),
    Column("path", Text, nullable=False),
    Column("sha256", Text, nullable=False),
)

Index("idx_runs_command", runs.c.command)
Index("idx_artifacts_run", artifacts.c.run_id)

_engines: Dict[str, Engine] = {}


def database_url(out_dir) -> str:
    if config.DATABASE_URL:
        return config.DATABASE_URL
    path = (Path(out_dir) / REGISTRY_FILE).as_posix()
    return f"sqlite:///{path}"


def get_engine(out_dir) -> Engine:
    url = database_url(out_dir)
    if url not in _engines:
        if url.startswith("sqlite:///"):
            Path(url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
        engine = create_engine(url, future=True, pool_pre_ping=True)
        if url.startswith("sqlite"):
            @event.listens_for(engine, "connect")
            def _set_sqlite_pragma(dbapi_connection, _connection_record):
                cursor = dbapi_connection.cursor()
                cursor.execute("PRAGMA foreign_keys=ON")
                cursor.close()

        metadata.create_all(engine)
        _engines[url] = engine
    return _engines[url]


def dispose_engines() -> None:
    for engine in _engines.values():
        engine.dispose()
    _engines.clear()


def _prepare_statement(statement: str, params: Optional[Sequence[Any]]):
    """`?` placeholders become :p1, :p2, ... bound from ``params`` in order."""
    if not params:
        return text(statement), {}
    head, *tails = statement.split("?")
    if len(tails) != len(params):
        raise ValueError(f"statement has {len(tails)} placeholders for {len(params)} parameters")
    sql = head + "".join(f":p{n}{tail}" for n, tail in enumerate(tails, start=1))
    return text(sql), {f"p{n}": value for n, value in enumerate(params, start=1)}


@dataclass
class RegistryConnection:
    conn: Any

    def execute(self, statement, params: Optional[Sequence[Any]] = None):
        """Run raw SQL with `?` placeholders, or a Core construct as is."""
        if isinstance(statement, str):
            stmt, bound = _prepare_statement(statement, params)
            label = " ".join(statement.split())
        else:
            stmt, bound, label = statement, {}, str(statement).split("\n")[0]
        start = time.perf_counter()
        result = self.conn.execute(stmt, bound)
        elapsed_ms = (time.perf_counter() - start) * 1000
        if config.LOG_SLOW_STEPS and elapsed_ms >= config.SLOW_STEP_THRESHOLD_MS:
            logger.warning("Slow query %.1fms: %s", elapsed_ms, label)
        return result


def record_run(manifest: RunManifest, manifest_path: Optional[Path], out_dir) -> int:
    engine = get_engine(out_dir)
    created = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with engine.begin() as conn:
        reg = RegistryConnection(conn)
        result = reg.execute(
            runs.insert().values(
                command=manifest.command,
                seed=int(manifest.seed),
                config_json=json.dumps(manifest.to_dict()["config"], sort_keys=True),
                manifest_path=None if manifest_path is None else Path(manifest_path).as_posix(),
                created_at=created,
            )
        )
        run_id = int(result.inserted_primary_key[0])
        for path, digest in sorted(manifest.artifacts.items()):
            reg.execute(artifacts.insert().values(run_id=run_id, path=path, sha256=digest))
    logger.debug("registered run %d (%s)", run_id, manifest.command)
    return run_id


def list_runs(out_dir, command: Optional[str] = None, limit: int = 50) -> List[Dict[str, Any]]:
    engine = get_engine(out_dir)
    sql = (
        "SELECT r.id, r.command, r.seed, r.manifest_path, r.created_at, COUNT(a.id) AS artifact_count "
        "FROM runs r LEFT JOIN artifacts a ON a.run_id = r.id "
    )
    params: List[Any] = []
    if command:
        sql += "WHERE r.command = ? "
        params.append(command)
    sql += "GROUP BY r.id ORDER BY r.id DESC LIMIT ?"
    params.append(int(limit))
    with engine.connect() as conn:
        rows = RegistryConnection(conn).execute(sql, params).mappings().fetchall()
    return [dict(row) for row in rows]
