import aiosqlite
import json
import logging
from typing import Any, Dict, Iterable, List, Optional

from errors import LineageMismatch

logger = logging.getLogger(__name__)


class RunRegistry:
    """Реестр артефактов и журнал решений обертки (SQLite)"""

    def __init__(self, db_path: str):
        self.db_path = db_path

    async def init_db(self):
        """Инициализация базы данных и создание таблиц"""
        async with aiosqlite.connect(self.db_path) as db:
            # Артефакты и их родословная
            await db.execute("""
                CREATE TABLE IF NOT EXISTS artifacts (
                    path TEXT PRIMARY KEY,
                    kind TEXT NOT NULL,
                    checksum TEXT NOT NULL,
                    parent_checksum TEXT,
                    benchmark TEXT NOT NULL,
                    created TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            """)

            # Решения обертки по шагам обернутых прогонов
            await db.execute("""
                CREATE TABLE IF NOT EXISTS decisions (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT NOT NULL,
                    rollout INTEGER NOT NULL,
                    t INTEGER NOT NULL,
                    chosen TEXT NOT NULL,
                    reasons TEXT NOT NULL,
                    proposal_cost REAL,
                    candidate_cost REAL,
                    proposal_feasible BOOLEAN NOT NULL,
                    candidate_infeasible BOOLEAN NOT NULL
                )
            """)

            await db.execute("CREATE INDEX IF NOT EXISTS idx_artifacts_checksum ON artifacts(checksum)")
            await db.execute("CREATE INDEX IF NOT EXISTS idx_decisions_run ON decisions(run_id, rollout, t)")

            await db.commit()
            logger.debug(f"Реестр инициализирован: {self.db_path}")

    async def register_artifact(self, kind: str, path: str, checksum: str, benchmark: str,
                                parent_checksum: Optional[str] = None):
        """Зарегистрировать или обновить артефакт"""
        async with aiosqlite.connect(self.db_path) as db:
            await db.execute("""
                INSERT INTO artifacts (path, kind, checksum, parent_checksum, benchmark, created)
                VALUES (?, ?, ?, ?, ?, CURRENT_TIMESTAMP)
                ON CONFLICT(path) DO UPDATE SET
                    kind = excluded.kind,
                    checksum = excluded.checksum,
                    parent_checksum = excluded.parent_checksum,
                    benchmark = excluded.benchmark,
                    created = CURRENT_TIMESTAMP
            """, (path, kind, checksum, parent_checksum, benchmark))
            await db.commit()
        logger.info(f"Артефакт {kind} зарегистрирован: {path} ({checksum[:12]})")

    async def get_artifact(self, path: str) -> Optional[Dict[str, Any]]:
        """Получить запись об артефакте по пути"""
        async with aiosqlite.connect(self.db_path) as db:
            db.row_factory = aiosqlite.Row
            async with db.execute("SELECT * FROM artifacts WHERE path = ?", (path,)) as cursor:
                row = await cursor.fetchone()
                return dict(row) if row else None

    async def verify_lineage(self, path: str, checksum: str, expected_parent: Optional[str]):
        """
        Сверить артефакт с реестром

        Raises:
            LineageMismatch: Контрольная сумма или родитель не совпадают с записью
        """
        record = await self.get_artifact(path)
        if record is None:
            logger.warning(f"Артефакт {path} не зарегистрирован, проверка только по заголовку")
            return
        if record["checksum"] != checksum:
            raise LineageMismatch(f"{path}: файл изменен после регистрации")
        if expected_parent is not None and record["parent_checksum"] != expected_parent:
            raise LineageMismatch(
                f"{path}: родитель {record['parent_checksum']}, ожидался {expected_parent}"
            )

    async def log_decisions(self, run_id: str, rollout: int, decisions: Iterable[Dict[str, Any]]):
        """Добавить решения одного прогона (повторная запись прогона заменяет прежнюю)"""
        rows = [
            (
                run_id,
                rollout,
                t,
                d["chosen"],
                json.dumps(d["reasons"]),
                d.get("proposal_cost"),
                d.get("candidate_cost"),
                bool(d["proposal_feasible"]),
                bool(d["candidate_infeasible"]),
            )
            for t, d in enumerate(decisions)
        ]
        async with aiosqlite.connect(self.db_path) as db:
            await db.execute("DELETE FROM decisions WHERE run_id = ? AND rollout = ?", (run_id, rollout))
            await db.executemany("""
                INSERT INTO decisions (
                    run_id, rollout, t, chosen, reasons, proposal_cost, candidate_cost,
                    proposal_feasible, candidate_infeasible
                ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
            """, rows)
            await db.commit()

    async def get_decisions(self, run_id: str, rollout: Optional[int] = None) -> List[Dict[str, Any]]:
        """Получить журнал решений запуска (или одного прогона)"""
        query = "SELECT * FROM decisions WHERE run_id = ?"
        params: tuple = (run_id,)
        if rollout is not None:
            query += " AND rollout = ?"
            params += (rollout,)
        query += " ORDER BY rollout, t"
        async with aiosqlite.connect(self.db_path) as db:
            db.row_factory = aiosqlite.Row
            async with db.execute(query, params) as cursor:
                rows = await cursor.fetchall()
        result = []
        for row in rows:
            item = dict(row)
            item["reasons"] = json.loads(item["reasons"])
            result.append(item)
        return result

    async def count_interventions(self, run_id: str) -> int:
        """Число прогонов, где кандидат применялся хотя бы раз"""
        async with aiosqlite.connect(self.db_path) as db:
            async with db.execute("""
                SELECT COUNT(DISTINCT rollout) FROM decisions
                WHERE run_id = ? AND chosen = 'Candidate'
            """, (run_id,)) as cursor:
                row = await cursor.fetchone()
                return row[0] if row else 0
