import asyncio

import pytest

from database.db import RunRegistry
from errors import LineageMismatch


def decision(chosen="Candidate", reasons=("State",)):
    return {
        "proposal_feasible": chosen == "Proposal",
        "chosen": chosen,
        "reasons": list(reasons),
        "proposal_cost": None,
        "candidate_cost": 1.5,
        "candidate_infeasible": False,
    }


@pytest.fixture
def registry(tmp_path):
    reg = RunRegistry(str(tmp_path / "registry.db"))
    asyncio.run(reg.init_db())
    return reg


def test_register_and_verify(registry):
    async def scenario():
        await registry.register_artifact("dataset", "runs/q/dataset", "abc", "quadcopter", "parent")
        record = await registry.get_artifact("runs/q/dataset")
        assert record["kind"] == "dataset"
        assert record["parent_checksum"] == "parent"
        await registry.verify_lineage("runs/q/dataset", "abc", "parent")
        with pytest.raises(LineageMismatch):
            await registry.verify_lineage("runs/q/dataset", "changed", "parent")
        with pytest.raises(LineageMismatch):
            await registry.verify_lineage("runs/q/dataset", "abc", "other")

    asyncio.run(scenario())


def test_reregistration_updates_checksum(registry):
    async def scenario():
        await registry.register_artifact("ingredients", "ing.txt", "old", "quadcopter")
        await registry.register_artifact("ingredients", "ing.txt", "new", "quadcopter")
        await registry.verify_lineage("ing.txt", "new", None)

    asyncio.run(scenario())


def test_unregistered_artifact_passes(registry):
    asyncio.run(registry.verify_lineage("unknown.bin", "abc", None))


def test_decision_log(registry):
    async def scenario():
        await registry.log_decisions("q/rnn/eps=0", 0, [decision(), decision("Proposal", ())])
        await registry.log_decisions("q/rnn/eps=0", 1, [decision("Proposal", ())])
        # повторная запись прогона заменяет прежнюю
        await registry.log_decisions("q/rnn/eps=0", 0, [decision(reasons=("Terminal", "Cost"))])
        rows = await registry.get_decisions("q/rnn/eps=0")
        assert [(r["rollout"], r["t"]) for r in rows] == [(0, 0), (1, 0)]
        assert rows[0]["reasons"] == ["Terminal", "Cost"]
        assert len(await registry.get_decisions("q/rnn/eps=0", rollout=1)) == 1
        assert await registry.count_interventions("q/rnn/eps=0") == 1

    asyncio.run(scenario())
