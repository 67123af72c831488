import pytest

from data.repositories import RunRepository
from domain import __version__
from domain.run_config import OUTPUT_DIR_ENV, RunConfig
from run_rg import main


def run_data(**changes):
    data = {
        "run_id": "0123456789abcdef",
        "command": "flow",
        "config_hash": "0123456789abcdef" * 4,
        "version": __version__,
        "g": 0.05,
        "rho": 0.5,
        "modes": 8,
        "max_total": 3,
        "z0": -0.0123,
        "oracle_energy": -0.0123,
        "verdict": "CERTIFIED",
        "exit_code": 0,
    }
    data.update(changes)
    return data


@pytest.fixture
def repository(tmp_path):
    repo = RunRepository(str(tmp_path / "ledger.sqlite3"))
    yield repo
    repo.close()


def test_insert_and_fetch(repository):
    repository.add_or_update(run_data())
    record = repository.get_by_run_id("0123456789abcdef")
    assert record.verdict == "CERTIFIED"
    assert record.z0 == -0.0123
    assert record.updated_on is not None
    assert repository.get_by_run_id("ffffffffffffffff") is None


def test_upsert_replaces_outcome(repository):
    repository.add_or_update(run_data())
    repository.add_or_update(run_data(command="sweep", verdict="INCONCLUSIVE", z0=None, exit_code=3))
    records = repository.get_all()
    assert len(records) == 1
    assert records[0].command == "sweep"
    assert records[0].verdict == "INCONCLUSIVE"
    assert records[0].z0 is None
    assert records[0].exit_code == 3


def test_flow_run_is_recorded(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    overrides = ["model.g=0.0", "model.modes=6", "flow.n_max=4", "ledger.enabled=true", "ledger.path=ledger.sqlite3"]
    argv = [item for override in overrides for item in ("--set", override)]
    assert main(argv + ["flow"]) == 0
    config = RunConfig.from_dict({"model": {"g": 0.0, "modes": 6}, "flow": {"n_max": 4}})
    repo = RunRepository(str(tmp_path / "ledger.sqlite3"))
    try:
        record = repo.get_by_run_id(config.run_id)
        assert record is not None
        assert record.verdict == "CERTIFIED"
        assert record.config_hash == config.config_hash
        assert record.modes == 6
    finally:
        repo.close()
