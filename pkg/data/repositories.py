import datetime

from .models import RunRecord, db, init_database


class RunRepository:
    def __init__(self, path: str):
        init_database(path)
        db.connect(reuse_if_open=True)
        db.create_tables([RunRecord], safe=True)

    def add_or_update(self, run_data: dict):
        run_data = dict(run_data, updated_on=datetime.datetime.now())
        return RunRecord.insert(run_data).on_conflict(
            conflict_target=[RunRecord.run_id],
            update={
                RunRecord.command: run_data['command'],
                RunRecord.config_hash: run_data['config_hash'],
                RunRecord.version: run_data['version'],
                RunRecord.z0: run_data.get('z0'),
                RunRecord.oracle_energy: run_data.get('oracle_energy'),
                RunRecord.verdict: run_data.get('verdict'),
                RunRecord.exit_code: run_data.get('exit_code', 0),
                RunRecord.updated_on: run_data['updated_on'],
            }
        ).execute()

    def get_all(self):
        return list(RunRecord.select().order_by(RunRecord.run_id))

    def get_by_run_id(self, run_id: str):
        return RunRecord.get_or_none(RunRecord.run_id == run_id)

    def close(self):
        if not db.is_closed():
            db.close()
