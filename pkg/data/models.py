import datetime

import peewee
from peewee import Model, SqliteDatabase

# path is bound at run time from ledger.path
db = SqliteDatabase(None, pragmas={'journal_mode': 'wal'})


def init_database(path: str) -> SqliteDatabase:
    db.init(path, pragmas={'journal_mode': 'wal'})
    return db


class BaseModel(Model):
    class Meta:
        database = db


class RunRecord(BaseModel):
    run_id = peewee.CharField(primary_key=True, max_length=16)
    command = peewee.CharField()
    config_hash = peewee.CharField(max_length=64)
    version = peewee.CharField()
    g = peewee.FloatField()
    rho = peewee.FloatField()
    modes = peewee.IntegerField()
    max_total = peewee.IntegerField()
    z0 = peewee.FloatField(null=True)
    oracle_energy = peewee.FloatField(null=True)
    verdict = peewee.CharField(null=True)
    exit_code = peewee.IntegerField(default=0)
    updated_on = peewee.DateTimeField(default=datetime.datetime.now)

    class Meta:
        table_name = 'flow_runs'
