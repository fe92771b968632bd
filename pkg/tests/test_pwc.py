import json

import pytest

from cimf.core.errors import DuplicateError, NotFoundError, ValidationError
from cimf.core.pwc import PreviousWorkflowCatalogue
from cimf.sdk.execution import RunRecord, RunStatus, StepResult, StepSignature, StepStatus

DAY = "2024-01-0{}T00:00:00.000000Z"


@pytest.fixture
def pwc(store):
    return PreviousWorkflowCatalogue(store.root, store)


def reopen(pwc):
    return PreviousWorkflowCatalogue(pwc.store.root, pwc.store)


def signature(alpha=0.5, digest="0" * 64):
    return StepSignature(
        module_name="flood-toy",
        module_tag="1.0",
        executable_digest="e" * 64,
        resolved_params={"infiltration_rate": alpha},
        input_digests=(("dem.asc", digest),),
    )


def make_run(run_id, workflow_name="flood", day=1, steps=None, **fields):
    return RunRecord(
        run_id=run_id,
        workflow_name=workflow_name,
        template_version_hash="f" * 64,
        flavour="single",
        bucket=run_id,
        workflow_type="flood-single",
        steps=steps if steps is not None else [StepResult(step_id="model", module="flood-toy:1.0")],
        submitted_at=DAY.format(day),
        **fields,
    )


def finished(run, status=RunStatus.SUCCEEDED):
    run.status = status
    return run


def succeeded_step(store, bucket, sig, step_id="model"):
    store.create_bucket(bucket)
    obj = store.put(bucket, f"{step_id}/depth.asc", f"depth of {bucket}".encode())
    return StepResult(step_id=step_id, module="flood-toy:1.0", status=StepStatus.SUCCEEDED, signature=sig,
                      outputs=[obj], exit_code=0)


class TestRecordLifecycle:
    def test_record_update_finalize(self, pwc):
        run = make_run("run-1")
        pwc.record(run)
        assert pwc.exists("run-1") and not pwc.is_final("run-1")

        run.status = RunStatus.RUNNING
        pwc.update(run)
        assert pwc.get("run-1").status == RunStatus.RUNNING

        pwc.finalize(finished(run))
        assert pwc.is_final("run-1")
        assert pwc.get("run-1").ended_at is not None

    def test_duplicate_run_id(self, pwc):
        pwc.record(make_run("run-1"))
        with pytest.raises(DuplicateError):
            pwc.record(make_run("run-1"))

    def test_final_runs_never_change(self, pwc):
        run = make_run("run-1")
        pwc.record(run)
        pwc.finalize(finished(run))
        with pytest.raises(DuplicateError):
            pwc.update(run)
        with pytest.raises(DuplicateError):
            pwc.finalize(run)

    def test_unknown_runs(self, pwc):
        with pytest.raises(NotFoundError):
            pwc.get("run-x")
        with pytest.raises(NotFoundError):
            pwc.update(make_run("run-x"))
        with pytest.raises(NotFoundError):
            pwc.finalize(make_run("run-x"))

    def test_get_returns_a_snapshot(self, pwc):
        pwc.record(make_run("run-1"))
        snapshot = pwc.get("run-1")
        snapshot.status = RunStatus.FAILED
        assert pwc.get("run-1").status == RunStatus.PENDING

    def test_idempotency_key_lookup(self, pwc):
        pwc.record(make_run("run-1", idempotency_key="nightly-2024-01-01"))
        assert pwc.find_by_idempotency_key("nightly-2024-01-01").run_id == "run-1"
        assert pwc.find_by_idempotency_key("other") is None


class TestDurability:
    def test_reload_restores_runs(self, pwc):
        run = make_run("run-1", user_payload={"workflow_type": "flood-single"})
        pwc.record(run)
        pwc.finalize(finished(run))

        reloaded = reopen(pwc)
        assert reloaded.is_final("run-1")
        assert reloaded.get("run-1").to_dict() == pwc.get("run-1").to_dict()

    def test_open_runs_are_marked_interrupted(self, pwc):
        run = make_run("run-1", steps=[
            StepResult(step_id="query_static", status=StepStatus.SUCCEEDED),
            StepResult(step_id="model", status=StepStatus.RUNNING),
            StepResult(step_id="postprocess"),
        ])
        pwc.record(run)

        reloaded = reopen(pwc).get("run-1")
        assert reloaded.status == RunStatus.FAILED
        assert reloaded.error == "interrupted"
        assert [s.status for s in reloaded.steps] == [StepStatus.SUCCEEDED, StepStatus.FAILED, StepStatus.FAILED]
        assert reloaded.step("model").error == "interrupted"

    def test_torn_last_line_is_skipped(self, pwc):
        run = make_run("run-1")
        pwc.record(run)
        pwc.finalize(finished(run))
        with open(pwc.path, "a", encoding="utf-8") as handle:
            handle.write('{"v": 1, "event": "open", "run": {"run_id": "run-2"')

        reloaded = reopen(pwc)
        assert reloaded.exists("run-1") and not reloaded.exists("run-2")
        reloaded.record(make_run("run-3"))
        assert reopen(reloaded).exists("run-3")

    def test_compact_keeps_one_line_per_run(self, pwc):
        for run_id in ("run-1", "run-2"):
            run = make_run(run_id)
            pwc.record(run)
            pwc.finalize(finished(run))

        assert pwc.compact() == 2
        lines = pwc.path.read_text(encoding="utf-8").splitlines()
        assert [json.loads(line)["event"] for line in lines] == ["final", "final"]
        assert reopen(pwc).is_final("run-2")


class TestFindReusable:
    def test_only_final_succeeded_steps_are_reusable(self, pwc, store):
        sig = signature()
        run = make_run("run-1", steps=[succeeded_step(store, "run-1", sig)])
        pwc.record(run)
        assert pwc.find_reusable(sig) is None

        pwc.finalize(finished(run))
        run_id, step = pwc.find_reusable(sig)
        assert run_id == "run-1"
        assert step.outputs[0].bucket == "run-1"
        assert pwc.find_reusable(signature(alpha=0.6)) is None

    def test_failed_steps_are_not_indexed(self, pwc, store):
        sig = signature()
        step = succeeded_step(store, "run-1", sig)
        step.status = StepStatus.FAILED
        run = make_run("run-1", steps=[step])
        pwc.record(run)
        pwc.finalize(finished(run, RunStatus.FAILED))
        assert pwc.find_reusable(sig) is None

    def test_most_recent_candidate_wins(self, pwc, store):
        sig = signature()
        for run_id in ("run-1", "run-2"):
            run = make_run(run_id, steps=[succeeded_step(store, run_id, sig)])
            pwc.record(run)
            pwc.finalize(finished(run))
        assert pwc.find_reusable(sig)[0] == "run-2"

    def test_candidates_with_lost_outputs_are_skipped(self, pwc, store):
        sig = signature()
        for run_id in ("run-1", "run-2"):
            run = make_run(run_id, steps=[succeeded_step(store, run_id, sig)])
            pwc.record(run)
            pwc.finalize(finished(run))
        lost = pwc.get("run-2").step("model").outputs[0]
        store.path_of(lost).unlink()

        assert pwc.find_reusable(sig)[0] == "run-1"

    def test_index_is_rebuilt_on_reload(self, pwc, store):
        sig = signature()
        run = make_run("run-1", steps=[succeeded_step(store, "run-1", sig)])
        pwc.record(run)
        pwc.finalize(finished(run))
        assert reopen(pwc).find_reusable(sig)[0] == "run-1"


class TestQueryRuns:
    @pytest.fixture
    def populated(self, pwc):
        for run_id, name, day, status in (
            ("run-1", "flood", 1, RunStatus.SUCCEEDED),
            ("run-2", "flood", 2, RunStatus.FAILED),
            ("run-3", "heat", 3, RunStatus.SUCCEEDED),
        ):
            run = make_run(run_id, workflow_name=name, day=day)
            pwc.record(run)
            pwc.finalize(finished(run, status))
        pwc.record(make_run("run-4", day=4))
        return pwc

    def ids(self, summaries):
        return [s["run_id"] for s in summaries]

    def test_newest_first(self, populated):
        assert self.ids(populated.query_runs()) == ["run-4", "run-3", "run-2", "run-1"]

    def test_filters(self, populated):
        assert self.ids(populated.query_runs(workflow_name="flood")) == ["run-4", "run-2", "run-1"]
        assert self.ids(populated.query_runs(status="succeeded")) == ["run-3", "run-1"]
        assert self.ids(populated.query_runs(status="pending")) == ["run-4"]
        assert self.ids(populated.query_runs(since="2024-01-02", until="2024-01-04")) == ["run-3", "run-2"]
        assert self.ids(populated.query_runs(limit=2, offset=1)) == ["run-3", "run-2"]

    def test_summary_shape(self, populated):
        summary = populated.query_runs(status="failed")[0]
        assert summary["workflow_type"] == "flood-single"
        assert summary["step_counts"]["pending"] == 1
        assert summary["pending_steps"] == 1
        assert summary["steps"][0]["step_id"] == "model"

    @pytest.mark.parametrize("filters,field", [
        ({"status": "exploded"}, "status"),
        ({"limit": 0}, "limit"),
        ({"offset": -1}, "limit"),
        ({"since": "yesterday"}, "since"),
        ({"since": "2024-01-01", "until": "soon"}, "until"),
        ({"since": "2024-01-03", "until": "2024-01-02"}, "since"),
    ])
    def test_malformed_filters(self, populated, filters, field):
        with pytest.raises(ValidationError) as info:
            populated.query_runs(**filters)
        assert info.value.field == field
