import json
from collections import Counter

import numpy as np
import pytest

from cimf.core.calibration_service import (
    PARAMS_NAME,
    REPORT_NAME,
    CalibrationConfig,
    CalibrationService,
    IterationResult,
    LatinHypercubeSampler,
    UniformSampler,
    summarize,
)
from cimf.core.errors import ValidationError
from cimf.science.flood_model import FloodParams
from cimf.science.raster import Raster
from cimf.science.synthetic import storm, synthetic_dem, truth_extent
from cimf.sdk.execution import RunRecord, RunStatus, StepStatus

SEARCH = {"infiltration_rate": [0.0, 0.02]}


@pytest.fixture
def template(gateway):
    return gateway.catalog.get("flood")


def calibration_payload(flood_payload, truth, **options):
    settings = {"ground_truth": {"inline": truth.to_ascii()}, "search_params": SEARCH, "iterations": 4,
                "seed": 1, "batch_width": 2}
    settings.update(options)
    return flood_payload("calibration", **settings)


class TestSamplers:
    @pytest.mark.parametrize("sampler_class", [UniformSampler, LatinHypercubeSampler])
    def test_samples_stay_in_bounds(self, sampler_class):
        bounds = {"routing_coefficient": (0.1, 0.9), "infiltration_rate": (0.0, 0.02)}
        samples = sampler_class(bounds, seed=5).sample(25)

        assert len(samples) == 25
        for point in samples:
            assert list(point) == ["infiltration_rate", "routing_coefficient"]
            assert 0.0 <= point["infiltration_rate"] <= 0.02
            assert 0.1 <= point["routing_coefficient"] <= 0.9

    @pytest.mark.parametrize("sampler_class", [UniformSampler, LatinHypercubeSampler])
    def test_seeded(self, sampler_class):
        bounds = {"infiltration_rate": (0.0, 0.02)}
        assert sampler_class(bounds, seed=9).sample(6) == sampler_class(bounds, seed=9).sample(6)
        assert sampler_class(bounds, seed=9).sample(6) != sampler_class(bounds, seed=10).sample(6)

    def test_integer_options_weigh_every_value_equally(self):
        sampler = LatinHypercubeSampler({"routing_sweeps": (1.0, 4.0)}, seed=2, integers=("routing_sweeps",))
        samples = sampler.sample(400)

        values = [point["routing_sweeps"] for point in samples]
        assert all(isinstance(value, int) for value in values)
        assert Counter(values) == {1: 100, 2: 100, 3: 100, 4: 100}

    def test_latin_hypercube_fills_every_stratum(self):
        n = 10
        unit = LatinHypercubeSampler({"a": (0.0, 1.0), "b": (0.0, 1.0)}, seed=3).unit_samples(n)

        assert unit.shape == (n, 2)
        for column in unit.T:
            assert sorted(np.floor(column * n).astype(int).tolist()) == list(range(n))

    def test_integer_options_are_integers_in_bounds(self):
        samples = UniformSampler({"routing_sweeps": (1.0, 8.0)}, seed=2, integers=("routing_sweeps",)).sample(20)
        assert all(isinstance(p["routing_sweeps"], int) and 1 <= p["routing_sweeps"] <= 8 for p in samples)

    def test_degenerate_bounds(self):
        samples = LatinHypercubeSampler({"precip_scale": (1.2, 1.2)}, seed=0).sample(4)
        assert [p["precip_scale"] for p in samples] == [1.2] * 4


class TestSummarize:
    def iteration(self, index, iou):
        return IterationResult(index=index, params={}, run_id=f"run-it{index:03d}", iou=iou)

    def test_best_so_far_and_earliest_tie(self):
        iterations = [self.iteration(i, v) for i, v in enumerate([0.4, None, 0.6, 0.6, 0.5])]
        best, trace = summarize(list(reversed(iterations)))

        assert best == 2
        assert trace == [0.4, 0.4, 0.6, 0.6, 0.6]

    def test_leading_failures(self):
        best, trace = summarize([self.iteration(0, None), self.iteration(1, 0.1)])
        assert best == 1
        assert trace == [None, 0.1]

    def test_everything_failed(self):
        assert summarize([self.iteration(0, None), self.iteration(1, None)]) == (None, [None, None])


class TestCalibrationConfig:
    def test_defaults_come_from_the_template(self, template):
        config = CalibrationConfig.from_payload(template, {"options": {"search_params": SEARCH}})

        assert config.search_params == {"infiltration_rate": (0.0, 0.02)}
        assert (config.iterations, config.seed, config.sampler, config.batch_width) == (100, 0, "uniform", 1)
        assert config.version == template.version_hash

    def test_integer_options_sample_integers(self, template):
        options = {"search_params": {"routing_sweeps": [1, 8]}, "sampler": "latin_hypercube", "iterations": 5}
        config = CalibrationConfig.from_payload(template, {"options": options})
        samples = config.make_sampler(template).sample(config.iterations)
        assert all(isinstance(p["routing_sweeps"], int) for p in samples)

    @pytest.mark.parametrize("options,field", [
        ({}, "options.search_params"),
        ({"search_params": {}}, "options.search_params"),
        ({"search_params": [0.0, 0.1]}, "options.search_params"),
        ({"search_params": {"threshold": [0.1, 0.2]}}, "options.search_params.threshold"),
        ({"search_params": {"infiltration_rate": [0.1]}}, "options.search_params.infiltration_rate"),
        ({"search_params": {"infiltration_rate": [0.2, 0.1]}}, "options.search_params.infiltration_rate"),
        ({"search_params": {"infiltration_rate": [-1.0, 0.1]}}, "options.search_params.infiltration_rate"),
        ({"search_params": {"routing_sweeps": [1.5, 4]}}, "options.search_params.routing_sweeps"),
        ({"search_params": SEARCH, "iterations": 0}, "options.iterations"),
        ({"search_params": SEARCH, "sampler": "sobol"}, "options.sampler"),
        ({"search_params": SEARCH, "batch_width": 0}, "options.batch_width"),
    ])
    def test_invalid(self, template, options, field):
        with pytest.raises(ValidationError) as info:
            CalibrationConfig.from_payload(template, {"options": options})
        assert info.value.field == field


class TestChildPayload:
    def test_inputs_by_reference_and_searched_options_replaced(self, gateway):
        parent = RunRecord(
            run_id="run-cal",
            workflow_name="flood",
            template_version_hash="f" * 64,
            flavour="calibration",
            bucket="run-cal",
            user_payload={
                "workflow_type": "calibration",
                "idempotency_key": "cal-1",
                "options": {"dem": {"inline": "..."}, "infiltration_rate": 0.3, "routing_sweeps": 2,
                            "search_params": SEARCH, "iterations": 4, "seed": 1},
            },
            engine_payload={"objects": {"dem": "inputs/dem.0123456789abcdef.asc"}},
        )
        service = CalibrationService(gateway.store, gateway.catalog, gateway.executor)

        baseline = service.child_payload(parent, None, ["infiltration_rate"])
        sampled = service.child_payload(parent, {"infiltration_rate": 0.02}, ["infiltration_rate"])

        assert "idempotency_key" not in baseline
        assert baseline["options"] == {
            "dem": {"ref": {"bucket": "run-cal", "stored_name": "inputs/dem.0123456789abcdef.asc"}},
            "routing_sweeps": 2,
        }
        assert sampled["options"]["infiltration_rate"] == 0.02
        assert parent.user_payload["options"]["iterations"] == 4


@pytest.mark.slow
class TestCalibrationRun:
    def test_calibration_improves_on_the_baseline(self, gateway, flood_payload, truth):
        accepted = gateway.submit(calibration_payload(flood_payload, truth))
        run = gateway.wait_for(accepted["run_id"], timeout=300)

        assert run.status == RunStatus.SUCCEEDED
        assert run.children == [f"{run.run_id}-it{i:03d}" for i in range(5)]
        assert all(s.status in (StepStatus.SUCCEEDED, StepStatus.REUSED) for s in run.steps)

        report = json.loads(gateway.results(run.run_id, REPORT_NAME)[0])
        assert len(report["iterations"]) == 5
        assert report["iterations"][0]["params"] == {"infiltration_rate": 0.005}
        assert report["best_iou"] >= report["initial_iou"]
        assert report["best_so_far"] == sorted(report["best_so_far"])
        assert report["best_so_far"][-1] == report["best_iou"]
        assert report["reused_step_counts"][0] == 0
        assert all(count >= 3 for count in report["reused_step_counts"][1:])

        calibrated = json.loads(gateway.results(run.run_id, PARAMS_NAME)[0])
        assert calibrated["source_run"] == run.run_id
        assert calibrated["params"]["infiltration_rate"] == report["best_params"]["infiltration_rate"]
        assert calibrated["params"]["routing_coefficient"] == 0.5

    def test_children_are_catalogued_runs(self, gateway, flood_payload, truth):
        accepted = gateway.submit(calibration_payload(flood_payload, truth, iterations=1, batch_width=1))
        run = gateway.wait_for(accepted["run_id"], timeout=300)

        child = gateway.pwc.get(run.children[1])
        assert child.parent_run == run.run_id
        assert child.flavour == "calibration"
        assert "iou" in [s.step_id for s in child.steps]
        assert child.step("query_static").status == StepStatus.REUSED

    def test_misaligned_ground_truth_fails_the_run(self, gateway, flood_payload):
        small = synthetic_dem(size=8)
        truth = truth_extent(small, storm(), FloodParams(infiltration_rate=0.01))
        accepted = gateway.submit(calibration_payload(flood_payload, truth, iterations=1, batch_width=1))
        run = gateway.wait_for(accepted["run_id"], timeout=300)

        assert run.status == RunStatus.FAILED
        assert "not aligned" in run.error

    def test_shifted_ground_truth_fails_the_run(self, gateway, flood_payload, truth):
        header = truth.header
        shifted = Raster.from_array(truth.values, cellsize=header.cellsize, xllcorner=header.xllcorner + 5000.0,
                                    yllcorner=header.yllcorner, nodata_value=header.nodata_value)
        accepted = gateway.submit(calibration_payload(flood_payload, shifted, iterations=1, batch_width=1))
        run = gateway.wait_for(accepted["run_id"], timeout=300)

        assert run.status == RunStatus.FAILED
        assert "not aligned" in run.error
