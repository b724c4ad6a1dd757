from typing import Any

from fastapi import APIRouter, Depends, File, HTTPException, UploadFile

from sivnode.adapters.tables import parse_peaks_csv, to_json_data
from sivnode.core.abstractions import ExperimentRunner
from sivnode.core.dependencies import get_config, get_experiment_runner
from sivnode.core.errors import ConfigError, SimulationError
from sivnode.models import ExperimentConfig, ExperimentRequest
from sivnode.services import prometheus_metrics as prom
from sivnode.services.experiments import RunRequest
from sivnode.services.metrics import aggregate_metrics, current_metrics, start_run_metrics, timed_simulation
from sivnode.services.survey import match_quadruples
from sivnode.validation import config_hash, merge_overrides, validate_config

router = APIRouter(prefix="/api")

MAX_UPLOAD_BYTES = 1_000_000


def _build_response(data: dict, include_metrics: bool = True) -> dict:
    """Build response dict, optionally including run metrics."""
    if include_metrics:
        m = current_metrics()
        if m is not None:
            aggregate_metrics.record(m)
            data = {**data, "_metrics": m.to_dict()}
    return data


def _config_errors(errors: list[dict]) -> list[dict[str, Any]]:
    return [{"loc": list(e.get("loc", [])), "msg": e.get("msg"), "type": e.get("type")} for e in errors]


def _resolve_config(base: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    if not overrides:
        return base
    config, errors = validate_config(merge_overrides(base.model_dump(mode="json"), overrides))
    if errors:
        raise ConfigError(f"Config has {len(errors)} schema violation(s)", errors)
    return config


@router.get("/experiments")
def list_experiments(runner: ExperimentRunner = Depends(get_experiment_runner)):
    """Names of the experiments that can be run."""
    return {"experiments": runner.names()}


@router.post("/experiments/{name}")
def post_experiment(
    name: str,
    body: ExperimentRequest,
    base: ExperimentConfig = Depends(get_config),
    runner: ExperimentRunner = Depends(get_experiment_runner),
):
    """Run one experiment and return its JSON summary (tables are CLI-only)."""
    if name not in runner.names():
        raise HTTPException(status_code=404, detail=f"Unknown experiment: {name}")
    start_run_metrics()
    try:
        config = _resolve_config(base, body.overrides)
        request = RunRequest(
            seed=body.seed if body.seed is not None else config.run.seed,
            shots=body.shots,
            temperature=body.temperature,
        )
        output, cached = runner.execute(name, config, request, use_cache=body.use_cache)
    except ConfigError as e:
        prom.record_run(name, "config_error")
        raise HTTPException(
            status_code=422,
            detail={"message": "Config schema validation failed", "errors": _config_errors(e.errors)},
        )
    except SimulationError as e:
        prom.record_run(name, "simulation_error")
        raise HTTPException(status_code=400, detail=str(e))
    prom.record_run(name, "ok")
    data = {
        "summary": to_json_data(output.summary),
        "config_hash": config_hash(config),
        "cached": cached,
        "tables": [t.filename for t in output.tables],
    }
    return _build_response(data)


@router.post("/survey/upload")
async def upload_peaks(
    file: UploadFile = File(...),
    config: ExperimentConfig = Depends(get_config),
):
    """Group an uploaded `cavity_id,peak_hz,intensity` CSV into SiV quadruple candidates."""
    content = await file.read()

    # 400: File too large
    if len(content) > MAX_UPLOAD_BYTES:
        raise HTTPException(status_code=400, detail="File too large. Maximum size is 1MB.")

    try:
        text = content.decode("utf-8")
    except UnicodeDecodeError:
        raise HTTPException(status_code=400, detail="Peak file must be UTF-8 text.")

    start_run_metrics()
    tol = config.survey.tol
    try:
        with timed_simulation():
            spectra = parse_peaks_csv(text)
            candidates = [
                {
                    "cavity_id": s.cavity_id,
                    "quadruples": [
                        {"a_hz": q.a, "b_hz": q.b, "c_hz": q.c, "d_hz": q.d, "delta_gs_hz": q.delta_gs, "delta_es_hz": q.delta_es}
                        for q in match_quadruples(s, tol)
                    ],
                }
                for s in spectra
            ]
    except SimulationError as e:
        raise HTTPException(status_code=400, detail=f"Invalid peak file: {e}")
    return _build_response({"cavities": len(spectra), "tolerance_hz": tol, "candidates": to_json_data(candidates)})


@router.get("/metrics")
def get_metrics():
    """Return aggregate run metrics (simulation vs output time, shots, cache traffic)."""
    return aggregate_metrics.to_dict()
