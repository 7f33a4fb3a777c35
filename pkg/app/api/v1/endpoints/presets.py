from fastapi import APIRouter, HTTPException

from app.schemas.examples import SAMPLES
from app.services.presets import registry

router = APIRouter()


@router.get("")
def list_presets():
    """Function and model presets with their default parameters"""
    return registry()


@router.get("/samples/{kind}")
def sample_config(kind: str):
    """Sample experiment configuration for one pipeline"""
    if kind not in SAMPLES:
        raise HTTPException(status_code=404, detail=f"no sample for '{kind}'; available: {sorted(SAMPLES)}")
    return SAMPLES[kind]().model_dump(mode="json")
