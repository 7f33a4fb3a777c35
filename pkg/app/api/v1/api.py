from fastapi import APIRouter

from app.api.v1.endpoints import experiments
from app.api.v1.endpoints import presets

api_router = APIRouter()
api_router.include_router(experiments.router, prefix="/experiments", tags=["experiments"])
api_router.include_router(presets.router, prefix="/presets", tags=["presets"])
