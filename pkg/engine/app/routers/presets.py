from fastapi import APIRouter, HTTPException, status
from typing import List

from app.core.errors import ConfigError
from app.schemas.schemas import PresetSummary, ScenarioConfig
from app.services import presets

router = APIRouter(prefix="/api/v1/presets", tags=["presets"])


@router.get("/", response_model=List[PresetSummary])
async def get_presets():
    """获取全部预设场景"""
    return presets.list_presets()


@router.get("/{name}", response_model=ScenarioConfig)
async def get_preset(name: str):
    """获取单个预设（别名会解析到规范名）"""
    try:
        return presets.resolve_preset(name)
    except ConfigError as exc:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=str(exc)
        )
