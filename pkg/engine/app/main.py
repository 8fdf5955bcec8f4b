from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from app.core.config import settings
from app.routers import presets as presets_router
from app.schemas.schemas import HealthResponse
from app.services import presets


app = FastAPI(title=settings.app_name)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.app_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# 包含路由（只读：运行仍通过 CLI）
app.include_router(presets_router.router)


@app.get("/")
async def root():
    return {"message": "QFridge engine API is running"}


@app.get("/health", response_model=HealthResponse)
async def health_check():
    return HealthResponse(status="healthy", presets=len(presets.list_presets()))
