from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import logging

from .core.config import settings
from .api.endpoints.workbench import router as workbench_router

logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)

app = FastAPI(
    title=settings.PROJECT_NAME,
    version=settings.VERSION,
    description="State estimation, bad-data processing and data-driven attack experiments on power-grid cases.",
    openapi_url=f"{settings.API_V1_STR}/openapi.json",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(
    workbench_router,
    prefix=f"{settings.API_V1_STR}/workbench",
    tags=["workbench"]
)


@app.get("/")
async def root():
    return {
        "message": "Welcome to the Grid Attack Workbench API",
        "version": settings.VERSION,
        "docs_url": app.docs_url,
    }
