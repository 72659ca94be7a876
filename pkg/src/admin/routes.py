from fastapi import APIRouter, Depends, HTTPException, Request

from src.target.schemas import ReplicaInfo, TargetStats
from src.target.service import TargetService

router = APIRouter(prefix="/admin", tags=["admin"])


async def get_service(request: Request) -> TargetService:
    return request.app.state.service


@router.get("/stats", response_model=TargetStats)
async def get_stats(service: TargetService = Depends(get_service)):
    return service.stats()


@router.post("/stats/reset", response_model=dict)
async def reset_stats(service: TargetService = Depends(get_service)):
    service.reset_stats()
    return {"message": "Статистика сброшена"}


@router.get("/replicas/{inode_id}", response_model=ReplicaInfo)
async def get_replica(inode_id: int, service: TargetService = Depends(get_service)):
    info = service.replica_info(inode_id)
    if info is None:
        raise HTTPException(status_code=404, detail="Реплика inode не найдена")
    return info
