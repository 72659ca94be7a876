import argparse
import asyncio
import logging
import signal
from typing import Optional

import uvicorn
from fastapi import FastAPI

from src.admin.routes import router as admin_router
from src.core.config import parse_address, settings
from src.core.log import setup_logging
from src.extent.device import BlockDevice
from src.sync.replica import ReplicaTable
from src.target.registry import default_registry
from src.target.schemas import ExecutionLimits
from src.target.server import DataPathServer, SyncServer
from src.target.service import TargetService

logger = logging.getLogger(__name__)

app = FastAPI(title=settings.PROJECT_NAME, version=settings.PROJECT_VERSION)
app.include_router(admin_router)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="target", description="Таргет с исполнением функций хранилища")
    parser.add_argument("--listen", default=f"0.0.0.0:{settings.TARGET_PORT}",
                        help="адрес пути данных host:port")
    parser.add_argument("--sync-listen", default=f"0.0.0.0:{settings.SYNC_PORT}",
                        help="адрес канала синхронизации host:port")
    parser.add_argument("--backing", default=settings.BACKING_PATH,
                        help="файл устройства (по умолчанию в памяти)")
    parser.add_argument("--block-size", type=int, default=settings.BLOCK_SIZE)
    parser.add_argument("--capacity-blocks", type=int, default=settings.CAPACITY_BLOCKS)
    parser.add_argument("--admin-port", type=int, default=settings.ADMIN_PORT)
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    return parser


def _dump_stats() -> None:
    service: Optional[TargetService] = getattr(app.state, "service", None)
    if service is None:
        return
    for fn in service.stats().functions:
        logger.info(
            f"Функция {fn.function_id}: исполнений {fn.executions}, "
            f"повторных чтений {fn.resubmissions}, несовпадений версий {fn.mismatches}"
        )


@app.on_event("startup")
async def startup():
    options = getattr(app.state, "options", None) or build_parser().parse_args([])
    device = BlockDevice(options.block_size, options.capacity_blocks, options.backing)
    replicas = ReplicaTable(device.block_size)
    service = TargetService(device, replicas, default_registry(), ExecutionLimits())
    app.state.device = device
    app.state.service = service

    app.state.data_server = DataPathServer(service, *parse_address(options.listen))
    app.state.sync_server = SyncServer(replicas, *parse_address(options.sync_listen))
    await app.state.data_server.start()
    await app.state.sync_server.start()

    if hasattr(signal, "SIGUSR1"):
        asyncio.get_running_loop().add_signal_handler(signal.SIGUSR1, _dump_stats)
    logger.info("Таргет успешно запущен")


@app.on_event("shutdown")
async def shutdown():
    logger.info("Завершение работы таргета начато")
    try:
        for name in ("data_server", "sync_server"):
            server = getattr(app.state, name, None)
            if server is not None:
                await server.stop()
        if hasattr(app.state, "device"):
            app.state.device.close()
            logger.info("Устройство закрыто")
    except Exception as e:
        logger.error(f"Ошибка при завершении работы таргета: {e}")
        raise
    finally:
        logger.info("Таргет полностью остановлен")


def main(argv: Optional[list[str]] = None) -> None:
    options = build_parser().parse_args(argv)
    setup_logging(options.log_level)
    app.state.options = options
    uvicorn.run(app, host="0.0.0.0", port=options.admin_port, log_level=options.log_level.lower())


if __name__ == "__main__":
    main()
