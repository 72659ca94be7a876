import pytest

from src.bench.runner import Testbed
from src.extent.device import BlockDevice
from src.extent.store import ExtentStore
from src.host.client import HostClient
from src.host.transport import LoopbackTransport
from src.sync.channel import LoopbackSyncChannel
from src.sync.host import MetadataSynchronizer
from src.sync.replica import ReplicaTable
from src.target.service import TargetService

BLOCK = 512


@pytest.fixture
def device():
    dev = BlockDevice(BLOCK, 4096)
    yield dev
    dev.close()


@pytest.fixture
def extents(device):
    return ExtentStore(device, fragment_probability=0.0, seed=7)


@pytest.fixture
def replicas():
    return ReplicaTable(BLOCK)


@pytest.fixture
def channel(replicas):
    return LoopbackSyncChannel(replicas)


@pytest.fixture
def synchronizer(extents, channel):
    sync = MetadataSynchronizer(extents, channel, poll_interval_ms=1)
    yield sync
    channel.close()
    sync.stop()


@pytest.fixture
def service(device, replicas):
    return TargetService(device, replicas)


@pytest.fixture
def transport(service):
    return LoopbackTransport(service)


@pytest.fixture
def client(extents, synchronizer, transport):
    return HostClient(extents, synchronizer, transport, resync_wait_s=0.05)


@pytest.fixture
def bed():
    """Полный стенд в процессе без фонового синхронизатора: очередь выгружается синхронно."""
    testbed = Testbed.local(block_size=BLOCK, capacity_blocks=1 << 16, seed=1)
    yield testbed
    testbed.close()


@pytest.fixture
def make_file(extents):
    def make(name: str, data: bytes) -> int:
        inode_id = extents.create_file(name)
        extents.append(inode_id, data)
        return inode_id
    return make
