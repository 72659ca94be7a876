class StorageError(Exception):
    """Базовая ошибка библиотеки."""


# Блочное устройство и экстенты
class DeviceError(StorageError):
    pass


class ExtentError(StorageError):
    pass


class UnknownInodeError(ExtentError):
    def __init__(self, inode_id: int):
        super().__init__(f"Inode {inode_id} не найден")
        self.inode_id = inode_id


class FileDeletedError(ExtentError):
    def __init__(self, inode_id: int):
        super().__init__(f"Inode {inode_id} уже удален")
        self.inode_id = inode_id


class DuplicateNameError(ExtentError):
    pass


class DeviceFullError(ExtentError):
    pass


class OutOfRangeError(ExtentError):
    pass


class AlignmentError(ExtentError):
    pass


# Синхронизация метаданных
class SyncError(StorageError):
    pass


class MalformedRecordError(SyncError):
    pass


class SyncTransportError(SyncError):
    pass


# Формат капсул
class WireError(StorageError):
    pass


class TruncatedFrameError(WireError):
    pass


class FrameTooLargeError(WireError):
    pass


class UnknownMessageError(WireError):
    pass


class InvalidMessageError(WireError):
    pass


# Реестр функций
class FunctionRegistryError(StorageError):
    pass


class DuplicateFunctionError(FunctionRegistryError):
    pass


class UnknownFunctionError(FunctionRegistryError):
    pass


# Хост
class HostError(StorageError):
    pass


class TransportError(HostError):
    pass


class VersionMismatchError(HostError):
    pass


class RemoteIOError(HostError):
    pass


# Хранилища
class LsmError(StorageError):
    pass


class BTreeError(StorageError):
    pass


class SizingError(BTreeError):
    pass


class CorruptNodeError(BTreeError):
    pass


class BenchError(StorageError):
    pass
