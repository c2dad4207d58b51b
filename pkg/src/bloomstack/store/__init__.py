from .core import (
    AlreadyExists,
    Blob,
    BlobEntry,
    BlobEvent,
    BlobStore,
    BlobTooLarge,
    InvalidName,
    InvalidPath,
    NotFound,
    StorageFailure,
    StoreError,
    UnknownContainer,
)

__all__ = [
    "AlreadyExists",
    "Blob",
    "BlobEntry",
    "BlobEvent",
    "BlobStore",
    "BlobTooLarge",
    "InvalidName",
    "InvalidPath",
    "NotFound",
    "StorageFailure",
    "StoreError",
    "UnknownContainer",
]
