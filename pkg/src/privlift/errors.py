"""Protocol exceptions.  ``exit_code`` is what the CLI returns for each."""


class ProtocolError(Exception):
    exit_code = 10


class ChannelError(ProtocolError):
    exit_code = 11


class FrameError(ProtocolError):
    exit_code = 12


class PeerAbort(ProtocolError):
    exit_code = 13


class HandshakeError(ProtocolError):
    exit_code = 14


class SpineDivergence(ProtocolError):
    exit_code = 15


class BindingMismatch(ProtocolError):
    exit_code = 16


class TranscriptMismatch(ProtocolError):
    exit_code = 17


class DecodeError(ProtocolError):
    exit_code = 18


class PreflightError(ProtocolError):
    exit_code = 19


class ShardFailure(ProtocolError):
    exit_code = 20

    def __init__(self, shard: int, cause: BaseException):
        super().__init__(f"shard {shard} failed: {cause}")
        self.shard = shard
        self.cause = cause


class CovertCheckFailed(ProtocolError):
    exit_code = 21
