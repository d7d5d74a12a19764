"""Exception taxonomy for the SSH layer."""


class SSHError(Exception):
    pass


class SSHProtocolError(SSHError):
    """Peer violated the protocol subset we speak."""


class SSHConnectionClosed(SSHError):
    """Transport ended (EOF, reset, or DISCONNECT) while work was pending."""


class SSHAuthError(SSHError):
    """Server rejected our authentication."""


class SSHHostKeyError(SSHError):
    """Server host key not present in, or different from, the pinned entry."""


class SSHChannelOpenRejected(SSHError):
    """Server refused to open a session channel (e.g. session cap reached)."""

    def __init__(self, reason_code: int, description: str):
        super().__init__(f"channel open rejected ({reason_code}): {description}")
        self.reason_code = reason_code
        self.description = description
