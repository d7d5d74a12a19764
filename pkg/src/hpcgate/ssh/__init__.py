"""A small SSH-2 implementation: enough protocol for pooled exec channels.

No SSH client library is a hard dependency of the gateway; this subpackage
implements the subset the gateway and its embedded test server actually
speak to each other:

* transport: curve25519-sha256 key exchange, ssh-ed25519 host keys,
  aes128-ctr with hmac-sha2-256-etm packet protection
* authentication: public-key (ssh-ed25519) only
* connection: session channels carrying a single exec request each, with
  window-based flow control

PTYs, SFTP, agent forwarding, rekeying and compression are deliberately
absent. Both peers of every deployment are expected to speak this subset.
"""

from .client import SSHClientConnection, connect
from .errors import (
    SSHAuthError,
    SSHChannelOpenRejected,
    SSHConnectionClosed,
    SSHError,
    SSHHostKeyError,
    SSHProtocolError,
)
from .keys import (
    generate_private_key,
    load_private_key,
    private_key_to_pem,
    public_key_blob,
)

__all__ = [
    "SSHClientConnection",
    "connect",
    "SSHError",
    "SSHAuthError",
    "SSHChannelOpenRejected",
    "SSHConnectionClosed",
    "SSHHostKeyError",
    "SSHProtocolError",
    "generate_private_key",
    "load_private_key",
    "private_key_to_pem",
    "public_key_blob",
]
