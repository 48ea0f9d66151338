"""Hot inner loops shared by the simulator and channel models.

The same function bodies run either JIT-compiled through numba or as plain
Python, so both backends produce bit-identical results on the same inputs.
Selection happens once at import time:

* ``VLCRELAY_NUMBA=0`` (or ``off``/``false``) forces the plain-Python path,
* ``VLCRELAY_NUMBA=1`` (or ``require``) fails loudly if numba is missing,
* unset / ``auto`` uses numba when importable.

``python -m vlcrelay.benchmark`` times both paths against each other.
"""

from __future__ import annotations

import os

__all__ = ["BACKEND", "relay_scan", "ge_chain", "relay_scan_py", "ge_chain_py"]


def _relay_scan(received, period_s, pt_s, dead_s, l0_s, relayed, blocked, latency_s):
    """Walk the packet stream through the decode-and-relay stage.

    ``received`` holds per-packet channel outcomes (1 = decodable).  A relay
    transmission makes the node deaf, which costs at most the one packet
    whose on-air window overlaps the relay window; the short spill-over into
    the following packet's preamble is absorbed by the sync preamble and
    does not count.  Latency of a relayed packet spans back over the
    immediately preceding run of channel losses.
    """
    relay_start = -1.0e30
    relay_end = -1.0e30
    block_pending = False
    loss_run = 0
    n = received.shape[0]
    for j in range(n):
        start = j * period_s
        end = start + pt_s
        if block_pending and start < relay_end and end > relay_start:
            blocked[j] = 1
            block_pending = False
        elif received[j] == 1:
            relayed[j] = 1
            latency_s[j] = l0_s + loss_run * period_s
            relay_start = end + dead_s
            relay_end = relay_start + pt_s
            block_pending = True
        if received[j] == 1:
            loss_run = 0
        else:
            loss_run += 1


def _ge_chain(u_loss, u_trans, p_gb, p_bg, loss_good, loss_bad, lost):
    """Two-state burst channel: per-packet loss draw, then state transition.

    Consumes exactly one uniform per draw from each input array so the
    python and numba paths walk the identical random stream.
    """
    state = 0  # 0 = good, 1 = bad
    n = u_loss.shape[0]
    for i in range(n):
        if state == 0:
            if u_loss[i] < loss_good:
                lost[i] = 1
            if u_trans[i] < p_gb:
                state = 1
        else:
            if u_loss[i] < loss_bad:
                lost[i] = 1
            if u_trans[i] < p_bg:
                state = 0


def _want_numba() -> bool | None:
    flag = os.environ.get("VLCRELAY_NUMBA", "auto").strip().lower()
    if flag in ("0", "off", "false", "no"):
        return False
    if flag in ("1", "on", "true", "yes", "require"):
        return True
    return None  # auto


relay_scan_py = _relay_scan
ge_chain_py = _ge_chain

_choice = _want_numba()
if _choice is False:
    BACKEND = "python"
    relay_scan = _relay_scan
    ge_chain = _ge_chain
else:
    try:
        from numba import njit
    except ImportError:
        if _choice is True:
            raise
        BACKEND = "python"
        relay_scan = _relay_scan
        ge_chain = _ge_chain
    else:
        BACKEND = "numba"
        relay_scan = njit(cache=True, nogil=True)(_relay_scan)
        ge_chain = njit(cache=True, nogil=True)(_ge_chain)
