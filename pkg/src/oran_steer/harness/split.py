"""Two-process closed loop: the RIC runs in a child process behind a framed socket."""

from __future__ import annotations

import logging
import multiprocessing
import socket

from ..netsim import HandoverRequest, KpiReportBatch
from ..ric import KpiStore
from .loop import RicSide, SimulatorSide
from .wire import LockstepChecker, ProtocolError, WireMessage, read_frame, send_frame

logger = logging.getLogger(__name__)


def serve_ric(sock, config):
    """RIC endpoint: answer every KPI_BATCH with its handovers and an ACK until END."""
    ric = RicSide(config)
    checker = LockstepChecker()
    try:
        while True:
            msg = checker.observe(read_frame(sock))
            if msg.type == "END":
                log = [[t, ue, v, [[c, f] for c, f in cand], tgt]
                       for t, ue, v, cand, tgt in ric.ric.decision_log]
                send_frame(sock, WireMessage("END", msg.iteration, {"decision_log": log}))
                return
            batch = KpiReportBatch.from_dict(msg.body)
            for req in ric.handle(batch):
                out = WireMessage("HANDOVER", msg.iteration, req.to_dict())
                checker.observe(out)
                send_frame(sock, out)
            ack = WireMessage("ACK", msg.iteration)
            checker.observe(ack)
            send_frame(sock, ack)
    except Exception:  # noqa: BLE001 - the simulator side sees the closed socket
        logger.exception("RIC endpoint stopped")
    finally:
        sock.close()


def _child(sock, config):
    serve_ric(sock, config)


def exchange(sock, checker, batch):
    """Send one batch and collect the RIC's handover requests up to its ACK."""
    out = WireMessage("KPI_BATCH", batch.timestamp, batch.to_dict())
    checker.observe(out)
    send_frame(sock, out)
    requests = []
    while True:
        msg = checker.observe(read_frame(sock))
        if msg.type == "ACK":
            return requests
        if msg.type != "HANDOVER":
            raise ProtocolError(f"unexpected {msg.type} while awaiting the ACK")
        requests.append(HandoverRequest(**msg.body))


def run_split(config, iterations=None, timeout=60.0):
    """Same loop as :func:`run_closed_loop` with the RIC in a separate process.

    The simulator keeps a mirror of the telemetry it sent so the result has
    the same store content as an in-process run.
    """
    config.validate()
    T = config.iterations if iterations is None else iterations
    parent, child = socket.socketpair()
    parent.settimeout(timeout)
    ctx = multiprocessing.get_context("fork")
    proc = ctx.Process(target=_child, args=(child, config), daemon=True)
    proc.start()
    child.close()
    mirror = KpiStore()
    sim = SimulatorSide(config, mirror)
    checker = LockstepChecker()
    error, log = None, []
    t = 0
    try:
        for t in range(T):
            batch = sim.next_batch(t)
            requests = exchange(parent, checker, batch)
            mirror.ingest(batch)
            sim.apply(requests)
        end = WireMessage("END", T)
        checker.observe(end)
        send_frame(parent, end)
        reply = read_frame(parent)
        if reply.type != "END":
            raise ProtocolError(f"expected END, got {reply.type}")
        log = [(t_, ue, v, [(c, f) for c, f in cand], tgt)
               for t_, ue, v, cand, tgt in reply.body["decision_log"]]
    except Exception as exc:  # noqa: BLE001 - surfaced on the partial result
        logger.error("split run aborted at iteration %d: %s", t, exc)
        error = f"iteration {t}: {type(exc).__name__}: {exc}"
        sim.counts = sim.counts[:t]
        sim.injected = sim.injected[:t]
    finally:
        parent.close()
        proc.join(timeout=5)
        if proc.is_alive():
            proc.terminate()
            proc.join()
    return sim.result(mirror, log, error)
