"""The tick protocol, byte by byte.

Talks to a live tick server over a raw socket: grain handshake, two timed
advancement grants, then an interrupt injected mid-sleep through the side
port and delivered on the advancement line it interrupted.

Run:  python3 demos/05_wire_bytes.py      (takes ~2 s)
"""

import socket
import threading
import time

from realtick.tickserver import TickServer, send_interrupt

server = TickServer(port=0, intr_port=0)
server.start()
print(f"tick server on :{server.port}, interrupts on :{server.intr_port}\n")


def chat(conn, reader, line: bytes) -> bytes:
    t0 = time.monotonic()
    conn.sendall(line)
    reply = reader.readline()
    dt = (time.monotonic() - t0) * 1000
    print(f"  -> {line!r}")
    print(f"  <- {reply!r}   after {dt:7.1f} ms")
    return reply


try:
    with socket.create_connection(("127.0.0.1", server.port)) as conn:
        reader = conn.makefile("rb")
        print("handshake: grain = 100 ms per logical unit")
        chat(conn, reader, b"100\r\n")

        print("\nadvance 5 units: the server sleeps 500 ms, then grants all 5")
        chat(conn, reader, b"5\r\n")

        print("\nadvance 10 units, but an interrupt arrives 300 ms in:")
        timer = threading.Timer(
            0.3, send_interrupt, ("127.0.0.1", server.intr_port, "set-mode bolus")
        )
        timer.start()
        reply = chat(conn, reader, b"10\r\n")
        timer.join()
        units, _, payload = reply.partition(b"|")
        print(f"\nthe grant is cut short: {units.decode()} of 10 units elapsed "
              f"(truncated to a whole 1/1000 of a unit),")
        print(f"and the payload {payload.strip().decode()!r} rides on the same line.")
finally:
    server.stop()
