"""Minimal host-protocol runtime shared by the reference plugins.

A plugin reads one JSON object per line from stdin and answers each with
exactly one JSON line on stdout. ``serve`` also enforces strict alternation:
if a second request is already waiting while the first is still being
answered, the host pipelined its writes and the plugin aborts.
"""

import argparse
import json
import os
import select
import sys
import time

PROTOCOL = 1
MASK = (1 << 64) - 1


class SplitMix64:
    """Same stream as the host's environment generator."""

    def __init__(self, seed=0):
        self.state = seed & MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def next_f64(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low, high):
        return low + (high - low) * self.next_f64()

    def below(self, n):
        return min(int(self.next_f64() * n), n - 1)


FAULTS = ("bad_dim", "bad_action", "hang", "garbage", "version", "exit_early", "crash")


def parse_args(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--fault", choices=FAULTS, help="deliberately violate the protocol")
    p.add_argument("--fault-after", type=int, default=0,
                   help="number of step/choose_action requests served before the fault fires")
    return p.parse_args()


class LineReader:
    def __init__(self, fd=0):
        self.fd = fd
        self.buf = b""

    def read_line(self):
        while b"\n" not in self.buf:
            chunk = os.read(self.fd, 65536)
            if not chunk:
                return None
            self.buf += chunk
        line, self.buf = self.buf.split(b"\n", 1)
        return line.decode("utf-8")

    def pending(self):
        if self.buf:
            return True
        ready, _, _ = select.select([self.fd], [], [], 0)
        return bool(ready)


def send(message):
    sys.stdout.write(json.dumps(message) + "\n")
    sys.stdout.flush()


def serve(handler):
    """Dispatches requests to ``handler(message) -> reply`` until EOF."""
    reader = LineReader()
    while True:
        line = reader.read_line()
        if line is None:
            return
        if not line.strip():
            continue
        reply = handler(json.loads(line))
        if reader.pending():
            sys.stderr.write("host wrote a request before reading the previous response\n")
            sys.exit(3)
        if reply is not None:
            send(reply)


class Faults:
    """Applies a --fault mode at the point where it is meaningful."""

    def __init__(self, args):
        self.mode = args.fault
        self.after = args.fault_after
        self.calls = 0

    def hello(self, reply):
        if self.mode == "version":
            reply["protocol"] = 2
        if self.mode == "exit_early":
            sys.exit(0)
        return reply

    def due(self):
        """Counts one step-like request; true when the fault should fire."""
        self.calls += 1
        return self.calls > self.after

    def interfere(self):
        """Faults that do not depend on the message content."""
        if self.mode == "hang":
            time.sleep(60)
        elif self.mode == "garbage":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
            return True
        elif self.mode == "crash":
            sys.stderr.write("plugin crashing on purpose\n")
            os._exit(13)
        return False
