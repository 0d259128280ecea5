#!/usr/bin/env python3
"""Uniform-random agent plugin.

Draws actions from a SplitMix64 stream seeded with ``seed + 2``. The saved
blob is the generator state, so save followed by load resumes the exact
action sequence. It never learns: ``update`` carries no loss.
"""

import base64
import struct

from easyrl_plugin import PROTOCOL, Faults, SplitMix64, parse_args, serve

INFO = {"id": "random-plugin", "displayName": "Random (plugin)",
        "supportedObs": ["discrete", "continuous"]}


def main():
    faults = Faults(parse_args(__doc__))
    agent = {"actions": None, "rng": SplitMix64(2)}

    def handle(msg):
        kind = msg.get("type")
        if kind == "hello":
            return faults.hello({"type": "hello_ok", "protocol": PROTOCOL, "descriptor": INFO})
        if kind == "configure":
            agent["actions"] = msg["env"]["actionCount"]
            agent["rng"] = SplitMix64(msg["hyperparameters"]["seed"] + 2)
            return {"type": "ack"}
        if kind == "choose_action":
            if faults.due():
                if faults.mode == "bad_action":
                    return {"type": "action", "action": agent["actions"] + 3}
                if faults.interfere():
                    return None
            return {"type": "action", "action": agent["rng"].below(agent["actions"])}
        if kind == "observe":
            return {"type": "ack"}
        if kind == "update":
            return {"type": "updated"}
        if kind == "save":
            blob = struct.pack("<Q", agent["rng"].state)
            return {"type": "saved", "blob": base64.b64encode(blob).decode("ascii")}
        if kind == "load":
            (agent["rng"].state,) = struct.unpack("<Q", base64.b64decode(msg["blob"]))
            return {"type": "ack"}
        return {"type": "error", "message": f"unknown request {kind!r}"}

    serve(handle)


if __name__ == "__main__":
    main()
