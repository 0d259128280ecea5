#!/usr/bin/env python3
"""Smallest possible environment plugin.

The observation echoes the last action taken; reward is 1 for action 1 and
0 otherwise; episodes last five steps.
"""

from easyrl_plugin import PROTOCOL, Faults, parse_args, serve

LENGTH = 5
DESCRIPTOR = {
    "id": "Echo-v0",
    "obsKind": {"kind": "continuous", "dim": 1},
    "actionCount": 2,
    "maxEpisodeSteps": LENGTH,
    "partiallyObservable": False,
    "renderSchema": "custom",
}


def main():
    faults = Faults(parse_args(__doc__))
    state = {"t": 0, "last": 0}

    def obs(reward, done):
        observation = [float(state["last"])]
        if faults.mode == "bad_dim":
            observation = observation + [0.0]
        return {"type": "obs", "observation": observation, "reward": reward, "done": done}

    def handle(msg):
        kind = msg.get("type")
        if kind == "hello":
            return faults.hello({"type": "hello_ok", "protocol": PROTOCOL, "descriptor": DESCRIPTOR})
        if kind == "reset":
            state.update(t=0, last=0)
            return obs(0.0, False)
        if kind == "step":
            if faults.due() and faults.interfere():
                return None
            state["t"] += 1
            state["last"] = msg["action"]
            return obs(1.0 if msg["action"] == 1 else 0.0, state["t"] >= LENGTH)
        if kind == "render":
            return {"type": "frame", "frame": {"schema": "custom", "payload": dict(state)}}
        return {"type": "error", "message": f"unknown request {kind!r}"}

    serve(handle)


if __name__ == "__main__":
    main()
