#!/usr/bin/env python3
"""Cart-pole as an out-of-process environment plugin.

Reproduces the built-in CartPole-v1 bit for bit: same SplitMix64 reset
draws, same explicit-Euler update in the same operation order.
"""

import math

from easyrl_plugin import PROTOCOL, Faults, SplitMix64, parse_args, serve

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE = 10.0
DT = 0.02
X_LIMIT = 2.4
THETA_LIMIT = 12.0 * 2.0 * math.pi / 360.0
MAX_STEPS = 500

DESCRIPTOR = {
    "id": "PluginCartPole-v1",
    "obsKind": {"kind": "continuous", "dim": 4},
    "actionCount": 2,
    "maxEpisodeSteps": MAX_STEPS,
    "partiallyObservable": False,
    "renderSchema": "cartpole",
}


class CartPole:
    def __init__(self, faults):
        self.rng = SplitMix64(0)
        self.state = (0.0, 0.0, 0.0, 0.0)
        self.steps = 0
        self.faults = faults

    def obs(self, reward, done):
        x, _, theta, _ = self.state
        observation = list(self.state)
        if self.faults.mode == "bad_dim":
            observation = observation[:3]
        return {
            "type": "obs",
            "observation": observation,
            "reward": reward,
            "done": done,
            "frame": {"schema": "cartpole", "x": x, "theta": theta},
        }

    def reset(self, seed):
        if seed is not None:
            self.rng = SplitMix64(seed)
        self.state = tuple(self.rng.uniform(-0.05, 0.05) for _ in range(4))
        self.steps = 0
        return self.obs(0.0, False)

    def step(self, action):
        x, x_dot, theta, theta_dot = self.state
        force = FORCE if action == 1 else -FORCE
        sin, cos = math.sin(theta), math.cos(theta)
        temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS
        theta_acc = (GRAVITY * sin - cos * temp) / (
            HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS))
        x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS
        self.state = (
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        )
        self.steps += 1
        x, _, theta, _ = self.state
        done = abs(x) > X_LIMIT or abs(theta) > THETA_LIMIT or self.steps >= MAX_STEPS
        return self.obs(1.0, done)


def main():
    faults = Faults(parse_args(__doc__))
    env = CartPole(faults)

    def handle(msg):
        kind = msg.get("type")
        if kind == "hello":
            return faults.hello({"type": "hello_ok", "protocol": PROTOCOL, "descriptor": DESCRIPTOR})
        if kind == "reset":
            return env.reset(msg.get("seed"))
        if kind == "step":
            action = msg.get("action")
            if action not in (0, 1):
                return {"type": "error", "message": f"invalid action {action!r}"}
            if faults.due() and faults.interfere():
                return None
            return env.step(action)
        if kind == "render":
            x, _, theta, _ = env.state
            return {"type": "frame", "frame": {"schema": "cartpole", "x": x, "theta": theta}}
        return {"type": "error", "message": f"unknown request {kind!r}"}

    serve(handle)


if __name__ == "__main__":
    main()
