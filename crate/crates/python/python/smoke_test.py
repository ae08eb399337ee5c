"""Smoke test for the pysandi extension module."""

import json

import pysandi


def main():
    params = pysandi.ScoreParams(1, 1.0, 10.0)
    assert params.update(0.0, 3) == -2.0
    assert params.update(9.5, 0) == 10.0
    assert params.reputation(-0.5) == "low"

    com, op = pysandi.commit(b"hello bob", "bob@example.org")
    assert pysandi.verify_commitment(com, op, b"hello bob", "bob@example.org")
    assert not pysandi.verify_commitment(com, op, b"hello bub", "bob@example.org")

    server = pysandi.Server(params, "reg", "admin")
    cred = server.register("reg")
    tag = server.issue_tag(cred, com)
    assert len(tag) <= 512
    assert pysandi.verify_tag(server.verifying_key(), tag)
    assert pysandi.decode(tag)["com"] == com
    assert server.report(tag) == "accepted"
    assert server.report(tag) == "replay"
    server.advance_epoch("admin")
    assert server.score(cred) == (0.0, "medium")

    game = pysandi.Game.from_json(json.dumps({
        "horizon": 1,
        "send_cap": 3,
        "params": {"k": 1, "b": 1, "M": 10},
        "messages": [{"reward": 2.0, "q": [0.5] * 4, "p": [0.5] * 4}],
    }))
    value, csv = game.solve()
    assert abs(value - 3.0) < 1e-12
    assert abs(game.brute_force() - value) < 1e-12
    assert csv.startswith("epochs_left,")
    mean, stderr = game.simulate(20000, seed=1)
    assert abs(mean - value) <= 4 * stderr
    print("pysandi smoke test passed")


if __name__ == "__main__":
    main()
