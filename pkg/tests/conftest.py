import re

import numpy as np

from hcdval import CoalitionGame, PointSet, RngStream

CRITERIA = {
    1: "exact oracle reproduces the glove game and the four axioms",
    2: "Monte-Carlo deviations stay inside the concentration envelope",
    3: "normalised runs conserve the surplus; raw mode obeys the measured bound",
    4: "shared-log estimates add across games",
    5: "top-k regret never escapes the 2k*eps bound",
    6: "balanced trees keep the capacity window and exact partitions",
    7: "streaming keeps untouched leaves bit-identical and saves evaluations",
    8: "valuation-guided selection beats random selection under label noise",
    9: "evaluation counts match the formula and undercut the flat baseline",
    10: "encoder training never hurts dispersion, objective, or penalty sign",
}

_acceptance = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _acceptance[num] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_acceptance):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            _acceptance[num], _acceptance[num].upper()
        )
        terminalreporter.write_line(f"ACCEPTANCE {num}: {status} - {CRITERIA[num]}")


def random_table_game(K: int, seed: int, bound: float = 1.0):
    """A random bounded game over K singleton players, plus its raw table.

    Payoffs are uniform in [-bound, bound] with v(empty) = 0, so every
    marginal is within 2*bound and the game works as a Monte-Carlo target.
    """
    gen = RngStream(seed, "test-table-game").generator()
    players = [PointSet([i]) for i in range(K)]
    table = {}
    for mask in range(2**K):
        members = PointSet([i for i in range(K) if mask >> i & 1])
        table[members.key()] = float(gen.uniform(-bound, bound))
    table[PointSet([]).key()] = 0.0

    def payoff(points: PointSet) -> float:
        return table[points.key()]

    return CoalitionGame(players, payoff, bound=bound), table


def permutation_average_oracle(game: CoalitionGame) -> np.ndarray:
    """Average marginals over all K! permutations: the definitional oracle."""
    from itertools import permutations

    K = game.K
    totals = np.zeros(K)
    count = 0
    for perm in permutations(range(K)):
        prev = game.value_of_ids([])
        picked = []
        for player in perm:
            picked.append(player)
            cur = game.value_of_ids(picked)
            totals[player] += cur - prev
            prev = cur
        count += 1
    return totals / count
