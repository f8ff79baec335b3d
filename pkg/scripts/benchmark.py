#!/usr/bin/env python3
"""
Benchmark Tool
Times the four analysis techniques on synthetic data and compares them
against the performance envelopes.
"""

import argparse
import sys
import time
from pathlib import Path
from typing import Callable, List, Tuple

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import churn  # noqa: E402
import fingerprints  # noqa: E402
import neighbors  # noqa: E402
import uptime  # noqa: E402
from models import BaselineSpec, SybilSpec  # noqa: E402
from synth import generate  # noqa: E402

# (name, budget in seconds)
ENVELOPES = {
    "churn pair": 1.0,
    "neighbor search": 5.0,
    "uptime month": 600.0,
    "fingerprint month": 300.0,
}


class Benchmark:
    """Generate the synthetic inputs once and time each technique"""

    def __init__(self, relays: int, hours: int, seed: int):
        self.relays = relays
        self.hours = hours
        self.seed = seed
        self.results: List[Tuple[str, float]] = []

    def build(self):
        print(f"📂 Generating {self.hours} hours over {self.relays} relays...")
        started = time.perf_counter()
        baseline = BaselineSpec(relay_count=self.relays, hourly_join_rate=0.002, hourly_leave_rate=0.002,
                                duration_hours=self.hours, rng_seed=self.seed)
        ec2 = SybilSpec(name="ec2", group_size=88, join_time=0, fingerprint_churn=24)
        self.stream = generate(baseline, [ec2])
        print(f"   ✓ {len(self.stream.consensuses)} consensuses in {time.perf_counter() - started:.1f}s")

    def measure(self, name: str, action: Callable[[], object]):
        started = time.perf_counter()
        action()
        elapsed = time.perf_counter() - started
        self.results.append((name, elapsed))
        print(f"   ✓ {name}: {elapsed:.2f}s")

    def run(self):
        print("\n⏱️  Timing techniques...")
        consensuses = self.stream.consensuses
        seed = consensuses[-1].relays()[0].fingerprint
        self.measure("churn pair", lambda: churn.churn_pair(consensuses[0], consensuses[1]))
        self.measure("neighbor search",
                     lambda: neighbors.nearest(seed, consensuses[-1], self.stream.descriptors, n=10, workers=-1))
        self.measure("uptime month", lambda: uptime.cluster_order(uptime.build_matrix(consensuses)))
        self.measure("fingerprint month", lambda: fingerprints.top_changers(fingerprints.track(consensuses), 20))

    def print_report(self) -> bool:
        print("\n" + "=" * 70)
        print("📊 BENCHMARK REPORT")
        print("=" * 70)
        within = True
        for name, elapsed in self.results:
            budget = ENVELOPES[name]
            ok = elapsed <= budget
            within &= ok
            print(f"{'✅' if ok else '❌'} {name:<20} {elapsed:>9.2f}s   budget {budget:>6.0f}s")
        print("=" * 70)
        return within


def main():
    """Run the benchmark"""
    parser = argparse.ArgumentParser(description="Time sybilscope techniques on synthetic data")
    parser.add_argument("--relays", type=int, default=6942, help="Baseline relays (default: 6942)")
    parser.add_argument("--hours", type=int, default=744, help="Stream length in hours (default: one month)")
    parser.add_argument("--seed", type=int, default=1, help="Generator seed")
    args = parser.parse_args()

    bench = Benchmark(args.relays, args.hours, args.seed)
    bench.build()
    bench.run()
    sys.exit(0 if bench.print_report() else 1)


if __name__ == "__main__":
    main()
