"""Run the bundled campaign for a few thousand iterations and list the
clusters it finds, next to the faults the demo engine was seeded with."""

import sys
from pathlib import Path

import deltafuzz
from deltafuzz.campaign import Campaign, CampaignConfig

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
registry = deltafuzz.demo_registry()
seeds = Path(deltafuzz.__file__).parent / "data" / "seeds"

campaign = Campaign(CampaignConfig(seeds, rng_seed=0, max_iterations=iterations), registry)
summary = campaign.run()

print(f"{summary.iterations} iterations, pool {summary.initial_pool} -> {summary.pool_size}, "
      f"{summary.reports} reports in {summary.unique_clusters} clusters\n")
faults = registry.faults()
for c in summary.clusters:
    blamed, symptom, signature, fired = c["key"]
    for fid in fired:
        f = faults[fid]
        print(f"{fid}  {symptom:<22} blamed {','.join(blamed) or '(no majority)':<30} "
              f"planted in {','.join(registry.fault_versions(fid))}  [{f.component.value}]  x{c['count']}")

missed = sorted(set(faults) - {fid for c in summary.clusters for fid in c["key"][3]})
print("\nnot found:", ", ".join(missed) or "none")
