import io
import json
import shutil

import pytest

from deltafuzz.campaign import (Campaign, CampaignConfig, EmptyPool, init_pool, load_checkpoint, run,
                                save_checkpoint)
from deltafuzz.dsl import canonical_hash, parse
from deltafuzz.oracle import VerdictKind, compare, run_all

F01_SEED = ("let w = tensor f32 [2] {1.0, 2.0}\nlet g = tensor f16 [2] {0.5, 0.25}\n"
            "let u = adadelta_update(w, g; learning_rate=1.0, rho=0.95, epsilon=1e-08)\nobserve u\n")


@pytest.fixture
def seed_copy(tmp_path, seeds_dir):
    d = tmp_path / "seeds"
    shutil.copytree(seeds_dir, d)
    return d


def test_incompatible_seed_is_filtered(seed_copy, registry, caplog):
    (seed_copy / "zz_f01.tft").write_text(F01_SEED)
    pool, rejected = init_pool(seed_copy, registry)
    assert len(pool) == 22
    assert [(r.path, r.reason) for r in rejected] == [("zz_f01.tft", "incompatible seed: CrashSome")]
    assert "incompatible seed zz_f01.tft" in caplog.text


def test_duplicate_seed_is_deduplicated(seed_copy, registry):
    shutil.copy(seed_copy / "s01_elementwise.tft", seed_copy / "s99_copy.tft")
    pool, rejected = init_pool(seed_copy, registry)
    assert len(pool) == 22 and not rejected
    assert len({e.hash for e in pool.entries}) == len(pool)
    assert all(e.order == 0 for e in pool.entries)


def test_invalid_seeds_are_skipped(seed_copy, registry):
    (seed_copy / "bad_parse.tft").write_text("let a = \n")
    (seed_copy / "bad_shape.tft").write_text("let a = tensor f32 [2] {1,2}\nlet b = tensor f32 [3] {1,2,3}\n"
                                             "let c = add(a, b)\nobserve c\n")
    pool, rejected = init_pool(seed_copy, registry)
    assert len(pool) == 22
    assert sorted(r.path for r in rejected) == ["bad_parse.tft", "bad_shape.tft"]


def test_empty_pool(tmp_path, registry):
    (tmp_path / "only.tft").write_text(F01_SEED)
    with pytest.raises(EmptyPool):
        init_pool(tmp_path, registry)
    with pytest.raises(EmptyPool):
        init_pool(tmp_path / "missing_is_empty", registry)


def test_config_validation(seeds_dir):
    with pytest.raises(ValueError):
        CampaignConfig(seeds_dir, max_iterations=None, max_seconds=None)
    with pytest.raises(ValueError):
        CampaignConfig(seeds_dir, rng_seed=-1)
    with pytest.raises(ValueError):
        CampaignConfig(seeds_dir, step_budget=0)


def test_zero_iterations(seeds_dir, registry):
    s = run(CampaignConfig(seeds_dir, max_iterations=0), registry)
    assert s.iterations == 0 and s.pool_size == s.initial_pool == 22 and s.reports == 0


def test_time_budget_stops(seeds_dir, registry):
    s = run(CampaignConfig(seeds_dir, max_iterations=None, max_seconds=0.2), registry)
    assert s.iterations > 0


def campaign_stream(seeds_dir, registry, n=400, seed=11):
    buf = io.StringIO()
    summary = Campaign(CampaignConfig(seeds_dir, rng_seed=seed, max_iterations=n), registry).run(buf)
    return buf.getvalue(), summary


def test_deterministic(seeds_dir, registry):
    a, sa = campaign_stream(seeds_dir, registry)
    b, sb = campaign_stream(seeds_dir, registry)
    assert a == b and sa == sb and sa.reports > 0
    c, _ = campaign_stream(seeds_dir, registry, seed=12)
    assert c != a


def test_checkpoint_resume_matches_uninterrupted(tmp_path, seeds_dir, registry):
    full, full_summary = campaign_stream(seeds_dir, registry, n=400)
    ck = tmp_path / "state.json"
    first = io.StringIO()
    Campaign(CampaignConfig(seeds_dir, rng_seed=11, max_iterations=150), registry).run(first, checkpoint=ck)
    cfg = CampaignConfig(seeds_dir, rng_seed=11, max_iterations=400)
    resumed = load_checkpoint(ck, cfg, registry)
    second = io.StringIO()
    summary = resumed.run(second)
    assert first.getvalue() + second.getvalue() == full
    assert summary == full_summary
    with pytest.raises(ValueError):
        load_checkpoint(ck, CampaignConfig(seeds_dir, rng_seed=99), registry)


def test_event_invariants(seeds_dir, registry):
    c = Campaign(CampaignConfig(seeds_dir, rng_seed=5, max_iterations=500), registry)
    seen_clusters = []
    report_ids = []
    pool_before = len(c.state.pool)

    def check(event, report):
        seen_clusters.append(len(c.state.clusters))
        if event.admitted:
            assert event.verdict is VerdictKind.CONSISTENT and event.statically_valid
        if report is not None:
            report_ids.append(report.report_id)
            assert report.verdict.kind is not VerdictKind.CONSISTENT
            assert report.timestamp == report.iteration == event.iteration
            assert report.to_json()["rerun_count"] == 0
        if event.verdict is VerdictKind.CONSISTENT:
            assert report is None

    s = c.run(on_event=check)
    assert seen_clusters == sorted(seen_clusters)
    assert report_ids == list(range(len(report_ids)))
    assert s.pool_size == pool_before + s.admitted
    hashes = [e.hash for e in c.state.pool.entries]
    assert len(hashes) == len(set(hashes))
    for e in c.state.pool.entries[pool_before:]:
        assert canonical_hash(e.program) == e.hash and e.order == len(e.lineage) >= 1
        assert compare(run_all(e.typed, registry)).kind is VerdictKind.CONSISTENT


def test_report_record_fields(seeds_dir, registry):
    text, summary = campaign_stream(seeds_dir, registry, n=300)
    rec = json.loads(text.splitlines()[0])
    for k in ("report_id", "iteration", "timestamp", "symptom", "blamed", "resolution", "cluster_id",
              "cluster_key", "verdict", "outcomes", "lineage", "rerun_count", "program"):
        assert k in rec
    parse(rec["program"])
    assert summary.to_json()["record"] == "summary"
    assert sum(summary.per_symptom.values()) == summary.reports


def test_save_checkpoint_atomic(tmp_path, seeds_dir, registry):
    c = Campaign(CampaignConfig(seeds_dir, max_iterations=10), registry)
    c.run()
    save_checkpoint(c, tmp_path / "ck.json")
    assert not (tmp_path / "ck.json.tmp").exists()
    assert json.loads((tmp_path / "ck.json").read_text())["iteration"] == 10
