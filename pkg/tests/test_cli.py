import csv
import json

import numpy as np
import pytest

from cellsched.cli import (
    PROFILE_HEADER,
    RATE_DELAY_HEADER,
    cmd_rate_delay,
    cmd_replay,
    cmd_selftest,
    cmd_throughput_profile,
    config_from_dict,
    config_to_dict,
    main,
    parse_config,
)


def tiny_dict(**kw):
    base = {"C": 3, "K": 4, "M": 2, "slots_warmup": 150, "slots_measure": 300,
            "probe_slots": 150, "seed": 42}
    base.update(kw)
    return base


def write_cfg(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestParseConfig:
    def test_empty_config_gives_defaults(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, {}))
        assert cfg.layout.C == 18 and cfg.layout.K == 36 and cfg.layout.M == 2
        assert cfg.layout.G0 == pytest.approx(1e6)
        assert cfg.layout.nu == 3.0 and cfg.layout.delta == 0.05
        assert cfg.sched.V == 50.0 and cfg.sched.A_max == 50.0

    def test_invalid_value_names_field(self, tmp_path):
        with pytest.raises(ValueError, match=r"LayoutParams\.M"):
            parse_config(write_cfg(tmp_path, {"M": 0}))

    def test_partial_override_keeps_defaults(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, {"C": 3}))
        assert cfg.layout.C == 3
        assert cfg.layout.K == 36 and cfg.sched.V == 50.0

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="unknown config keys: antennas"):
            parse_config(write_cfg(tmp_path, {"antennas": 4}))

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ValueError, match="malformed"):
            parse_config(p)

    def test_missing_file(self):
        with pytest.raises(ValueError, match="not found"):
            parse_config("no/such/file.json")

    def test_roundtrip(self):
        cfg = config_from_dict(tiny_dict(utility="maxmin", mode="harq", r_first=2.5))
        again = config_from_dict(config_to_dict(cfg))
        assert config_to_dict(again) == config_to_dict(cfg)


class TestThroughputProfile:
    def test_header_and_rows(self, tmp_path):
        cfg = config_from_dict(tiny_dict())
        csv_path, manifest = cmd_throughput_profile(
            cfg, ["inner_bound", "genie", "arqllc"], tmp_path / "out")
        rows = read_csv(csv_path)
        assert ",".join(rows[0]) == PROFILE_HEADER
        assert len(rows) == 1 + 3 * 4
        modes = {r[2] for r in rows[1:]}
        assert modes == {"inner_bound", "genie", "arqllc"}
        man = json.loads(manifest.read_text())
        assert man["outputs"] == ["throughput_profile.csv"]
        assert man["config"]["C"] == 3

    def test_single_cell_inner_equals_genie(self, tmp_path):
        cfg = config_from_dict(tiny_dict(C=1))
        csv_path, _ = cmd_throughput_profile(cfg, ["inner_bound", "genie"], tmp_path)
        rows = read_csv(csv_path)[1:]
        inner = sorted(r for r in rows if r[2] == "inner_bound")
        genie = sorted(r for r in rows if r[2] == "genie")
        for a, b in zip(inner, genie):
            assert a[3] == b[3]

    def test_harq_target_column(self, tmp_path):
        cfg = config_from_dict(tiny_dict(slots_measure=4000))
        csv_path, _ = cmd_throughput_profile(cfg, ["genie", "harq@target"], tmp_path)
        rows = read_csv(csv_path)[1:]
        genie = {r[0]: float(r[3]) for r in rows if r[2] == "genie"}
        harq = {r[0]: float(r[3]) for r in rows if r[2] == "harq@target"}
        for u in genie:
            if genie[u] > 0:
                assert harq[u] <= genie[u] + 1e-9
                assert harq[u] >= 0.8 * genie[u]

    def test_cdf_cache_roundtrip(self, tmp_path):
        cfg = config_from_dict(tiny_dict())
        cache = tmp_path / "cdfs.npy"
        p1, _ = cmd_throughput_profile(cfg, ["arqllc"], tmp_path / "a", cdf_cache=cache)
        assert cache.exists()
        p2, _ = cmd_throughput_profile(cfg, ["arqllc"], tmp_path / "b", cdf_cache=cache)
        assert p1.read_bytes() == p2.read_bytes()


class TestRateDelay:
    def test_columns_and_sanity(self, tmp_path):
        cfg = config_from_dict(tiny_dict(slots_measure=6000))
        csv_path, manifest = cmd_rate_delay(cfg, [1, 2], [3.0, 10.0, 30.0], tmp_path)
        rows = read_csv(csv_path)
        assert ",".join(rows[0]) == RATE_DELAY_HEADER
        body = rows[1:]
        assert len(body) == 2 * 3
        for r in body:
            delay_sim = float(r[2])
            assert delay_sim >= 1.0
            frac = float(r[5])
            assert 0 <= frac <= 1 + 1e-9
        # monotone in r_first per user: delay and genie fraction both grow
        for u in ("1", "2"):
            sub = [r for r in body if r[0] == u]
            delays = [float(r[2]) for r in sub]
            fracs = [float(r[5]) for r in sub]
            assert all(b >= a * 0.99 for a, b in zip(delays, delays[1:]))
            assert all(b >= a - 0.02 for a, b in zip(fracs, fracs[1:]))

    def test_renewal_column_close_to_simulated(self, tmp_path):
        cfg = config_from_dict(tiny_dict(C=1, K=2, M=2, slots_measure=30_000))
        csv_path, _ = cmd_rate_delay(cfg, [1], [5.0, 15.0], tmp_path)
        for r in read_csv(csv_path)[1:]:
            sim, renewal = float(r[2]), float(r[3])
            assert renewal == pytest.approx(sim, rel=0.05)

    def test_bad_user_rejected(self, tmp_path):
        cfg = config_from_dict(tiny_dict())
        with pytest.raises(ValueError, match="out of range"):
            cmd_rate_delay(cfg, [99], [5.0], tmp_path)


class TestReplayAndDeterminism:
    def test_replay_byte_identical(self, tmp_path):
        cfg = config_from_dict(tiny_dict())
        out1 = tmp_path / "run"
        csv_path, manifest = cmd_throughput_profile(cfg, ["genie", "arqllc"], out1)
        out2 = tmp_path / "replayed"
        replayed = cmd_replay(manifest, out2)
        assert replayed[0].read_bytes() == csv_path.read_bytes()

    def test_replay_rate_delay(self, tmp_path):
        cfg = config_from_dict(tiny_dict(slots_measure=2000))
        csv_path, manifest = cmd_rate_delay(cfg, [1], [5.0, 20.0], tmp_path / "run")
        replayed = cmd_replay(manifest, tmp_path / "rep")
        assert replayed[0].read_bytes() == csv_path.read_bytes()


class TestMainEntry:
    def test_selftest_passes(self, capsys):
        assert cmd_selftest() == 0
        out = capsys.readouterr().out
        assert "all checks passed" in out

    def test_main_throughput_profile(self, tmp_path, capsys):
        cfgp = write_cfg(tmp_path, tiny_dict())
        code = main(["throughput-profile", "--config", str(cfgp),
                     "--out", str(tmp_path / "o"), "--modes", "genie", "--slots", "200"])
        assert code == 0
        assert (tmp_path / "o" / "throughput_profile.csv").exists()

    def test_main_validation_error_exit_1(self, tmp_path, capsys):
        cfgp = write_cfg(tmp_path, {"M": 0})
        code = main(["throughput-profile", "--config", str(cfgp),
                     "--out", str(tmp_path / "o")])
        assert code == 1
        assert "LayoutParams.M" in capsys.readouterr().err

    def test_main_seed_override(self, tmp_path):
        cfgp = write_cfg(tmp_path, tiny_dict())
        main(["throughput-profile", "--config", str(cfgp), "--out",
              str(tmp_path / "a"), "--modes", "genie", "--seed", "1", "--slots", "200"])
        main(["throughput-profile", "--config", str(cfgp), "--out",
              str(tmp_path / "b"), "--modes", "genie", "--seed", "2", "--slots", "200"])
        a = (tmp_path / "a" / "throughput_profile.csv").read_bytes()
        b = (tmp_path / "b" / "throughput_profile.csv").read_bytes()
        assert a != b

    def test_csv_locale_independent_format(self, tmp_path):
        cfg = config_from_dict(tiny_dict())
        csv_path, _ = cmd_throughput_profile(cfg, ["genie"], tmp_path)
        text = csv_path.read_text()
        assert "," in text and ";" not in text
        assert text.endswith("\n")
        for line in text.strip().splitlines()[1:]:
            float(line.split(",")[3])  # parses with C locale decimal point
