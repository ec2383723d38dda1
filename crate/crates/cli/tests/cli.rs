use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use skyplan_core::channel::{los_rsrp, Position3D};
use skyplan_core::coverage_map::{load_map, synthesize, SynthesisConfig};
use tempfile::TempDir;

fn skyplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skyplan")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = skyplan(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = "seed = 4\n[map]\nwidth_m = 120.0\nheight_m = 80.0\n[channel]\nshadowing_sigma_db = 8.0\n";

fn small_map(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, "small.toml", SMALL);
    let map = dir.join("small.csv");
    ok(&["synth-map", "--config", s(&cfg), "--out", s(&map)]);
    (cfg, map)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sha(p: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(p).unwrap()).to_vec()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(p).unwrap().lines().map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn default_synth_map_has_campaign_dimensions() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("campaign.csv");
    let stdout = ok(&["synth-map", "--out", s(&out)]);
    assert!(stdout.contains("635 x 302 x 7"), "{stdout}");
    let map = load_map(&out).unwrap();
    assert_eq!((map.nx, map.ny, map.beam_count), (635, 302, 7));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("beam ")).count(), 7);
}

#[test]
fn same_seed_same_file_hash() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["synth-map", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["synth-map", "--config", s(&cfg), "--threads", "1", "--out", s(&b)]);
    assert_eq!(sha(&a), sha(&b));
    let other = write_config(dir.path(), "d.toml", &SMALL.replace("seed = 4", "seed = 5"));
    let c = dir.path().join("c.csv");
    ok(&["synth-map", "--config", s(&other), "--out", s(&c)]);
    assert_ne!(sha(&a), sha(&c));
}

#[test]
fn noiseless_map_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[map]\nwidth_m = 60.0\nheight_m = 40.0\n[channel]\nshadowing_sigma_db = 0.0\n");
    let out = dir.path().join("m.csv");
    ok(&["synth-map", "--config", s(&cfg), "--out", s(&out)]);
    let map = load_map(&out).unwrap();
    let synth = SynthesisConfig { channel: shadowing_free(), ..SynthesisConfig::scaled_campaign(60.0, 40.0) };
    for (b, pattern) in synth.beams.iter().enumerate() {
        for iy in 0..map.ny {
            for ix in 0..map.nx {
                let (x, y) = map.node_position(ix, iy);
                let p = Position3D { x, y, z: map.altitude };
                let want = los_rsrp(&synth.channel, pattern, &synth.bs_position, &p).unwrap();
                assert!((map.node(b, ix, iy) - want).abs() <= 5e-5 + 1e-9);
            }
        }
    }
}

fn shadowing_free() -> skyplan_core::channel::ChannelModel {
    skyplan_core::channel::ChannelModel { shadowing_sigma_db: 0.0, ..Default::default() }
}

#[test]
fn brute_and_search_agree_for_one_uav() {
    let dir = TempDir::new().unwrap();
    let (cfg, map) = small_map(dir.path());
    let rate = |method: &str| {
        let out = dir.path().join(method);
        ok(&["place", "--config", s(&cfg), "--map", s(&map), "--method", method, "--uavs", "1", "--out", s(&out)]);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
        assert_eq!(v["deterministic"], true);
        v["runs"][0]["solution"]["sum_rate"].as_f64().unwrap()
    };
    assert_eq!(rate("brute"), rate("search"));
    assert!(!dir.path().join("brute/sweep.csv").exists());
}

#[test]
fn sweep_has_search_at_least_sca() {
    let dir = TempDir::new().unwrap();
    let (cfg, map) = small_map(dir.path());
    let out = dir.path().join("sweep");
    ok(&["place", "--config", s(&cfg), "--map", s(&map), "--method", "sca,search", "--uavs", "1..4", "--out", s(&out)]);
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows[0].join(","), "uavs,method,map_sum_rate_bps,reported_sum_rate_bps,iterations");
    assert_eq!(rows.len(), 9);
    for pair in rows[1..].chunks(2) {
        assert_eq!(pair[0][1], "SCA_LOS");
        assert_eq!(pair[1][1], "MAP_SEARCH");
        assert_eq!(pair[0][0], pair[1][0]);
        let sca: f64 = pair[0][2].parse().unwrap();
        let search: f64 = pair[1][2].parse().unwrap();
        assert!(search >= sca, "K={}: {search} < {sca}", pair[0][0]);
    }
}

#[test]
fn missing_map_is_usage_error_naming_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = skyplan(&["place", "--map", s(&missing), "--method", "search", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn llm_needs_gateway_config() {
    let dir = TempDir::new().unwrap();
    let (cfg, map) = small_map(dir.path());
    let out = skyplan(&["place", "--config", s(&cfg), "--map", s(&map), "--method", "llm", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[llm]"));
}

#[test]
fn mock_llm_placement_is_scored_on_the_map() {
    let dir = TempDir::new().unwrap();
    let (_, map) = small_map(dir.path());
    let text = format!("{SMALL}[llm]\nmock_script = [\"```json\\n[[30.0, 40.0], [90.0, 40.0]]\\n```\"]\ndigest_stride_m = 20.0\n");
    let cfg = write_config(dir.path(), "llm.toml", &text);
    let out = dir.path().join("llm");
    ok(&["place", "--config", s(&cfg), "--map", s(&map), "--method", "llm", "--uavs", "2", "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    let sol = &v["runs"][0]["solution"];
    assert_eq!(sol["method"], "LLM");
    assert_eq!(sol["positions"], serde_json::json!([[30.0, 40.0], [90.0, 40.0]]));
    assert_eq!(v["deterministic"], true);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[channel]\nsigma_db = 3.0\n");
    let out = skyplan(&["synth-map", "--config", s(&cfg), "--out", s(&dir.path().join("m.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma_db"));
}

fn comparison(dir: &Path, config: &str, mode: &str) -> Vec<Vec<String>> {
    let cfg = write_config(dir, &format!("{mode}.toml"), config);
    let out = dir.join(format!("co-{mode}"));
    ok(&["coinfer", "--config", s(&cfg), "--mode", mode, "--out", s(&out)]);
    assert!(out.join("comparison.json").exists());
    let rows = csv_rows(&out.join("comparison.csv"));
    assert_eq!(rows[0].join(","), "paradigm,feasible,split,rho,p_w,f_hz,quality,delay_s,energy_j,objective,binding");
    rows[1..].to_vec()
}

fn row<'a>(rows: &'a [Vec<String>], paradigm: &str) -> &'a [String] {
    rows.iter().find(|r| r[0] == paradigm).unwrap()
}

#[test]
fn loose_budget_reaches_full_quality() {
    let dir = TempDir::new().unwrap();
    let rows = comparison(dir.path(), "[coinference]\nt_max_s = 1000.0\ne_max_j = 1000.0\n", "quality");
    let co = row(&rows, "CO_INFERENCE");
    assert_eq!(co[1], "true");
    assert_eq!(co[6].parse::<f64>().unwrap(), 0.4);
}

#[test]
fn dead_link_makes_co_inference_match_device() {
    let dir = TempDir::new().unwrap();
    let rows = comparison(dir.path(), "[coinference]\nchannel_gain = 0.0\nt_max_s = 10.0\n", "energy");
    assert_eq!(row(&rows, "ON_CLOUD")[1], "false");
    assert_eq!(row(&rows, "ON_IAA")[1..], row(&rows, "CO_INFERENCE")[1..]);
}

#[test]
fn co_inference_is_best_in_every_mode() {
    let dir = TempDir::new().unwrap();
    for mode in ["quality", "delay", "energy"] {
        let rows = comparison(dir.path(), "", mode);
        let co: f64 = row(&rows, "CO_INFERENCE")[9].parse().unwrap();
        for p in ["ON_CLOUD", "ON_IAA"] {
            let r = row(&rows, p);
            if r[1] == "true" {
                let v: f64 = r[9].parse().unwrap();
                assert!(if mode == "quality" { co >= v } else { co <= v }, "{mode}: {p} {v} beats {co}");
            }
        }
    }
}

#[test]
fn infeasible_budget_is_reported_not_failed() {
    let dir = TempDir::new().unwrap();
    let rows = comparison(dir.path(), "[coinference]\nt_max_s = 0.001\n", "energy");
    assert!(rows.iter().all(|r| r[1] == "false" && !r[10].is_empty()));
}

const SCENARIO: &str = "seed = 2\n[map]\nwidth_m = 120.0\nheight_m = 80.0\n[pipeline]\nuavs = 2\n";

#[test]
fn pipeline_without_adaptation_reports_one_round() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "p.toml", &format!("{SCENARIO}max_rounds = 0\n"));
    let out = dir.path().join("run");
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["rounds"].as_array().unwrap().len(), 1);
    assert_eq!(v["termination"], "adaptation_disabled");
    let rows = csv_rows(&out.join("rounds.csv"));
    assert_eq!(rows[0].join(","), "round,uav_id,x,y,beam,rate");
    assert_eq!(rows.len(), 3);
}

#[test]
fn matched_prior_converges_immediately() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "p.toml", &format!("{SCENARIO}[channel]\nshadowing_sigma_db = 0.0\n"));
    let out = dir.path().join("run");
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["termination"], "converged_round_1");
}

#[test]
fn pipeline_from_map_file_matches_synthesis() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "p.toml", SCENARIO);
    let map = dir.path().join("m.csv");
    ok(&["synth-map", "--config", s(&cfg), "--out", s(&map)]);
    let with_path = SCENARIO.replace("[map]\n", &format!("[map]\npath = {:?}\n", s(&map)));
    let cfg2 = write_config(dir.path(), "q.toml", &with_path);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["pipeline", "--config", s(&cfg2), "--out", s(&b)]);
    let synth = synthesize(&SynthesisConfig { seed: 2, ..SynthesisConfig::scaled_campaign(120.0, 80.0) }).unwrap();
    // the file stores 4 decimals, so only the synthesized run sees the exact map
    assert_eq!(load_map(&map).unwrap().nx, synth.nx);
    let ra: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let rb: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("report.json")).unwrap()).unwrap();
    let (ia, ib) = (ra["initial_sum_rate"].as_f64().unwrap(), rb["initial_sum_rate"].as_f64().unwrap());
    assert!((ia - ib).abs() <= 1e-3 * ia);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "p.toml", &format!("{SCENARIO}[channel]\nshadowing_sigma_db = 8.0\n[placement]\nbrute_stride = 2\n"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["pipeline", "--config", s(&cfg), "--threads", "1", "--out", s(&a)]);
    ok(&["pipeline", "--config", s(&cfg), "--threads", "4", "--out", s(&b)]);
    for f in ["report.json", "rounds.csv"] {
        assert_eq!(sha(&a.join(f)), sha(&b.join(f)), "{f}");
    }
    let map = dir.path().join("m.csv");
    ok(&["synth-map", "--config", s(&cfg), "--out", s(&map)]);
    let (c, d) = (dir.path().join("c"), dir.path().join("d"));
    for (threads, out) in [("1", &c), ("4", &d)] {
        ok(&["place", "--config", s(&cfg), "--threads", threads, "--map", s(&map), "--method", "sca,search,brute", "--uavs", "1..2", "--out", s(out)]);
    }
    assert_eq!(sha(&c.join("solution.json")), sha(&d.join("solution.json")));
}

#[test]
fn help_documents_csv_schemas() {
    let place = ok(&["place", "--help"]);
    assert!(place.contains("uavs,method,map_sum_rate_bps,reported_sum_rate_bps,iterations"));
    assert!(place.contains("non-deterministic"));
    assert!(ok(&["coinfer", "--help"]).contains("paradigm,feasible,split"));
    assert!(ok(&["pipeline", "--help"]).contains("round,uav_id,x,y,beam,rate"));
    assert!(ok(&["synth-map", "--help"]).contains("beam_id,ix,iy,rsrp_dbm"));
}

#[test]
fn bad_usage_exits_two() {
    assert_eq!(skyplan(&["place", "--method", "teleport"]).status.code(), Some(2));
    assert_eq!(skyplan(&["coinfer", "--out", "x", "--threads", "0"]).status.code(), Some(2));
}
