use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use hgt_core::synth::{planted, toy_academic, SynthConfig};
use hgt_core::train::RunConfig;
use hgt_ffi::*;

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(hgt_last_error()) }.to_string_lossy().into_owned()
}

fn open(dir: &Path) -> *mut HgtGraph {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { hgt_graph_open(c(dir).as_ptr(), false, &mut g) }, HgtStatus::Ok, "{}", last_error());
    g
}

#[test]
fn graph_handle_reports_toy_counts() {
    let dir = tempfile::tempdir().unwrap();
    toy_academic(0).write(dir.path()).unwrap();
    let g = open(dir.path());
    unsafe {
        let n = hgt_graph_num_node_types(g);
        assert_eq!(n, 5);
        let mut counts = Vec::new();
        for t in 0..n {
            let name = CStr::from_ptr(hgt_graph_node_type_name(g, t)).to_str().unwrap().to_string();
            counts.push((name, hgt_graph_num_nodes(g, t)));
        }
        assert!(counts.contains(&("paper".to_string(), 40)), "{counts:?}");
        assert!(counts.contains(&("venue".to_string(), 5)), "{counts:?}");
        assert!(hgt_graph_node_type_name(g, n).is_null());
        assert_eq!(hgt_graph_num_nodes(g, n), 0);
        assert!(hgt_graph_num_edges(g) > 0);
        assert_eq!(hgt_graph_num_edge_types(g), 10);

        let mut full = 0u64;
        let mut shared = 0u64;
        assert_eq!(hgt_param_count(g, 32, 4, 2, true, true, &mut full), HgtStatus::Ok);
        assert_eq!(hgt_param_count(g, 32, 4, 2, false, true, &mut shared), HgtStatus::Ok);
        assert!(shared < full);
        assert_eq!(hgt_param_count(g, 30, 4, 2, true, true, &mut full), HgtStatus::ConfigError);
        hgt_graph_free(g);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = ptr::null_mut();
    unsafe {
        let missing = c(&dir.path().join("nope"));
        assert_eq!(hgt_graph_open(missing.as_ptr(), false, &mut g), HgtStatus::ConfigError);
        assert!(last_error().contains("nope"));
        assert!(g.is_null());
        assert_eq!(hgt_graph_open(ptr::null(), false, &mut g), HgtStatus::InvalidArgument);
        assert_eq!(hgt_graph_open(missing.as_ptr(), false, ptr::null_mut()), HgtStatus::InvalidArgument);

        toy_academic(0).write(&dir.path().join("toy")).unwrap();
        let toy = dir.path().join("toy");
        std::fs::write(
            toy.join("edges.tsv"),
            "edge_type\tsrc_type\tsrc_id\ttgt_type\ttgt_id\ttimestamp\nwrites\tauthor\t999\tpaper\t0\t2000\n",
        )
        .unwrap();
        assert_eq!(hgt_graph_open(c(&toy).as_ptr(), false, &mut g), HgtStatus::DataError);
        assert!(last_error().contains("author:999"), "{}", last_error());

        // Null handles are tolerated by the accessors.
        assert_eq!(hgt_graph_num_node_types(ptr::null()), 0);
        hgt_graph_free(ptr::null_mut());
        hgt_subgraph_free(ptr::null_mut());
        hgt_string_free(ptr::null_mut());
    }
}

#[test]
fn sampling_is_deterministic_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    toy_academic(0).write(dir.path()).unwrap();
    let g = open(dir.path());
    let seeds = [HgtSeed { node_type: 0, id: 0, time: 0, has_time: false }, HgtSeed { node_type: 0, id: 1, time: 0, has_time: false }];
    let sample = || unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(hgt_sample(g, seeds.as_ptr(), seeds.len(), 3, 2, 9, &mut s), HgtStatus::Ok, "{}", last_error());
        let json = CStr::from_ptr(hgt_subgraph_json(s)).to_str().unwrap().to_string();
        let counts = (hgt_subgraph_num_nodes(s), hgt_subgraph_num_edges(s));
        hgt_subgraph_free(s);
        (json, counts)
    };
    let (a, (nodes, edges)) = sample();
    let (b, _) = sample();
    assert_eq!(a, b);
    assert!(nodes > 2 && edges > 0);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), nodes);

    unsafe {
        // Plain types need a time.
        let venue = (0..5).find(|&t| CStr::from_ptr(hgt_graph_node_type_name(g, t)).to_str() == Ok("venue")).unwrap();
        let bad = HgtSeed { node_type: venue, id: 0, time: 0, has_time: false };
        let mut s = ptr::null_mut();
        assert_eq!(hgt_sample(g, &bad, 1, 3, 2, 9, &mut s), HgtStatus::DataError);
        let oob = HgtSeed { node_type: 99, id: 0, time: 0, has_time: false };
        assert_eq!(hgt_sample(g, &oob, 1, 3, 2, 9, &mut s), HgtStatus::ConfigError);
        hgt_graph_free(g);
    }
}

#[test]
fn train_then_eval_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let gdir = dir.path().join("g");
    planted(&SynthConfig { seed: 1, papers: 160, authors: 40, feature_dim: 8, ..SynthConfig::default() })
        .unwrap()
        .write(&gdir)
        .unwrap();
    let mut cfg = RunConfig::default();
    cfg.hgt.hidden = 16;
    cfg.hgt.heads = 2;
    cfg.sampler.n = 8;
    cfg.schedule.epochs = 2;
    cfg.task.batch_size = 32;
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let ck = dir.path().join("ck");
    unsafe {
        let mut summary = ptr::null_mut();
        let st = hgt_train(c(&gdir).as_ptr(), c(&cfg_path).as_ptr(), c(&ck).as_ptr(), &mut summary);
        assert_eq!(st, HgtStatus::Ok, "{}", last_error());
        let text = CStr::from_ptr(summary).to_str().unwrap().to_string();
        hgt_string_free(summary);
        let s: serde_json::Value = serde_json::from_str(&text).unwrap();

        let mut m = HgtMetrics::default();
        assert_eq!(hgt_eval(c(&ck).as_ptr(), c(&gdir).as_ptr(), HgtSplit::Test, &mut m), HgtStatus::Ok, "{}", last_error());
        assert_eq!(m.n_queries as u64, s["test"]["n_queries"].as_u64().unwrap());
        assert_eq!(m.mrr, s["test"]["mrr"].as_f64().unwrap());
        assert!((0.0..=1.0).contains(&m.accuracy));
        let mut v = HgtMetrics::default();
        assert_eq!(hgt_eval(c(&ck).as_ptr(), c(&gdir).as_ptr(), HgtSplit::Validation, &mut v), HgtStatus::Ok);
        assert!(v.n_queries > 0);

        let bad_cfg = dir.path().join("bad.json");
        std::fs::write(&bad_cfg, "{\"no_such_knob\": 1}").unwrap();
        let st = hgt_train(c(&gdir).as_ptr(), c(&bad_cfg).as_ptr(), c(&dir.path().join("o")).as_ptr(), ptr::null_mut());
        assert_eq!(st, HgtStatus::ConfigError);
    }
}

/// Compiles a C program against the generated header and the shared library.
#[test]
fn header_compiles_and_links_from_c() {
    let Ok(exe) = std::env::current_exe() else { return };
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join(format!("{}hgt_ffi{}", std::env::consts::DLL_PREFIX, std::env::consts::DLL_SUFFIX));
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or shared library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    toy_academic(0).write(&dir.path().join("toy")).unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "hgt.h"
int main(int argc, char **argv) {
    HgtGraph *g = NULL;
    if (hgt_graph_open(argv[1], false, &g) != HGT_STATUS_OK) { fprintf(stderr, "%s\n", hgt_last_error()); return 1; }
    HgtSeed seed = { 0, 0, 0, false };
    HgtSubgraph *s = NULL;
    if (hgt_sample(g, &seed, 1, 3, 2, 1, &s) != HGT_STATUS_OK) return 2;
    printf("%zu %zu %zu\n", hgt_graph_num_node_types(g), hgt_subgraph_num_nodes(s), hgt_graph_num_nodes(g, 0));
    hgt_subgraph_free(s);
    hgt_graph_free(g);
    return hgt_graph_open("/nonexistent", false, &g) == HGT_STATUS_CONFIG_ERROR ? 0 : 3;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(profile_dir)
        .arg(format!("-Wl,-rpath,{}", profile_dir.display()))
        .args(["-lhgt_ffi", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).arg(dir.path().join("toy")).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = String::from_utf8(run.stdout).unwrap();
    let nums: Vec<usize> = text.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(nums[0], 5);
    assert!(nums[1] > 1);
    assert_eq!(nums[2], 40);
}
