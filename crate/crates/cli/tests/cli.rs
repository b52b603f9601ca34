use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lidl::homotopy::SwitchShape;
use lidl::metrics::HeuristicConfig;
use lidl::presets as lib;
use lidl::problems::by_id;
use lidl::runner::RunConfig;
use lidl::Propagator;
use lidl_cli::config::ExperimentFile;
use lidl_cli::presets::{preset, PRESETS};

fn lidl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidl")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
schema_version = 1
name = "tiny"
problem = "linear-gaussian-2d"
seed = 3
runs = 3

[[method]]
name = "aldi"
propagator = "aldi"
dt = 0.05
steps = 40
record_every = 5
plan = { kind = "fixed", initial_batch = 20 }
diagnostics = { ep_every = 10 }

[[method]]
name = "lidl"
propagator = "aldi"
dt = 0.05
steps = 40
record_every = 5
diagnostics = { ep_every = 10 }

[method.plan]
kind = "fixed"
initial_batch = 10
events = [{ t = 0.5, add = 10, scheme = { kind = "diffusion" } }]
"#;

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap()
}

fn assert_same(a: &RunConfig, b: &RunConfig) {
    assert_eq!(a.problem.id(), b.problem.id());
    assert_eq!(a.propagator, b.propagator);
    assert_eq!(a.plan, b.plan);
    assert_eq!(a.schedule, b.schedule);
    assert_eq!(a.n_iter, b.n_iter);
    assert_eq!(a.record_every, b.record_every);
    assert_eq!(a.diagnostics.ep_every, b.diagnostics.ep_every);
}

fn method(name: &str, m: &str) -> RunConfig {
    preset(name).unwrap().build().unwrap().into_iter().find(|(n, _)| n == m).unwrap().1
}

#[test]
fn presets_mirror_the_library_configurations() {
    for (name, _) in PRESETS {
        let exp = preset(name).unwrap();
        assert_eq!(exp.name, name);
        exp.build().unwrap();
        assert_eq!(ExperimentFile::parse(&exp.to_toml()).unwrap(), exp, "{name} round trip");
    }
    let aldi = |dt| Propagator::aldi(dt).unwrap();
    assert_same(&method("fig-unimodal-basic", "aldi"), &lib::unimodal_plain(aldi(0.05), 400).unwrap());
    assert_same(&method("fig-unimodal-basic", "lidl"), &lib::unimodal_lidl().unwrap());
    assert_same(&method("fig-plateaus", "lidl-plateau"), &lib::plateau_lidl().unwrap());
    assert_same(&method("fig-plateaus", "aldi-50"), &lib::unimodal_plain(aldi(0.05), 50).unwrap());
    assert_same(&method("fig-adaptive", "diff"), &lib::adaptive_lidl(HeuristicConfig::difference()).unwrap());
    assert_same(&method("fig-adaptive", "slope"), &lib::adaptive_lidl(HeuristicConfig::slope()).unwrap());
    for (shape, s) in [("linear", SwitchShape::Linear), ("convex", SwitchShape::Convex), ("concave", SwitchShape::Concave)] {
        let name = format!("fig-homotopy-{shape}");
        assert_same(&method(&name, &format!("homotopy-{shape}")), &lib::homotopy_plain(Some(s)).unwrap());
        assert_same(&method(&name, "aldi"), &lib::homotopy_plain(None).unwrap());
    }
    assert_same(&method("fig-homotopy-enrich-linear", "enrich-linear"), &lib::homotopy_enrich_linear().unwrap());
    assert_same(&method("fig-homotopy-enrich-concave", "enrich-concave"), &lib::homotopy_enrich_concave().unwrap());
    let darcy = by_id("darcy-d20").unwrap();
    assert_same(&method("fig-darcy", "aldi-lidl"), &lib::darcy_lidl(darcy.clone(), aldi(0.01), 30).unwrap());
    assert_same(&method("fig-darcy", "eks"), &lib::darcy_plain(darcy, Propagator::eks(0.01).unwrap(), 120));
}

#[test]
fn seeded_runs_are_byte_identical_and_manifests_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "tiny.toml", TINY);
    for out in ["a", "b"] {
        let o = lidl(&["run", "tiny.toml", "--seed", "7", "--out", out, "--workers", "2"], d);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for rel in ["aldi/aggregate.csv", "lidl/aggregate.csv", "lidl/runs/run_002.csv", "lidl/events.csv"] {
        assert_eq!(read(&d.join("a"), rel), read(&d.join("b"), rel), "{rel}");
    }
    let agg = read(&d.join("a"), "lidl/aggregate.csv");
    assert_eq!(agg.lines().next().unwrap(), "t,step,fc,free_fc,batch_size,s,mean_ep,std_ep,pp_mean,pp_std,double_sinkhorn");
    // every float round-trips through its text form
    for line in agg.lines().skip(1) {
        for field in line.split(',') {
            let v: f64 = field.parse().unwrap();
            if v.is_finite() {
                assert_eq!(format!("{v:.16e}").parse::<f64>().unwrap().to_bits(), v.to_bits());
            }
        }
    }
    let events = read(&d.join("a"), "lidl/events.csv");
    assert_eq!(events.lines().count(), 4);
    // a manifest re-runs to the same outputs
    fs::rename(d.join("a"), d.join("first")).unwrap();
    let o = lidl(&["run", "first/manifest.toml"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&d.join("a"), "manifest.toml"), read(&d.join("first"), "manifest.toml"));
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "tiny.toml", TINY);
    assert!(lidl(&["run", "tiny.toml", "--seed", "1", "--out", "s1"], d).status.success());
    assert!(lidl(&["run", "tiny.toml", "--seed", "2", "--out", "s2"], d).status.success());
    assert_ne!(read(&d.join("s1"), "aldi/aggregate.csv"), read(&d.join("s2"), "aldi/aggregate.csv"));
    let o = lidl(&["compare", "s1", "s2", "--out", "cmp"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let by_fc = read(&d.join("cmp"), "ep_by_fc.csv");
    assert_eq!(by_fc.lines().next().unwrap(), "fc,s1/aldi:mean_ep,s1/lidl:mean_ep,s2/aldi:mean_ep,s2/lidl:mean_ep");
    // a method has the same forward-call grid under both seeds
    for line in by_fc.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        assert_eq!(c[1].is_empty(), c[3].is_empty(), "{line}");
        assert_eq!(c[2].is_empty(), c[4].is_empty(), "{line}");
    }
    assert!(d.join("cmp/double_sinkhorn_by_t.csv").exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "unknown.toml", &TINY.replace("runs = 3", "runs = 3\nrunz = 4"));
    let o = lidl(&["run", "unknown.toml"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 7") && stderr(&o).contains("runz"), "{}", stderr(&o));

    write(d, "noversion.toml", &TINY.replace("schema_version = 1\n", ""));
    assert_eq!(lidl(&["run", "noversion.toml"], d).status.code(), Some(2));
    write(d, "version.toml", &TINY.replace("schema_version = 1", "schema_version = 9"));
    assert_eq!(lidl(&["run", "version.toml"], d).status.code(), Some(2));
    write(d, "late.toml", &TINY.replace("t = 0.5", "t = 5.0"));
    let o = lidl(&["run", "late.toml"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("method lidl"), "{}", stderr(&o));
    write(d, "scheme.toml", &TINY.replace("kind = \"diffusion\"", "kind = \"teleport\""));
    assert_eq!(lidl(&["run", "scheme.toml"], d).status.code(), Some(2));

    assert_eq!(lidl(&["run", "missing.toml"], d).status.code(), Some(2));
    assert_eq!(lidl(&["run", "--preset", "fig-nothing"], d).status.code(), Some(2));
    assert_eq!(lidl(&["run"], d).status.code(), Some(2));
    assert_eq!(lidl(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(lidl(&["run", "unknown.toml", "--workers", "0"], d).status.code(), Some(2));
}

#[test]
fn compare_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "tiny.toml", TINY);
    write(d, "other.toml", &TINY.replace("linear-gaussian-2d", "mixture-k1"));
    assert!(lidl(&["run", "tiny.toml", "--out", "x"], d).status.success());
    assert!(lidl(&["run", "other.toml", "--out", "y"], d).status.success());
    assert_eq!(lidl(&["compare", "x"], d).status.code(), Some(2));
    let o = lidl(&["compare", "x", "y"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mixture-k1"));
    assert_eq!(lidl(&["compare", "x", "nowhere"], d).status.code(), Some(2));
}

#[test]
fn diverging_runs_exit_1_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // overdamped steps with dt = 5 multiply the distance to the mean by -4
    let text = TINY.replace("propagator = \"aldi\"\ndt = 0.05\nsteps = 40", "propagator = \"overdamped\"\ndt = 5.0\nsteps = 600");
    write(d, "cliff.toml", &text.replace("t = 0.5", "t = 50.0"));
    let o = lidl(&["run", "cliff.toml", "--out", "c"], d);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let failures = read(&d.join("c"), "aldi/failures.csv");
    assert_eq!(failures.lines().count(), 4);
    assert!(failures.contains("diverged"), "{failures}");
    assert!(read(&d.join("c"), "aldi/runs/run_000.csv").lines().count() > 2);
    assert!(d.join("c/manifest.toml").exists());
}

#[test]
fn reference_writes_posterior_draws() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = lidl(&["reference", "linear-gaussian-2d", "--n", "50", "--out", "ref.csv"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = read(d, "ref.csv");
    assert_eq!(text.lines().next().unwrap(), "y0,y1");
    assert_eq!(text.lines().count(), 51);
    assert_eq!(lidl(&["reference", "nope", "--n", "5", "--out", "r.csv"], d).status.code(), Some(2));
    assert_eq!(lidl(&["reference", "mixture-k1", "--n", "0", "--out", "r.csv"], d).status.code(), Some(2));
}

#[test]
fn presets_command_lists_and_prints() {
    let dir = tempfile::tempdir().unwrap();
    let o = lidl(&["presets"], dir.path());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), PRESETS.len());
    let o = lidl(&["presets", "fig-darcy"], dir.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains("darcy-d20"));
}
