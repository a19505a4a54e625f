use std::path::Path;
use std::process::{Command, Output};

fn atomchip(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atomchip"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SUBCOMMANDS: &[(&[&str], &[&str])] = &[
    (&["scene", "validate"], &["--scene", "--out"]),
    (&["scene", "list"], &[]),
    (&["field", "sample"], &["--scene", "--phase", "--x-um", "--y-um", "--z-um", "--out", "--plot"]),
    (&["trap", "analyze"], &["--scene", "--phase", "--out", "--plot"]),
    (&["trap", "scan-phase"], &["--scene", "--from-deg", "--to-deg", "--step-deg", "--out", "--plot"]),
    (
        &["transport", "simulate"],
        &["--scene", "--vmax", "--n-atoms", "--seed", "--t0-uk", "--distance-um", "--settle-periods", "--average-periods", "--trajectory", "--out", "--plot"],
    ),
    (&["transport", "sweep"], &["--scene", "--vmax", "--seeds", "--n-atoms", "--seed", "--out", "--plot"]),
    (&["merge", "map"], &["--scene", "--step-deg", "--out", "--plot"]),
    (
        &["merge", "simulate"],
        &["--scene", "--populate", "--n-atoms", "--seed", "--t0-uk", "--cycle-s", "--record-step-deg", "--hold-periods", "--out", "--plot"],
    ),
    (&["calibrate", "period"], &["--scene", "--target-G", "--bracket-um", "--tol-um", "--out", "--plot"]),
    (&["waveform", "export"], &["--scene", "--samples", "--out", "--plot"]),
    (&["plot"], &["--input", "--x", "--y", "--heatmap", "--title", "--out"]),
];

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    for (path, flags) in SUBCOMMANDS {
        let mut args = path.to_vec();
        args.push("--help");
        let o = atomchip(&args, dir.path());
        assert_eq!(code(&o), 0, "{path:?}");
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in flags.iter().chain(&["--threads", "--help"]) {
            assert!(text.contains(flag), "{path:?} help lacks {flag}:\n{text}");
        }
    }
    assert_eq!(code(&atomchip(&["--help"], dir.path())), 0);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&atomchip(&["trap", "analyze", "--scene", "guide_example", "--bogus"], dir.path())), 2);
    assert_eq!(code(&atomchip(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&atomchip(&["merge", "simulate", "--scene", "fig5_merge", "--populate", "neither"], dir.path())), 2);
    assert_eq!(code(&atomchip(&["transport", "sweep", "--scene", "fig2_conveyor", "--vmax", "1,fast"], dir.path())), 2);
}

#[test]
fn scene_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "").unwrap();
    let o = atomchip(&["scene", "validate", "--scene", "empty.toml"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("syntax error"));

    let o = atomchip(&["scene", "validate", "--scene", "guide_example", "--out", "g.toml"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("g.toml")).unwrap();
    let negative = text.replace("[layout]\n", "[layout]\nn_filaments = -4\n");
    std::fs::write(dir.path().join("neg.toml"), negative).unwrap();
    let o = atomchip(&["scene", "validate", "--scene", "neg.toml"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("constraint violation [layout.n_filaments >= 1]"), "{}", stderr(&o));

    let bad_unit = text.replace("x_G", "x_mG");
    std::fs::write(dir.path().join("unit.toml"), bad_unit).unwrap();
    let o = atomchip(&["scene", "validate", "--scene", "unit.toml"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("unit error in `x_mG`"), "{}", stderr(&o));

    // the filled scene validates again unchanged
    let o = atomchip(&["scene", "validate", "--scene", "g.toml"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout), text);
}

#[test]
fn physics_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    // the plain conveyor has H2 switched off
    let o = atomchip(&["merge", "map", "--scene", "fig2_conveyor", "--step-deg", "90"], dir.path());
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn guide_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = atomchip(&["trap", "analyze", "--scene", "guide_example", "--phase", "0", "-o", "g.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# manifest: g.csv.manifest.json"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()].parse::<f64>().unwrap();
    assert!((col("height_um") - 42.0).abs() <= 6.0);
    assert!((20e3..=38e3).contains(&col("fy_Hz")) && (20e3..=38e3).contains(&col("fz_Hz")));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Lamb-Dicke"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scene_name"], "guide_example");
    assert!(manifest["scene_hash"].as_str().unwrap().starts_with("sha256:"));
    assert!(manifest["scene"].as_str().unwrap().contains("y_G = 80.0"));
    assert_eq!(manifest["parameters"]["phase"], 0.0);
}

fn run_twice(args: &[&str], file: &str, threads: [&str; 2]) -> (Vec<u8>, Vec<u8>) {
    let outs: Vec<Vec<u8>> = threads
        .iter()
        .map(|t| {
            let dir = tempfile::tempdir().unwrap();
            let mut a = args.to_vec();
            a.extend(["--threads", t, "-o", file]);
            let o = atomchip(&a, dir.path());
            assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
            std::fs::read(dir.path().join(file)).unwrap()
        })
        .collect();
    (outs[0].clone(), outs[1].clone())
}

#[test]
fn outputs_are_byte_identical() {
    let (a, b) = run_twice(
        &["field", "sample", "--scene", "fig2_conveyor", "--phase", "30", "--x-um", "-200:200:9", "--z-um", "-260:-180:5"],
        "f.csv",
        ["1", "3"],
    );
    assert_eq!(a, b);
    assert!(a.ends_with(b"\n") && !a.contains(&b'\r'));

    let (a, b) = run_twice(&["waveform", "export", "--scene", "fig5_merge", "--samples", "37"], "w.csv", ["1", "1"]);
    assert_eq!(a, b);

    let (a, b) = run_twice(
        &[
            "transport", "simulate", "--scene", "fig2_conveyor", "--vmax", "8cm_s", "--n-atoms", "64", "--seed", "7",
            "--settle-periods", "0.5", "--average-periods", "0.5",
        ],
        "t.csv",
        ["1", "2"],
    );
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("v_max_cm_s,T_initial_uK,T_final_uK,delta_T_uK,survival"));
}

#[test]
fn plots_name_their_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = atomchip(
        &["field", "sample", "--scene", "guide_example", "--y-um", "-60:60:13", "--z-um", "-90:-20:8", "-o", "f.csv", "--plot", "f.svg"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = std::fs::read_to_string(dir.path().join("f.svg")).unwrap();
    assert!(svg.contains("<!-- manifest: f.csv.manifest.json -->"));
    assert!(svg.trim_end().ends_with("</svg>"));

    let o = atomchip(&["plot", "--input", "f.csv", "--x", "z_um", "--y", "Bmag_G,U_uK", "-o", "p.svg"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = atomchip(&["plot", "--input", "f.csv", "--x", "y_um", "--y", "z_um", "--heatmap", "Bmag_G", "-o", "h.svg"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = atomchip(&["plot", "--input", "f.csv", "--x", "nope", "--y", "z_um", "-o", "x.svg"], dir.path());
    assert_eq!(code(&o), 2);
}
