use std::process::Command;

fn horn(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_horn")).args(args).output().expect("spawn horn");
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).expect("utf8 stdout"))
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).expect("valid JSON")
}

#[test]
fn classify_gb_torus2() {
    let (code, out) = horn(&["classify", "--op", "gb", "--n", "torus2", "--alpha", "1.5"]);
    assert_eq!(code, 0);
    assert_eq!(json(&out)["quotient"]["dim"], 2);
}

#[test]
fn index_dirac_torus3_extremes() {
    for (ext, want) in [("max", 1), ("min", -1)] {
        let (code, out) = horn(&["index", "--op", "dirac", "--n", "torus3", "--ext", ext, "--ahat", "0"]);
        assert_eq!(code, 0);
        assert_eq!(json(&out)["report"]["index"], want);
    }
}

#[test]
fn config_error_exit_code() {
    assert_eq!(horn(&["classify", "--n", "klein"]).0, 2);
    assert_eq!(horn(&["index", "--op", "dirac", "--n", "torus2"]).0, 2);
    assert_eq!(horn(&["classify", "--bogus"]).0, 2);
}

#[test]
fn assertion_exit_code() {
    let (code, out) = horn(&["index", "--op", "gb", "--n", "circle", "--euler", "0.25"]);
    assert_eq!(code, 1);
    assert!(json(&out)["term_sum"].is_number());
}

#[test]
fn config_file_and_csv_output() {
    let dir = std::env::temp_dir().join(format!("horn-it-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("surface.cfg");
    let out = dir.join("skip.csv");
    std::fs::write(&cfg, "# skip table\nskip = true\nchi = 2\nk = 1\nbeta = 1,1.5,2\nformat = json\n").unwrap();
    let (code, _) = horn(&["surface", "--config", cfg.to_str().unwrap(), "--format", "csv", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, "beta,euler_integral,gb_index\n1,2,2\n1.5,1,2\n2,1,2\n");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn surface_output_is_deterministic() {
    let args = ["surface", "--h", "pow:2", "--delta", "0.1", "--eps", "0.5"];
    let (a, b) = (horn(&args), horn(&args));
    assert_eq!(a, b);
    assert_eq!(json(&a.1)["breakdown"]["collar"], -0.8);
}
