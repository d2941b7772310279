use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bucket-decimate"));
    cmd.env_remove("BUCKET_DECIMATE_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen(path: &Path, points: &str) {
    let out = run(&[
        "gen",
        "--points",
        points,
        "--scene",
        "gaussian-clusters",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_then_filter_writes_a_smaller_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scene.pcd");
    let output = dir.path().join("filtered.pcd");
    gen(&input, "20000");
    assert!(fs::read(&input).unwrap().starts_with(b"VERSION 0.7"));

    let out = run(&[
        "filter",
        "--input",
        input.to_str().unwrap(),
        "--resolution",
        "0.05",
        "--threshold",
        "2",
        "--output",
        output.to_str().unwrap(),
        "--ascii",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("bucket-parallel: 20000 -> "), "{text}");
    let header = fs::read_to_string(&output).unwrap();
    assert!(header.contains("DATA ascii"));
    let points: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("POINTS "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(points > 0 && points < 20000);
}

#[test]
fn serial_and_parallel_filters_agree() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scene.pcd");
    gen(&input, "10000");
    let mut outputs = Vec::new();
    for (imp, threads) in [("bucket-serial", "1"), ("bucket-parallel", "3")] {
        let path = dir.path().join(format!("{imp}.pcd"));
        let out = run(&[
            "filter",
            "--input",
            input.to_str().unwrap(),
            "--impl",
            imp,
            "--threads",
            threads,
            "--threshold",
            "1",
            "--output",
            path.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push(fs::read(path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn bench_writes_the_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = run(&[
        "bench",
        "--points",
        "5000",
        "--reps",
        "3",
        "--warmup",
        "0",
        "--threads",
        "1,2",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "impl,resolution_m,threads,repetitions,mean_ms,stddev_ms,input_size,output_size"
    );
    // bucket-parallel runs each thread count; the other two run once per resolution
    assert_eq!(lines.len(), 1 + 3 * 2 + 3 + 3);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
    assert!(stdout(&out).lines().next().unwrap().contains("mean_ms"));
}

#[test]
fn thread_cap_comes_from_the_environment() {
    let out = bin()
        .env("BUCKET_DECIMATE_THREADS", "2")
        .args(["filter", "--points", "2000", "--threshold", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).contains("threads=2"), "{}", stdout(&out));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pcd");
    let garbage = dir.path().join("garbage.pcd");
    fs::write(&garbage, "VERSION 0.7\nFIELDS x y z\nnot a header\n").unwrap();

    let code = |args: &[&str]| run(args).status.code();
    assert_eq!(
        code(&["filter", "--points", "100", "--scene", "hallway"]),
        Some(2)
    );
    assert_eq!(
        code(&["filter", "--points", "100", "--radius", "50"]),
        Some(2)
    );
    assert_eq!(code(&["bench", "--points", "100", "--reps", "1"]), Some(2));
    assert_eq!(
        code(&["filter", "--input", missing.to_str().unwrap()]),
        Some(3)
    );
    assert_eq!(
        code(&["filter", "--input", garbage.to_str().unwrap()]),
        Some(4)
    );
    assert_ne!(code(&["frobnicate"]), Some(0));
}
