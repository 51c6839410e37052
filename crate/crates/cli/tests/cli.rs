use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lcgram(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcgram"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stats_map(out: &Output) -> Vec<(String, String)> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('\t').expect("key<TAB>value");
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn get<'a>(m: &'a [(String, String)], key: &str) -> &'a str {
    &m.iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("missing {key}"))
        .1
}

const SAMPLE: &[u8] = b"GATTACA\nGATTACAGATTACA\n\nTTTTTTTTTTTT\nGATTACA\n\n";

fn round_trip(input: &[u8], extra: &[&str]) {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("in.txt");
    let gram = dir.path().join("in.lcg");
    let back = dir.path().join("out.txt");
    fs::write(&src, input).unwrap();
    let mut args = vec!["compress", p(&src), "-o", p(&gram)];
    args.extend_from_slice(extra);
    let out = lcgram(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = lcgram(&["decompress", p(&gram), "-o", p(&back)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&back).unwrap(), input, "flags {extra:?}");
    let out = lcgram(&["verify", p(&gram), "--original", p(&src)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn round_trip_line_mode() {
    for flags in [
        &[][..],
        &["--no-rl"],
        &["--no-simp"],
        &["--no-rl", "--no-simp"],
        &["--no-rl", "--no-simp", "--keep-fingerprints"],
        &["-p", "3", "--chunk-size", "8", "-t", "200"],
        &["--fingerprint-bits", "32"],
    ] {
        round_trip(SAMPLE, flags);
    }
}

#[test]
fn round_trip_edge_inputs() {
    for input in [
        &b""[..],
        b"\n",
        b"\n\n\n",
        b"no newline at end",
        b"x",
        b"a\r\nb\r\n",
    ] {
        round_trip(input, &[]);
        round_trip(input, &["--no-rl", "--no-simp"]);
    }
}

#[test]
fn round_trip_raw_mode() {
    let input = b"ACGT\0\0ACGTACGT\0TTTT";
    round_trip(input, &["-m", "raw", "--sep", "0"]);
    round_trip(b"a,b,,c,", &["-m", "raw", "--sep", ","]);
}

#[test]
fn merge_concatenates_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    fs::write(&a, b"one\n\ntwo\nthree\n").unwrap();
    fs::write(&b, b"two\nfour\n\n").unwrap();
    for f in [&a, &b] {
        let out = lcgram(&["compress", p(f), "--no-rl", "--no-simp"]);
        assert!(out.status.success());
    }
    let ga = dir.path().join("a.txt.lcg");
    let gb = dir.path().join("b.txt.lcg");
    let merged = dir.path().join("ab.lcg");
    let out = lcgram(&["merge", p(&ga), p(&gb), "-o", p(&merged)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = lcgram(&["decompress", p(&merged)]);
    assert!(out.status.success());
    assert_eq!(out.stdout, b"one\n\ntwo\nthree\ntwo\nfour\n\n");
}

#[test]
fn merge_rejects_different_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.txt");
    fs::write(&src, SAMPLE).unwrap();
    let g1 = dir.path().join("1.lcg");
    let g2 = dir.path().join("2.lcg");
    assert!(lcgram(&[
        "compress",
        p(&src),
        "--no-rl",
        "--no-simp",
        "-s",
        "1",
        "-o",
        p(&g1)
    ])
    .status
    .success());
    assert!(lcgram(&[
        "compress",
        p(&src),
        "--no-rl",
        "--no-simp",
        "-s",
        "2",
        "-o",
        p(&g2)
    ])
    .status
    .success());
    let out = lcgram(&["merge", p(&g1), p(&g2), "-o", p(&dir.path().join("m.lcg"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed mismatch"));
}

#[test]
fn merge_rejects_final_format() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.txt");
    fs::write(&src, SAMPLE).unwrap();
    assert!(lcgram(&["compress", p(&src)]).status.success());
    let g = dir.path().join("a.txt.lcg");
    let out = lcgram(&["merge", p(&g), p(&g), "-o", p(&dir.path().join("m.lcg"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("never-created");
    for args in [
        vec!["compress", p(&missing), "-p", "0"],
        vec!["compress", p(&missing), "-t", "0"],
        vec!["compress", p(&missing), "-m", "raw"],
        vec!["compress", p(&missing), "--sep", "0"],
        vec!["compress", p(&missing), "-s", "banana"],
        vec!["frobnicate"],
    ] {
        let out = lcgram(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert!(!missing.exists());
}

#[test]
fn data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.lcg");
    fs::write(&junk, b"definitely not a grammar").unwrap();
    assert_eq!(lcgram(&["decompress", p(&junk)]).status.code(), Some(1));
    assert_eq!(lcgram(&["verify", p(&junk)]).status.code(), Some(1));
    assert_eq!(
        lcgram(&["stats", p(&dir.path().join("absent"))]).status.code(),
        Some(1)
    );
}

#[test]
fn verify_detects_wrong_original() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.txt");
    let other = dir.path().join("b.txt");
    fs::write(&src, SAMPLE).unwrap();
    fs::write(&other, b"something else\n").unwrap();
    assert!(lcgram(&["compress", p(&src)]).status.success());
    let g = dir.path().join("a.txt.lcg");
    assert_eq!(
        lcgram(&["verify", p(&g), "--original", p(&other)]).status.code(),
        Some(1)
    );
}

#[test]
fn stats_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.txt");
    let mut text = Vec::new();
    for i in 0..200 {
        text.extend_from_slice(format!("record {} of a fairly repetitive file\n", i % 17).as_bytes());
    }
    fs::write(&src, &text).unwrap();
    assert!(lcgram(&["compress", p(&src), "--no-rl", "--no-simp"])
        .status
        .success());
    let g = dir.path().join("a.txt.lcg");
    let out = lcgram(&["stats", p(&g)]);
    assert!(out.status.success());
    let m = stats_map(&out);
    let height: usize = get(&m, "height").parse().unwrap();
    let per_level: Vec<(usize, usize)> = (1..height)
        .map(|i| {
            (
                get(&m, &format!("g{i}")).parse().unwrap(),
                get(&m, &format!("G{i}")).parse().unwrap(),
            )
        })
        .collect();
    let g_total: usize = get(&m, "g").parse().unwrap();
    let size_total: usize = get(&m, "G").parse().unwrap();
    assert_eq!(per_level.iter().map(|x| x.0).sum::<usize>(), g_total);
    assert_eq!(per_level.iter().map(|x| x.1).sum::<usize>(), size_total);
    assert_eq!(
        per_level.iter().map(|x| x.0).max().unwrap(),
        get(&m, "max_g_level").parse::<usize>().unwrap()
    );
    assert_eq!(
        per_level.iter().map(|x| x.1).max().unwrap(),
        get(&m, "max_G_level").parse::<usize>().unwrap()
    );
    assert_eq!(get(&m, "k"), "200");
    assert_eq!(get(&m, "file_bytes"), fs::metadata(&g).unwrap().len().to_string());

    assert!(lcgram(&["compress", p(&src), "-o", p(&dir.path().join("f.lcg"))])
        .status
        .success());
    let m = stats_map(&lcgram(&["stats", p(&dir.path().join("f.lcg"))]));
    assert_eq!(get(&m, "format"), "final");
    assert!(get(&m, "g").parse::<usize>().unwrap() <= g_total);
}

#[test]
fn default_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.txt");
    fs::write(&src, SAMPLE).unwrap();
    let g1 = dir.path().join("1.lcg");
    let g2 = dir.path().join("2.lcg");
    assert!(lcgram(&["compress", p(&src), "-p", "1", "-o", p(&g1)])
        .status
        .success());
    assert!(
        lcgram(&["compress", p(&src), "-p", "4", "--chunk-size", "3", "-o", p(&g2)])
            .status
            .success()
    );
    assert_eq!(fs::read(&g1).unwrap(), fs::read(&g2).unwrap());
    let extra = ["--no-rl", "--no-simp"];
    assert!(
        lcgram(&[&["compress", p(&src), "-p", "1", "-o", p(&g1)][..], &extra].concat())
            .status
            .success()
    );
    assert!(lcgram(
        &[
            &["compress", p(&src), "-p", "4", "--chunk-size", "3", "-o", p(&g2)][..],
            &extra
        ]
        .concat()
    )
    .status
    .success());
    assert_eq!(fs::read(&g1).unwrap(), fs::read(&g2).unwrap());
}

#[test]
fn stdin_to_stdout() {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new(env!("CARGO_BIN_EXE_lcgram"))
        .args(["compress", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(SAMPLE).unwrap();
    let gram = child.wait_with_output().unwrap();
    assert!(gram.status.success());
    let mut child = Command::new(env!("CARGO_BIN_EXE_lcgram"))
        .args(["decompress", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&gram.stdout).unwrap();
    let back = child.wait_with_output().unwrap();
    assert_eq!(back.stdout, SAMPLE);
}
