use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use tvc_core::compose::LowRankModule;
use tvc_core::{codec, compress, decompose, merge, tensor_store, DType, Group, MergeSpec, TaskVector};

fn tvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvc")).args(args).output().expect("spawn tvc")
}

fn ok(args: &[&str]) -> String {
    let out = tvc(args);
    assert!(
        out.status.success(),
        "tvc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn random_groups(seed: u64, layout: &[(&str, Vec<usize>)]) -> TaskVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = layout
        .iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            Group::new(*name, shape.clone(), (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        })
        .collect();
    TaskVector::new(groups).unwrap()
}

fn dense_layout() -> Vec<(&'static str, Vec<usize>)> {
    vec![("embed", vec![16, 12]), ("head.weight", vec![40]), ("scalar", vec![])]
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture { dir: TempDir::new().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, tv: &TaskVector) -> PathBuf {
        let p = self.path(name);
        tensor_store::save_container(tv, DType::F32, &p).unwrap();
        p
    }
}

#[test]
fn diff_compress_decompress_round_trip() {
    let fx = Fixture::new();
    let init = random_groups(1, &dense_layout());
    let ft = random_groups(2, &dense_layout());
    let (pi, pf) = (fx.write("init.tvc", &init), fx.write("ft.tvc", &ft));
    let tau_path = fx.path("tau.tvc");
    ok(&["diff", s(&pf), s(&pi), "-o", s(&tau_path)]);

    let expected_tau = decompose::task_vector(&ft, &init).unwrap();
    let tau = tensor_store::load_container(&tau_path).unwrap();
    assert_eq!(tau, expected_tau);

    let art = fx.path("tau.cpt");
    ok(&["compress", s(&tau_path), "-k", "20", "--alpha", "2", "-o", s(&art)]);
    let expected = compress::compress(&expected_tau, 20.0, 2.0).unwrap();
    assert_eq!(std::fs::read(&art).unwrap(), codec::encode_bytes(&expected, codec::Format::Golomb));

    let back = fx.path("back.tvc");
    ok(&["decompress", s(&art), "-o", s(&back), "--like", s(&tau_path)]);
    let back = tensor_store::load_container(&back).unwrap();
    let oracle = compress::reconstruct(&expected).unwrap();
    for (b, o) in back.groups().iter().zip(oracle.groups()) {
        assert_eq!(b.data, o.data);
    }
    assert_eq!(back.get("embed").unwrap().shape, vec![16, 12]);
    assert_eq!(back.get("scalar").unwrap().shape, Vec::<usize>::new());

    let flat = fx.path("flat.tvc");
    ok(&["decompress", s(&art), "-o", s(&flat)]);
    assert_eq!(tensor_store::load_container(&flat).unwrap().get("embed").unwrap().shape, vec![192]);
}

#[test]
fn pooled_sigma_flag() {
    let fx = Fixture::new();
    let tau = random_groups(3, &dense_layout());
    let p = fx.write("tau.tvc", &tau);
    let art = fx.path("a.cpt");
    ok(&["compress", s(&p), "-k", "50", "--alpha", "1", "--pooled-sigma", "-o", s(&art)]);
    let ca = codec::decode(&std::fs::read(&art).unwrap()).unwrap();
    let sigma = decompose::pooled_sigma(&tau);
    assert!(ca.tensors.iter().filter(|t| t.nnz() > 0).all(|t| t.scale == sigma));
}

#[test]
fn pack_unpack_is_lossless() {
    let fx = Fixture::new();
    let p = fx.write("tau.tvc", &random_groups(4, &dense_layout()));
    let art = fx.path("a.cpt");
    ok(&["compress", s(&p), "-k", "10", "--alpha", "3", "-o", s(&art)]);
    let packed = fx.path("a.bits");
    ok(&["pack", s(&art), "--format", "bitmask", "-o", s(&packed)]);
    assert!(ok(&["inspect", s(&packed)]).contains("bitmask"));
    let unpacked = fx.path("b.cpt");
    ok(&["unpack", s(&packed), "-o", s(&unpacked)]);
    assert_eq!(std::fs::read(&art).unwrap(), std::fs::read(&unpacked).unwrap());
}

#[test]
fn inspect_stats_and_size() {
    let fx = Fixture::new();
    let tau = random_groups(5, &dense_layout());
    let p = fx.write("tau.tvc", &tau);
    let out = ok(&["inspect", s(&p)]);
    assert!(out.contains("embed\t[16, 12]\tf32"));

    let out = ok(&["stats", s(&p)]);
    let pooled = out.lines().find(|l| l.starts_with("POOLED")).unwrap();
    let count: usize = pooled.split('\t').nth(1).unwrap().parse().unwrap();
    assert_eq!(count, tau.dim());

    let art = fx.path("a.cpt");
    ok(&["compress", s(&p), "-k", "5", "--alpha", "1", "-o", s(&art)]);
    let out = ok(&["size", s(&art)]);
    let field = |key: &str| -> f64 {
        let line = out.lines().find(|l| l.starts_with(&format!("{key}\t"))).unwrap();
        line.split('\t').nth(1).unwrap().parse().unwrap()
    };
    let blob = codec::parse_blob(&std::fs::read(&art).unwrap()).unwrap().0;
    assert_eq!(field("payload_bits") as u64, blob.measured_size_bits());
    assert_eq!(field("dense16_bits") as u64, 16 * tau.dim() as u64);
    assert!(field("compression_vs_dense16") > 1.0);
}

#[test]
fn similarity_of_an_artifact_with_itself() {
    let fx = Fixture::new();
    let p = fx.write("tau.tvc", &random_groups(6, &dense_layout()));
    let art = fx.path("a.cpt");
    ok(&["compress", s(&p), "-k", "30", "--alpha", "1", "-o", s(&art)]);
    let ca = codec::decode(&std::fs::read(&art).unwrap()).unwrap();
    let out = ok(&["similarity", s(&art), s(&art)]);
    let total: Vec<&str> = out.lines().last().unwrap().split('\t').collect();
    assert_eq!(total[0], "TOTAL");
    let dot: f64 = total[1].parse().unwrap();
    let want: f64 = ca.tensors.iter().map(|t| t.nnz() as f64 * (t.scale as f64).powi(2)).sum();
    assert!((dot - want).abs() <= 1e-6 * want);
    assert_eq!(total[2], "0");
    assert_eq!(total[3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn merge_matches_library() {
    let fx = Fixture::new();
    let a = random_groups(7, &dense_layout());
    let b = random_groups(8, &dense_layout());
    let (pa, pb) = (fx.write("a.tvc", &a), fx.write("b.tvc", &b));
    let out = fx.path("m.tvc");
    ok(&["merge", "--method", "ties", "--lambda", "1.3", "--trim", "40", s(&pa), s(&pb), "-o", s(&out)]);
    let spec = MergeSpec {
        lambda: 1.3,
        trim_density: 40.0,
        ..MergeSpec::new(tvc_core::MergeMethod::Ties)
    };
    assert_eq!(tensor_store::load_container(&out).unwrap(), merge::merge(&[a.clone(), b], &spec).unwrap());

    // artifacts are reconstructed before merging
    let art = fx.path("a.cpt");
    ok(&["compress", s(&pa), "-k", "20", "--alpha", "1", "-o", s(&art)]);
    ok(&["merge", "--method", "average", s(&art), s(&art), "-o", s(&out)]);
    let rec = compress::reconstruct(&compress::compress(&a, 20.0, 1.0).unwrap()).unwrap();
    let merged = tensor_store::load_container(&out).unwrap();
    for (m, r) in merged.groups().iter().zip(rec.groups()) {
        assert_eq!(m.data, r.data);
    }
    assert!(!tvc(&["merge", "--method", "median", s(&pa), "-o", s(&out)]).status.success());
}

fn lora_layout() -> Vec<(&'static str, Vec<usize>)> {
    vec![("l0.lora_A", vec![2, 6]), ("l0.lora_B", vec![5, 2])]
}

#[test]
fn compose_with_fixed_weights() {
    let fx = Fixture::new();
    let m1 = random_groups(9, &lora_layout());
    let m2 = random_groups(10, &lora_layout());
    let (p1, p2) = (fx.write("m1.tvc", &m1), fx.write("m2.tvc", &m2));
    let w = fx.path("w.json");
    std::fs::write(&w, "[1.0, 0.0]").unwrap();
    let out = fx.path("c.tvc");
    ok(&["compose", "--weights", s(&w), s(&p1), s(&p2), "-o", s(&out)]);
    assert_eq!(tensor_store::load_container(&out).unwrap(), m1);

    std::fs::write(&w, "[0.5, -2.0]").unwrap();
    ok(&["compose", "--weights", s(&w), s(&p1), s(&p2), "-o", s(&out)]);
    let got = tensor_store::load_container(&out).unwrap();
    for ((g, a), b) in got.groups().iter().zip(m1.groups()).zip(m2.groups()) {
        for ((x, y), z) in g.data.iter().zip(&a.data).zip(&b.data) {
            assert_eq!(*x, (0.5 * *y as f64 - 2.0 * *z as f64) as f32);
        }
    }

    // artifacts need a rank to recover matrix shapes
    let art = fx.path("m1.cpt");
    ok(&["compress", s(&p1), "-k", "50", "--alpha", "1", "-o", s(&art)]);
    std::fs::write(&w, "[1.0]").unwrap();
    assert!(!tvc(&["compose", "--weights", s(&w), s(&art), "-o", s(&out)]).status.success());
    ok(&["compose", "--weights", s(&w), s(&art), "-o", s(&out), "--rank", "2"]);
    assert!(LowRankModule::from_task_vector(&tensor_store::load_container(&out).unwrap()).is_ok());
}

#[test]
fn compose_opt_minimizes_external_loss() {
    let fx = Fixture::new();
    let (p1, p2) = (
        fx.write("m1.tvc", &random_groups(11, &lora_layout())),
        fx.write("m2.tvc", &random_groups(12, &lora_layout())),
    );
    let out = fx.path("c.tvc");
    let loss = r#"awk -F'[][,]' '{ print ($2 - 0.5) ^ 2 + ($3 + 0.25) ^ 2 }'"#;
    let stdout = ok(&["compose-opt", "--budget", "120", "--seed", "3", "--loss-cmd", loss, s(&p1), s(&p2), "-o", s(&out)]);
    let w: Vec<f64> = serde_json::from_str(stdout.trim()).unwrap();
    assert!((w[0] - 0.5).abs() < 0.05 && (w[1] + 0.25).abs() < 0.05, "{w:?}");
    assert!(out.exists());

    let bad = tvc(&["compose-opt", "--budget", "20", "--loss-cmd", "echo nope", s(&p1), "-o", s(&out)]);
    assert!(!bad.status.success());
}

#[test]
fn sweep_writes_every_cell() {
    let fx = Fixture::new();
    let p = fx.write("tau.tvc", &random_groups(13, &dense_layout()));
    let csv = fx.path("r.csv");
    // the score is the scale, so the largest alpha wins
    let stdout = ok(&[
        "sweep", s(&p), "--scorer-cmd", "cat > /dev/null; echo $TVC_ALPHA",
        "--k", "5,20", "--alpha", "0.5,2,4", "-o", s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,alpha,score,size_bits");
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[1].split(',').take(2).collect::<Vec<_>>(), ["5", "0.5"]);
    assert!(stdout.contains("k=5\talpha=4"), "{stdout}");

    // the scorer sees a decodable blob
    let size = ok(&["sweep", s(&p), "--scorer-cmd", "wc -c", "--k", "50", "--alpha", "1", "-o", s(&csv)]);
    let bytes: f64 = size.split("score=").nth(1).unwrap().split('\t').next().unwrap().parse().unwrap();
    let tau = tensor_store::load_container(&p).unwrap();
    let blob = codec::encode_bytes(&compress::compress(&tau, 50.0, 1.0).unwrap(), codec::Format::Golomb);
    assert_eq!(bytes as usize, blob.len());

    assert!(!tvc(&["sweep", s(&p), "--scorer-cmd", "exit 3", "--k", "5", "--alpha", "1", "-o", s(&csv)]).status.success());
}

#[test]
fn bench_prints_a_row() {
    let fx = Fixture::new();
    let p = fx.write("tau.tvc", &random_groups(14, &dense_layout()));
    let out = ok(&["bench", s(&p), "--trials", "3"]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[2], "decode");
    assert_eq!(row[3], "3");
    assert!(ok(&["bench", s(&p), "--trials", "2", "--read-only"]).contains("\tread\t"));
    assert!(!tvc(&["bench", s(&p), "--trials", "0"]).status.success());
}

#[test]
fn garbage_input_is_rejected() {
    let fx = Fixture::new();
    let p = fx.path("junk");
    std::fs::write(&p, b"not a tensor file").unwrap();
    for cmd in ["inspect", "stats", "size"] {
        let out = tvc(&[cmd, s(&p)]);
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}
