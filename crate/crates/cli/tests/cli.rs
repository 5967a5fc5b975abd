use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sympaint::coarse::{diffusion_fill, CoarseFillParams};
use sympaint::io::{read_image, read_tensor, write_tensor};
use sympaint::maskgen::{random_irregular_mask, MaskGenParams};
use sympaint::net::{compact_layout, save_network, NetworkSpec};
use sympaint::phantom::{brain_phantom, PhantomParams};
use sympaint::register::DisplacementField;
use sympaint::tensor::Tensor;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sympaint"))
        .args(args)
        .output()
        .expect("spawn sympaint")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    image: PathBuf,
    mask: PathBuf,
    weights: PathBuf,
}

fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let image = dir.path().join("phantom.sft");
    let mask = dir.path().join("mask.sft");
    let weights = dir.path().join("net.sfw");
    write_tensor(
        &image,
        &brain_phantom(&PhantomParams::default()).to_tensor(),
    )
    .unwrap();
    let m = random_irregular_mask(
        64,
        64,
        &MaskGenParams {
            seed: 1,
            coverage: 0.2,
            ..Default::default()
        },
    )
    .unwrap();
    write_tensor(&mask, &m.to_image().to_tensor()).unwrap();
    save_network(
        &weights,
        &NetworkSpec::random(1, &compact_layout(), 7).unwrap(),
    )
    .unwrap();
    Fixture {
        dir,
        image,
        mask,
        weights,
    }
}

fn inpaint(f: &Fixture, out: &str, extra: &[&str]) -> PathBuf {
    let out_dir = f.dir.path().join(out);
    let mut args = vec![
        "inpaint",
        "--input",
        s(&f.image),
        "--mask",
        s(&f.mask),
        "--weights",
        s(&f.weights),
        "--out-dir",
        s(&out_dir),
        "--max-iters",
        "60",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out_dir
}

#[test]
fn inpaint_writes_artifacts_and_keeps_context() {
    let f = fixture();
    let out = inpaint(&f, "out", &["--dump-features"]);
    for name in [
        "coarse.sft",
        "coarse.png",
        "inpainted.sft",
        "inpainted.png",
        "energy.csv",
        "timings.csv",
        "features.sft",
        "swapped_features.sft",
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let input = read_tensor(&f.image).unwrap();
    let mask = read_tensor(&f.mask).unwrap();
    let result = read_tensor(out.join("inpainted.sft")).unwrap();
    assert_eq!(result.dims(), input.dims());
    for ((r, i), m) in result.data().iter().zip(input.data()).zip(mask.data()) {
        if *m == 0.0 {
            assert_eq!(r.to_bits(), i.to_bits());
        }
    }
    assert_eq!(
        read_tensor(out.join("features.sft")).unwrap().dims(),
        [32, 16, 16]
    );
    let energy = fs::read_to_string(out.join("energy.csv")).unwrap();
    assert!(energy.starts_with("iteration,total,perceptual,sym,best_so_far"));
    assert!(energy.lines().count() > 2);
}

#[test]
fn missing_weights_exit_2() {
    let f = fixture();
    let out = run(&[
        "inpaint",
        "--input",
        s(&f.image),
        "--mask",
        s(&f.mask),
        "--weights",
        "absent.sfw",
        "--out-dir",
        s(f.dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights not found"));
}

#[test]
fn usage_and_runtime_exit_codes() {
    assert_eq!(run(&["inpaint", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["inpaint"]).status.code(), Some(2));
    let f = fixture();
    let bad_step = run(&[
        "inpaint",
        "--input",
        s(&f.image),
        "--mask",
        s(&f.mask),
        "--weights",
        s(&f.weights),
        "--out-dir",
        s(f.dir.path()),
        "--step-size",
        "-1",
    ]);
    assert_eq!(bad_step.status.code(), Some(2));
    let garbage = f.dir.path().join("garbage.sft");
    fs::write(&garbage, b"SFT1\x01").unwrap();
    let corrupt = run(&[
        "metrics",
        "--result",
        s(&garbage),
        "--reference",
        s(&f.image),
    ]);
    assert_eq!(corrupt.status.code(), Some(1));
}

#[test]
fn skip_refine_outputs_the_coarse_fill() {
    let f = fixture();
    let out = inpaint(&f, "coarse_only", &["--skip-refine"]);
    let result = read_tensor(out.join("inpainted.sft")).unwrap();
    assert_eq!(result, read_tensor(out.join("coarse.sft")).unwrap());
    let img = read_image(&f.image).unwrap();
    let mask = sympaint::io::read_mask(&f.mask).unwrap();
    let expected = diffusion_fill(&img, &mask, &CoarseFillParams::default()).unwrap();
    assert_eq!(result, expected.to_tensor());
    assert!(!out.join("energy.csv").exists());
}

#[test]
fn deterministic_across_runs_and_thread_counts() {
    let f = fixture();
    let a = inpaint(&f, "a", &[]);
    let b = inpaint(&f, "b", &["--threads", "2"]);
    for name in ["inpainted.sft", "coarse.sft", "energy.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn config_file_with_flag_override() {
    let f = fixture();
    let cfg = f.dir.path().join("run.cfg");
    let out_dir = f.dir.path().join("from_cfg");
    fs::write(
        &cfg,
        format!(
            "# inpainting run\ninput = {}\nmask = {}\nweights = {}\nout-dir = {}\nmax_iters = 500\nlambda_sym = 1.0\n",
            s(&f.image),
            s(&f.mask),
            s(&f.weights),
            s(&out_dir)
        ),
    )
    .unwrap();
    ok(&["inpaint", "--config", s(&cfg), "--max-iters", "5"]);
    let rows = fs::read_to_string(out_dir.join("energy.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert!(rows <= 5, "{rows} iterates despite --max-iters 5");

    fs::write(&cfg, "input = x\nlamda_sym = 2\n").unwrap();
    let out = run(&["inpaint", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key lamda_sym"));
}

#[test]
fn metrics_on_identical_files() {
    let f = fixture();
    let csv = f.dir.path().join("metrics.csv");
    let stdout = ok(&[
        "metrics",
        "--result",
        s(&f.image),
        "--reference",
        s(&f.image),
        "--mask",
        s(&f.mask),
        "--csv",
        s(&csv),
        "--image-name",
        "p0",
        "--method",
        "identity",
    ]);
    assert!(stdout.contains("mean_l1_hole: 0\n"));
    assert!(stdout.contains("ssim: 1\n"));
    assert!(stdout.contains("psnr_db: inf\n"));
    ok(&[
        "metrics",
        "--result",
        s(&f.image),
        "--reference",
        s(&f.image),
        "--weights",
        s(&f.weights),
        "--csv",
        s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[0],
        "image,method,mean_l1_hole,mean_l1_hole_x255,ssim,psnr_db,perceptual,mi_nats"
    );
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&first[..6], ["p0", "identity", "0", "0", "1", "inf"]);
    assert_eq!(first[6], "");
    let second: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(second[6], "0");
}

#[test]
fn maskgen_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    let c = dir.path().join("c.png");
    for (path, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        ok(&[
            "maskgen",
            "--height",
            "64",
            "--width",
            "48",
            "--seed",
            seed,
            "--coverage",
            "0.25",
            "--out",
            s(path),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let m = sympaint::io::read_mask(&a).unwrap();
    assert_eq!(m.dims(), (64, 48));
    assert!((0.2..=0.3).contains(&m.hole_fraction()));

    let labels = dir.path().join("labels.sft");
    write_tensor(
        &labels,
        &Tensor::new(vec![2, 3], vec![0., 1., 4., 2., 4., 0.]).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("tumor.sft");
    ok(&[
        "maskgen",
        "--labels",
        s(&labels),
        "--hole-labels",
        "1,4",
        "--out",
        s(&out),
    ]);
    assert_eq!(read_tensor(&out).unwrap().data(), [0., 1., 1., 0., 1., 0.]);

    assert_eq!(run(&["maskgen", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(
        run(&[
            "maskgen",
            "--height",
            "64",
            "--width",
            "64",
            "--coverage",
            "0.9",
            "--out",
            s(&out)
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn register_shifted_phantom() {
    let dir = TempDir::new().unwrap();
    let fixed = brain_phantom(&PhantomParams {
        noise: 0.0,
        seed: 4,
        ..Default::default()
    });
    let shift = DisplacementField::new(64, 64, vec![2.0; 64 * 64], vec![0.0; 64 * 64]).unwrap();
    let moving = sympaint::register::warp(&fixed, &shift).unwrap();
    let (fp, mp) = (dir.path().join("fixed.sft"), dir.path().join("moving.sft"));
    write_tensor(&fp, &fixed.to_tensor()).unwrap();
    write_tensor(&mp, &moving.to_tensor()).unwrap();
    let out = dir.path().join("reg");
    ok(&[
        "register",
        "--fixed",
        s(&fp),
        "--moving",
        s(&mp),
        "--out-dir",
        s(&out),
    ]);
    let field = read_tensor(out.join("field.sft")).unwrap();
    assert_eq!(field.dims(), [2, 64, 64]);
    let csv = fs::read_to_string(out.join("registration.csv")).unwrap();
    let vals: Vec<f64> = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(vals[1] > vals[0], "MI did not improve: {vals:?}");
}

#[test]
fn register_comparison_table() {
    let dir = TempDir::new().unwrap();
    let (atlas, patient, mask) = (
        dir.path().join("atlas.sft"),
        dir.path().join("patient.sft"),
        dir.path().join("lesion.sft"),
    );
    ok(&["phantom", "--out", s(&atlas), "--seed", "3", "--noise", "0"]);
    ok(&[
        "phantom",
        "--out",
        s(&patient),
        "--seed",
        "3",
        "--lesion-seed",
        "5",
        "--lesion-mask",
        s(&mask),
    ]);
    let out = dir.path().join("cmp");
    ok(&[
        "register",
        "--fixed",
        s(&atlas),
        "--moving",
        s(&patient),
        "--mask",
        s(&mask),
        "--inpainted",
        s(&atlas),
        "--out-dir",
        s(&out),
        "--iterations",
        "20",
    ]);
    let csv = fs::read_to_string(out.join("registration.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "Methods,Sub1,Mean");
    assert!(lines[1].starts_with("Direct registration,"));
    assert!(lines[2].starts_with("Inpainted registration,"));
    assert!(out.join("direct_field.sft").is_file() && out.join("inpainted_field.sft").is_file());
}

#[test]
fn bench_reports_speedup() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("bench.csv");
    let stdout = ok(&["bench", "--out", s(&csv), "--threads", "1"]);
    let text = fs::read_to_string(&csv).unwrap();
    let secs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(text.starts_with("stage,seconds\nswap_naive,"));
    assert!(secs[0] / secs[1] > 5.0, "{stdout}");

    ok(&[
        "bench",
        "--out",
        s(&csv),
        "--channels",
        "8",
        "--height",
        "32",
        "--width",
        "32",
        "--repeats",
        "1",
        "--pipeline-size",
        "32",
    ]);
    let stages: Vec<String> = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(
        stages,
        [
            "swap_naive",
            "swap_fast",
            "coarse",
            "features",
            "swap",
            "inversion"
        ]
    );
}

#[test]
fn weights_random_and_inspect() {
    let dir = TempDir::new().unwrap();
    let w = dir.path().join("vgg.sfw");
    ok(&["weights", "random", "--out", s(&w), "--seed", "1"]);
    let stdout = ok(&["weights", "inspect", s(&w)]);
    assert!(
        stdout.contains("features for 240x240: 256x60x60"),
        "{stdout}"
    );
    assert!(stdout.contains("input channels: 3"));
    assert_eq!(stdout.lines().filter(|l| l.contains("conv")).count(), 5);
    let missing = run(&["weights", "inspect", "absent.sfw"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("weights not found"));
}
